#pragma once
// Procedural datasets: the imbalanced radial 2-D toy problem and a miniature
// imbalanced shapes segmentation task.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "gauda/rng.hpp"
#include "gauda/sample.hpp"
#include "gauda/serialize.hpp"
#include "gauda/tensor.hpp"

namespace gauda {

struct Split {
  std::vector<std::size_t> train, val, test;
};

inline void to_json(nlohmann::json& j, const Split& s) {
  j = nlohmann::json{{"train", s.train}, {"val", s.val}, {"test", s.test}};
}
inline void from_json(const nlohmann::json& j, Split& s) {
  j.at("train").get_to(s.train);
  j.at("val").get_to(s.val);
  j.at("test").get_to(s.test);
}

/// 90/5/5 split: ⌊0.9n⌋ train, ⌊0.05n⌋ val, the rest test. Samples are ordered
/// so every prefix is stratified by `strata` before cutting.
inline Split split_90_5_5(const std::vector<int>& strata, RngStream& rng) {
  const std::size_t n = strata.size();
  int max_s = 0;
  for (int s : strata) max_s = std::max(max_s, s);
  std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(max_s) + 1);
  for (std::size_t i = 0; i < n; ++i) groups[static_cast<std::size_t>(strata[i])].push_back(i);
  // Within a stratum of size m, the r-th shuffled member gets key (r + u)/m.
  std::vector<std::pair<double, std::size_t>> keyed;
  keyed.reserve(n);
  for (auto& g : groups) {
    rng.shuffle(g);
    for (std::size_t r = 0; r < g.size(); ++r)
      keyed.emplace_back((static_cast<double>(r) + rng.uniform()) / static_cast<double>(g.size()), g[r]);
  }
  std::sort(keyed.begin(), keyed.end());
  const std::size_t n_train = n * 90 / 100, n_val = n * 5 / 100;
  Split s;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? s.train : (i < n_train + n_val ? s.val : s.test);
    dst.push_back(keyed[i].second);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Radial 2-D toy problem.

struct Toy2DSpec {
  std::size_t n_major = 1000;   // points in class 0 (inside the threshold radius)
  double imbalance = 0.1;       // n_minor / n_major, class 1 (outside)
  double noise_sigma = 0.15;
  double threshold = 1.0;
  double outer_radius = 2.0;

  std::size_t n_minor() const { return static_cast<std::size_t>(std::llround(imbalance * static_cast<double>(n_major))); }
};

inline void to_json(nlohmann::json& j, const Toy2DSpec& s) {
  j = nlohmann::json{{"n_major", s.n_major},     {"imbalance", s.imbalance},       {"noise_sigma", s.noise_sigma},
                     {"threshold", s.threshold}, {"outer_radius", s.outer_radius}};
}
inline void from_json(const nlohmann::json& j, Toy2DSpec& s) {
  s.n_major = j.value("n_major", s.n_major);
  s.imbalance = j.value("imbalance", s.imbalance);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.threshold = j.value("threshold", s.threshold);
  s.outer_radius = j.value("outer_radius", s.outer_radius);
}

struct Toy2DData {
  Tensor points;  // N×2
  std::vector<int> labels;
  Split split;
};

inline void validate(const Toy2DSpec& s) {
  if (s.noise_sigma < 0.0) throw std::invalid_argument("toy2d: noise sigma must be non-negative");
  if (!(s.imbalance > 0.0 && s.imbalance <= 1.0)) throw std::invalid_argument("toy2d: imbalance ratio must be in (0,1]");
  if (!(s.threshold > 0.0 && s.threshold < s.outer_radius)) throw std::invalid_argument("toy2d: need 0 < threshold < outer radius");
  if (s.n_major < 20 || s.n_minor() < 20) throw std::invalid_argument("toy2d: need at least 20 points per class");
}

/// One noisy point of class `label`: radius drawn uniformly by area within the
/// class annulus, the label fixed before noise is added.
inline std::vector<double> toy2d_point(const Toy2DSpec& s, int label, RngStream& rng) {
  const double r0 = label == 0 ? 0.0 : s.threshold;
  const double r1 = label == 0 ? s.threshold : s.outer_radius;
  const double r = std::sqrt(rng.uniform(r0 * r0, r1 * r1));
  const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return {r * std::cos(a) + s.noise_sigma * rng.normal(), r * std::sin(a) + s.noise_sigma * rng.normal()};
}

inline Toy2DData gen_toy2d(const Toy2DSpec& spec, RngStream& rng) {
  validate(spec);
  const std::size_t n = spec.n_major + spec.n_minor();
  Toy2DData d{Tensor({n, 2}), {}, {}};
  RngStream pts = rng.split(1), split_rng = rng.split(2);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = i < spec.n_major ? 0 : 1;
    auto p = toy2d_point(spec, label, pts);
    d.points(i, 0) = p[0];
    d.points(i, 1) = p[1];
    d.labels.push_back(label);
  }
  d.split = split_90_5_5(d.labels, split_rng);
  return d;
}

inline std::vector<Example> toy2d_examples(const Toy2DData& d, const std::vector<std::size_t>& ids) {
  std::vector<Example> out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(point_example({d.points(i, 0), d.points(i, 1)}, d.labels[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Shapes segmentation task.

enum class ShapeKind { background, disk, bar, rectangle };

inline std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::background: return "background";
    case ShapeKind::disk: return "disk";
    case ShapeKind::bar: return "bar";
    case ShapeKind::rectangle: return "rectangle";
  }
  return "?";
}

inline ShapeKind shape_kind_from(const std::string& s) {
  if (s == "background") return ShapeKind::background;
  if (s == "disk") return ShapeKind::disk;
  if (s == "bar") return ShapeKind::bar;
  if (s == "rectangle") return ShapeKind::rectangle;
  throw std::invalid_argument("unknown shape kind '" + s + "'");
}

struct ShapeClass {
  ShapeKind kind = ShapeKind::background;
  double intensity = 0.0;
  double occurrence = 1.0;
};

struct ShapesSegSpec {
  std::size_t height = 8;
  std::size_t width = 8;
  // Class 0 is the background; later classes paint over earlier ones.
  std::vector<ShapeClass> classes = {{ShapeKind::background, 0.10, 1.00},
                                     {ShapeKind::disk, 0.40, 0.70},
                                     {ShapeKind::bar, 0.65, 0.60},
                                     {ShapeKind::rectangle, 0.90, 0.05}};
  double noise_sigma = 0.08;
  std::size_t count = 4000;

  std::size_t num_classes() const { return classes.size(); }
};

inline void to_json(nlohmann::json& j, const ShapeClass& c) {
  j = nlohmann::json{{"kind", to_string(c.kind)}, {"intensity", c.intensity}, {"occurrence", c.occurrence}};
}
inline void from_json(const nlohmann::json& j, ShapeClass& c) {
  c.kind = shape_kind_from(j.at("kind").get<std::string>());
  c.intensity = j.at("intensity").get<double>();
  c.occurrence = j.value("occurrence", 1.0);
}
inline void to_json(nlohmann::json& j, const ShapesSegSpec& s) {
  j = nlohmann::json{{"height", s.height},           {"width", s.width}, {"classes", s.classes},
                     {"noise_sigma", s.noise_sigma}, {"count", s.count}};
}
inline void from_json(const nlohmann::json& j, ShapesSegSpec& s) {
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  if (j.contains("classes")) j.at("classes").get_to(s.classes);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.count = j.value("count", s.count);
}

struct SegDataset {
  ShapesSegSpec spec;
  std::vector<PairedSample> samples;
  Split split;

  std::size_t num_classes() const { return spec.num_classes(); }

  /// Number of training samples whose mask contains each class.
  std::vector<std::size_t> histogram() const {
    std::vector<std::size_t> f(num_classes(), 0);
    for (auto i : split.train)
      for (int c : samples[i].presence) ++f[static_cast<std::size_t>(c)];
    return f;
  }

  std::vector<Example> examples(const std::vector<std::size_t>& ids) const {
    std::vector<Example> out;
    out.reserve(ids.size());
    for (auto i : ids) out.push_back(to_example(samples[i]));
    return out;
  }

  std::vector<PairedSample> subset(const std::vector<std::size_t>& ids) const {
    std::vector<PairedSample> out;
    out.reserve(ids.size());
    for (auto i : ids) out.push_back(samples[i]);
    return out;
  }
};

inline void validate(const ShapesSegSpec& s) {
  if (s.classes.size() < 2) throw std::invalid_argument("shapes: need background plus at least one class");
  if (s.classes[0].kind != ShapeKind::background) throw std::invalid_argument("shapes: class 0 must be the background");
  if (s.height < 4 || s.width < 4) throw std::invalid_argument("shapes: grid smaller than the 4×4 minimum shape footprint");
  if (s.noise_sigma < 0.0) throw std::invalid_argument("shapes: noise sigma must be non-negative");
  for (std::size_t c = 1; c < s.classes.size(); ++c) {
    const auto& sc = s.classes[c];
    if (sc.kind == ShapeKind::background) throw std::invalid_argument("shapes: only class 0 may be background");
    if (!(sc.occurrence >= 0.0 && sc.occurrence <= 1.0)) throw std::invalid_argument("shapes: occurrence must be in [0,1]");
  }
  if (s.count < 20) throw std::invalid_argument("shapes: need at least 20 samples");
}

namespace detail {

inline void paint_shape(ShapeKind kind, int label, std::size_t h, std::size_t w, std::vector<int>& labels, RngStream& rng) {
  const auto H = static_cast<double>(h), W = static_cast<double>(w);
  auto set = [&](std::size_t y, std::size_t x) { labels[y * w + x] = label; };
  switch (kind) {
    case ShapeKind::background:
      break;
    case ShapeKind::disk: {
      const double r = rng.bernoulli(0.5) ? 1.5 : 2.2;
      const double cy = rng.uniform(r - 0.5, H - r - 0.5), cx = rng.uniform(r - 0.5, W - r - 0.5);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          if (dy * dy + dx * dx <= r * r) set(y, x);
        }
      break;
    }
    case ShapeKind::bar: {
      const bool horizontal = rng.bernoulli(0.5);
      const std::size_t span = horizontal ? w : h, across = horizontal ? h : w;
      const std::size_t thick = 1 + rng.uniform_index(2);
      const std::size_t len = span / 2 + rng.uniform_index(span / 2 + 1);
      const std::size_t off = rng.uniform_index(across - thick + 1);
      const std::size_t start = rng.uniform_index(span - len + 1);
      for (std::size_t a = off; a < off + thick; ++a)
        for (std::size_t s = start; s < start + len; ++s) horizontal ? set(a, s) : set(s, a);
      break;
    }
    case ShapeKind::rectangle: {
      const std::size_t rh = 2 + rng.uniform_index(2), rw = 2 + rng.uniform_index(2);
      const std::size_t y0 = rng.uniform_index(h - rh + 1), x0 = rng.uniform_index(w - rw + 1);
      for (std::size_t y = y0; y < y0 + rh; ++y)
        for (std::size_t x = x0; x < x0 + rw; ++x) set(y, x);
      break;
    }
  }
}

}  // namespace detail

/// One sample: classes occur independently at their configured rates and are
/// painted in index order; each pixel shows its top class's intensity plus noise.
inline PairedSample shapes_sample(const ShapesSegSpec& spec, RngStream& rng) {
  const std::size_t h = spec.height, w = spec.width;
  std::vector<int> labels(h * w, 0);
  for (std::size_t c = 1; c < spec.num_classes(); ++c) {
    const bool occurs = rng.uniform() < spec.classes[c].occurrence;
    if (occurs) detail::paint_shape(spec.classes[c].kind, static_cast<int>(c), h, w, labels, rng);
  }
  Tensor image({1, h, w});
  for (std::size_t p = 0; p < h * w; ++p) {
    double v = spec.classes[static_cast<std::size_t>(labels[p])].intensity;
    if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
    image[p] = std::clamp(v, 0.0, 1.0);
  }
  return PairedSample::from_labels(std::move(image), labels, spec.num_classes());
}

/// Samples conditioned on containing class `cls`, by rejection from the generator.
inline PairedSample shapes_sample_with(const ShapesSegSpec& spec, int cls, RngStream& rng) {
  ShapesSegSpec forced = spec;
  if (cls > 0) forced.classes[static_cast<std::size_t>(cls)].occurrence = 1.0;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    auto s = shapes_sample(forced, rng);
    if (contains(s.presence, cls)) return s;
  }
  throw std::runtime_error("shapes: could not generate a sample containing class " + std::to_string(cls));
}

inline SegDataset gen_shapes_seg(const ShapesSegSpec& spec, RngStream& rng) {
  validate(spec);
  SegDataset d{spec, {}, {}};
  RngStream gen = rng.split(1), split_rng = rng.split(2);
  d.samples.reserve(spec.count);
  std::vector<int> strata;
  for (std::size_t i = 0; i < spec.count; ++i) {
    d.samples.push_back(shapes_sample(spec, gen));
    // Stratify on the rarest class present so rare samples spread over splits.
    strata.push_back(d.samples.back().presence.back());
  }
  d.split = split_90_5_5(strata, split_rng);
  return d;
}

/// Writes images and label maps as two tensor records plus a JSON manifest.
inline void dump_dataset(const SegDataset& d, const std::filesystem::path& stem, std::uint64_t seed) {
  const std::size_t n = d.samples.size(), p = d.spec.height * d.spec.width;
  Tensor images({n, p}), labels({n, p});
  for (std::size_t i = 0; i < n; ++i) {
    const auto lab = d.samples[i].labels();
    for (std::size_t j = 0; j < p; ++j) {
      images(i, j) = d.samples[i].image[j];
      labels(i, j) = lab[j];
    }
  }
  save_tensors(stem.string() + ".gaud", {images, labels});
  std::ofstream(stem.string() + ".json")
      << nlohmann::json{{"kind", "shapes_seg"}, {"spec", d.spec}, {"seed", seed}, {"split", d.split}}.dump(2) << '\n';
}

inline SegDataset load_dataset(const std::filesystem::path& stem) {
  std::ifstream js(stem.string() + ".json");
  if (!js) throw MissingArtifactError("missing dataset manifest " + stem.string() + ".json");
  const auto meta = nlohmann::json::parse(js);
  SegDataset d{meta.at("spec").get<ShapesSegSpec>(), {}, meta.at("split").get<Split>()};
  auto t = load_tensors(stem.string() + ".gaud");
  if (t.size() != 2) throw std::runtime_error("dataset container must hold images and labels");
  const std::size_t h = d.spec.height, w = d.spec.width;
  for (std::size_t i = 0; i < t[0].rows(); ++i) {
    Tensor img({1, h, w});
    std::vector<int> lab(h * w);
    for (std::size_t j = 0; j < h * w; ++j) {
      img[j] = t[0](i, j);
      lab[j] = static_cast<int>(t[1](i, j));
    }
    d.samples.push_back(PairedSample::from_labels(std::move(img), lab, d.spec.num_classes()));
  }
  return d;
}

}  // namespace gauda
