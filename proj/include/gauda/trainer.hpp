#pragma once
// Downstream training under the compared policies. GAUDA: at every validation
// step rank classes by ensemble uncertainty, synthesize pairs conditioned on
// the most uncertain ones, and mix them into later training batches.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gauda/data.hpp"
#include "gauda/ensemble.hpp"
#include "gauda/generative.hpp"
#include "gauda/log.hpp"
#include "gauda/metrics.hpp"
#include "gauda/sampling.hpp"

namespace gauda {

/// Real examples of one task with its split and geometry.
struct TaskData {
  Task task = Task::segmentation;
  std::size_t classes = 2;
  std::size_t pixels = 1;
  std::size_t input_dim = 2;
  std::size_t height = 1;
  std::size_t width = 1;
  std::vector<Example> train, val, test;

  static TaskData from_shapes(const SegDataset& d) {
    TaskData t;
    t.task = Task::segmentation;
    t.classes = d.num_classes();
    t.height = d.spec.height;
    t.width = d.spec.width;
    t.pixels = t.height * t.width;
    t.input_dim = t.pixels;
    t.train = d.examples(d.split.train);
    t.val = d.examples(d.split.val);
    t.test = d.examples(d.split.test);
    return t;
  }

  static TaskData from_toy2d(const Toy2DData& d) {
    TaskData t;
    t.task = Task::classification;
    t.classes = 2;
    t.train = toy2d_examples(d, d.split.train);
    t.val = toy2d_examples(d, d.split.val);
    t.test = toy2d_examples(d, d.split.test);
    return t;
  }
};

enum class Policy { none, aug, as, as_aug, gauda, gauda_aug, uas };

inline std::string to_string(Policy p) {
  switch (p) {
    case Policy::none: return "none";
    case Policy::aug: return "aug";
    case Policy::as: return "AS";
    case Policy::as_aug: return "AS+aug";
    case Policy::gauda: return "GAUDA";
    case Policy::gauda_aug: return "GAUDA+aug";
    case Policy::uas: return "UAS";
  }
  return "?";
}

inline Policy policy_from(const std::string& s) {
  for (auto p : {Policy::none, Policy::aug, Policy::as, Policy::as_aug, Policy::gauda, Policy::gauda_aug, Policy::uas})
    if (to_string(p) == s) return p;
  throw ConfigError("unknown policy '" + s + "'");
}

inline bool uses_aug(Policy p) { return p == Policy::aug || p == Policy::as_aug || p == Policy::gauda_aug; }
inline bool uses_score_weights(Policy p) { return p == Policy::as || p == Policy::as_aug; }
inline bool uses_generation(Policy p) { return p == Policy::gauda || p == Policy::gauda_aug; }

struct GaudaConfig {
  std::size_t val_interval = 200;
  std::size_t n_c = 2;
  double omega = kDefaultGuidance;
  std::size_t synth_batch = 32;  // per round, split evenly over the selected classes
  double replace_fraction = 0.10;
  std::size_t total_steps = 1600;
  std::size_t batch = 32;
  std::size_t pool_capacity = 0;  // 0 means 4 × synth_batch
  bool synthesis = true;
  double aug_p = 0.2;
  double weight_floor = kWeightFloor;
  SampleWeightMode weight_mode = SampleWeightMode::mean;

  std::size_t capacity() const { return pool_capacity ? pool_capacity : 4 * synth_batch; }
};

inline void to_json(nlohmann::json& j, const GaudaConfig& c) {
  j = nlohmann::json{{"val_interval", c.val_interval},
                     {"n_c", c.n_c},
                     {"omega", c.omega},
                     {"synth_batch", c.synth_batch},
                     {"replace_fraction", c.replace_fraction},
                     {"total_steps", c.total_steps},
                     {"batch", c.batch},
                     {"pool_capacity", c.capacity()},
                     {"synthesis", c.synthesis},
                     {"aug_p", c.aug_p},
                     {"weight_floor", c.weight_floor},
                     {"weight_mode", c.weight_mode == SampleWeightMode::mean ? "mean" : "max"}};
}
inline void from_json(const nlohmann::json& j, GaudaConfig& c) {
  c.val_interval = j.value("val_interval", c.val_interval);
  c.n_c = j.value("n_c", c.n_c);
  c.omega = j.value("omega", c.omega);
  c.synth_batch = j.value("synth_batch", c.synth_batch);
  c.replace_fraction = j.value("replace_fraction", c.replace_fraction);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.batch = j.value("batch", c.batch);
  c.pool_capacity = j.value("pool_capacity", c.pool_capacity);
  c.synthesis = j.value("synthesis", c.synthesis);
  c.aug_p = j.value("aug_p", c.aug_p);
  c.weight_floor = j.value("weight_floor", c.weight_floor);
  const auto mode = j.value("weight_mode", std::string("mean"));
  if (mode != "mean" && mode != "max") throw ConfigError("weight_mode must be mean or max");
  c.weight_mode = mode == "mean" ? SampleWeightMode::mean : SampleWeightMode::max;
}

inline void validate(const GaudaConfig& c, std::size_t classes) {
  if (c.val_interval == 0 || c.total_steps == 0 || c.batch == 0) throw ConfigError("step counts and batch must be positive");
  if (c.n_c == 0 || c.n_c > classes) throw ConfigError("n_c must lie in [1, K]");
  if (!(c.replace_fraction >= 0.0 && c.replace_fraction <= 1.0)) throw ConfigError("replace_fraction must lie in [0,1]");
  if (c.omega < 0.0) throw ConfigError("omega must be non-negative");
}

/// Top-n classes by uncertainty, descending; ties go to the lower index and
/// never-predicted classes rank above every finite value.
inline std::vector<int> select_uncertain_classes(std::span<const std::optional<double>> ue, std::size_t n) {
  if (ue.empty()) throw std::invalid_argument("select_uncertain_classes: empty uncertainty map");
  std::vector<int> order(ue.size());
  for (std::size_t c = 0; c < ue.size(); ++c) order[c] = static_cast<int>(c);
  auto key = [&](int c) { return ue[static_cast<std::size_t>(c)] ? *ue[static_cast<std::size_t>(c)] : INFINITY; };
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return key(a) > key(b); });
  order.resize(std::min(n, order.size()));
  return order;
}

struct PoolEntry {
  Example example;
  std::size_t round = 0;
  int cls = 0;
  std::uint64_t stream = 0;
};

/// Synthetic examples kept across rounds with FIFO eviction.
class SynthPool {
 public:
  explicit SynthPool(std::size_t capacity = 128) : capacity_(capacity) {}

  void add(PoolEntry e) {
    entries_.push_back(std::move(e));
    while (entries_.size() > capacity_) entries_.pop_front();
  }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const PoolEntry& operator[](std::size_t i) const { return entries_[i]; }
  const Example& draw(RngStream& rng) const { return entries_[rng.uniform_index(entries_.size())].example; }

  nlohmann::json manifest() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : entries_) j.push_back({{"round", e.round}, {"class", e.cls}, {"stream", e.stream}, {"presence", e.example.presence}});
    return j;
  }

 private:
  std::size_t capacity_;
  std::deque<PoolEntry> entries_;
};

/// Draws from a generator for each class; returns the number of gate drops.
inline std::size_t synthesize_for_classes(const std::vector<int>& classes, std::size_t per_class, double omega,
                                          const PairGenerator& gen, const RngStream& base, std::size_t round,
                                          SynthPool& pool) {
  std::size_t dropped = 0;
  for (int c : classes) {
    if (per_class == 0) continue;
    const std::uint64_t id = round * 1000 + static_cast<std::uint64_t>(c);
    RngStream rng = base.split(id);
    auto res = gen.generate(c, per_class, omega, rng);
    dropped += res.dropped;
    for (auto& s : res.samples) pool.add(PoolEntry{to_example(s), round, c, id});
  }
  return dropped;
}

/// Each slot is replaced by a uniform pool draw with probability r.
inline std::vector<const Example*> mix_batch(std::vector<const Example*> batch, const SynthPool& pool, double r,
                                             RngStream& rng) {
  if (pool.empty() || r <= 0.0) return batch;
  for (auto& slot : batch)
    if (rng.uniform() < r) slot = &pool.draw(rng);
  return batch;
}

/// Horizontal flip and 90° rotation of a square image/label pair, each with probability p.
inline Example classic_augment(const Example& e, std::size_t h, std::size_t w, double p, RngStream& rng) {
  const bool flip = rng.uniform() < p;
  const bool rot = rng.uniform() < p && h == w;
  if (!flip && !rot) return e;
  Example out = e;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t sy = y, sx = x;
      if (rot) {  // out(y,x) = in(x, w-1-y) after the flip
        sy = x;
        sx = w - 1 - y;
      }
      if (flip) sx = w - 1 - sx;
      out.input[y * w + x] = e.input[sy * w + sx];
      out.labels[y * w + x] = e.labels[sy * w + sx];
    }
  return out;
}

struct TrainConfig {
  EnsembleConfig model;
  GaudaConfig gauda;
  Policy policy = Policy::none;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"model", c.model}, {"gauda", c.gauda}, {"policy", to_string(c.policy)}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("model")) j.at("model").get_to(c.model);
  if (j.contains("gauda")) j.at("gauda").get_to(c.gauda);
  c.policy = policy_from(j.value("policy", std::string("none")));
  c.seed = j.value("seed", c.seed);
}

/// Per-sample test tables and summary statistics of one run.
struct RunResult {
  RunMetrics metrics;
  std::vector<LabelScores> test_iou, test_dice, test_ap;
  double test_accuracy = 0.0;
  std::vector<double> test_recall;
  std::size_t synthesized = 0;
  std::size_t dropped = 0;
  std::vector<std::vector<int>> selections;
  std::vector<double> selected_ue;  // mean UE over the selected classes per round
  nlohmann::json pool_manifest = nlohmann::json::array();
  EnsembleModel model;
};

namespace detail {

inline Tensor example_inputs(std::span<const Example* const> batch) { return gather_inputs(batch); }

inline std::vector<int> example_labels(std::span<const Example* const> batch) {
  std::vector<int> y;
  for (const auto* e : batch) y.insert(y.end(), e->labels.begin(), e->labels.end());
  return y;
}

inline std::vector<const Example*> pointers(const std::vector<Example>& v) {
  std::vector<const Example*> out;
  out.reserve(v.size());
  for (const auto& e : v) out.push_back(&e);
  return out;
}

struct Evaluation {
  PosteriorSet posterior;
  Tensor final;  // rows = examples·pixels
  std::vector<LabelScores> iou, dice, ap;
  std::vector<std::optional<double>> ue;
  std::vector<std::optional<double>> class_score;  // pooled IoU (segmentation) or recall
  double accuracy = 0.0;
};

inline Evaluation evaluate(const EnsembleModel& ens, const TaskData& data, const std::vector<Example>& set) {
  Evaluation ev;
  const auto ptrs = pointers(set);
  ev.posterior = ens.predict_posterior(gather_inputs(ptrs));
  ev.final = mean_prediction(ev.posterior);
  ev.ue = class_uncertainty(ev.posterior, ev.final);
  const std::size_t K = data.classes, P = data.pixels;
  std::vector<std::size_t> inter(K, 0), uni(K, 0), tp(K, 0), npos(K, 0);
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::vector<int> pred(P);
    Tensor probs({P, K});
    for (std::size_t p = 0; p < P; ++p) {
      auto row = ev.final.row_span(i * P + p);
      pred[p] = static_cast<int>(argmax(row));
      std::copy(row.begin(), row.end(), probs.row_span(p).begin());
    }
    const auto& truth = set[i].labels;
    for (std::size_t p = 0; p < P; ++p) {
      const auto a = static_cast<std::size_t>(pred[p]), b = static_cast<std::size_t>(truth[p]);
      ++npos[b];
      if (a == b) {
        ++inter[a];
        ++uni[a];
        ++tp[a];
        ++correct;
      } else {
        ++uni[a];
        ++uni[b];
      }
      ++total;
    }
    if (data.task == Task::segmentation) {
      ev.iou.push_back(iou_per_label(pred, truth, K));
      ev.dice.push_back(dice_per_label(pred, truth, K));
      ev.ap.push_back(ap_per_label(probs, truth));
    }
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  ev.class_score.resize(K);
  for (std::size_t c = 0; c < K; ++c) {
    if (data.task == Task::segmentation) {
      if (uni[c]) ev.class_score[c] = static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    } else if (npos[c]) {
      ev.class_score[c] = static_cast<double>(tp[c]) / static_cast<double>(npos[c]);
    }
  }
  return ev;
}

}  // namespace detail

/// Trains an ensemble on `data` under `cfg.policy`. Streams: split(100) init,
/// 200+i member batches, 300+i mixing, 400 synthesis, 500+i augmentation,
/// 600+i dropout. `gen` may be null; generative policies then fall back to AS.
inline RunResult run_training(const TaskData& data, const TrainConfig& cfg, const PairGenerator* gen) {
  validate(cfg.gauda, data.classes);
  if (data.train.empty() || data.val.empty() || data.test.empty()) throw ConfigError("task needs nonempty splits");
  const auto& g = cfg.gauda;
  const std::string pol = to_string(cfg.policy);
  Policy effective = cfg.policy;
  if (uses_generation(cfg.policy) && g.synthesis && gen == nullptr) {
    log_warning("policy " + pol + ": no generative stack, falling back to AS");
    effective = uses_aug(cfg.policy) ? Policy::as_aug : Policy::as;
  }
  const bool generate = uses_generation(effective) && g.synthesis;

  EnsembleConfig mcfg = cfg.model;
  mcfg.input_dim = data.input_dim;
  mcfg.pixels = data.pixels;
  mcfg.classes = data.classes;
  const RngStream root(cfg.seed);
  RunResult res;
  res.model = EnsembleModel(mcfg, root.split(100));
  auto& ens = res.model;
  const std::size_t k = ens.size();
  std::vector<RngStream> batch_rng, mix_rng, aug_rng, drop_rng;
  for (std::size_t i = 0; i < k; ++i) {
    batch_rng.push_back(root.split(200 + i));
    mix_rng.push_back(root.split(300 + i));
    aug_rng.push_back(root.split(500 + i));
    drop_rng.push_back(root.split(600 + i));
  }
  const RngStream synth_rng = root.split(400);

  std::vector<std::vector<int>> presence;
  presence.reserve(data.train.size());
  for (const auto& e : data.train) presence.push_back(e.presence);
  ClassWeights weights = uniform_weights(data.classes);
  BatchSampler sampler(presence, weights, g.weight_mode);
  SynthPool pool(g.capacity());
  auto& m = res.metrics;
  double loss_acc = 0.0;
  std::size_t loss_n = 0, round = 0;

  for (std::size_t step = 1; step <= g.total_steps; ++step) {
    for (std::size_t i = 0; i < k; ++i) {
      const auto ids = sampler.draw(g.batch, batch_rng[i]);
      std::vector<const Example*> batch;
      batch.reserve(ids.size());
      for (auto id : ids) batch.push_back(&data.train[id]);
      if (generate) batch = mix_batch(std::move(batch), pool, g.replace_fraction, mix_rng[i]);
      std::vector<Example> augmented;
      if (uses_aug(effective) && data.task == Task::segmentation) {
        augmented.reserve(batch.size());
        for (auto* e : batch) augmented.push_back(classic_augment(*e, data.height, data.width, g.aug_p, aug_rng[i]));
        batch = detail::pointers(augmented);
      }
      const double l = ens.train_step(i, gather_inputs(batch), detail::example_labels(batch), drop_rng[i]);
      loss_acc += l;
      ++loss_n;
    }

    if (step % g.val_interval != 0 && step != g.total_steps) continue;
    const auto s = static_cast<std::int64_t>(step);
    const auto ev = detail::evaluate(ens, data, data.val);
    m.add(s, "train", pol, "loss", "ALL", loss_acc / static_cast<double>(loss_n));
    loss_acc = 0.0;
    loss_n = 0;
    m.add(s, "val", pol, "accuracy", "ALL", ev.accuracy);
    for (std::size_t c = 0; c < data.classes; ++c) {
      if (ev.class_score[c]) m.add(s, "val", pol, "score", c, *ev.class_score[c]);
      if (ev.ue[c]) m.add(s, "val", pol, "ue", c, *ev.ue[c]);
    }
    if (data.task == Task::segmentation) m.add(s, "val", pol, "iou", key(Aggregate::label_mean), aggregate(ev.iou, Aggregate::label_mean));

    if (step == g.total_steps) {
      for (std::size_t c = 0; c < data.classes; ++c) m.add(s, "val", pol, "weight", c, weights.normalized()[c]);
      break;
    }
    if (uses_score_weights(effective)) weights = score_adaptive_update(weights, ev.class_score, g.weight_floor);
    if (effective == Policy::uas) weights = uncertainty_adaptive_update(weights, ev.ue, g.weight_floor);
    const auto wn = weights.normalized();
    for (std::size_t c = 0; c < data.classes; ++c) m.add(s, "val", pol, "weight", c, wn[c]);
    if (uses_score_weights(effective) || effective == Policy::uas) sampler = BatchSampler(presence, weights, g.weight_mode);

    if (generate) {
      ++round;
      const auto sel = select_uncertain_classes(ev.ue, g.n_c);
      double mean_ue = 0.0;
      for (int c : sel) {
        const auto& u = ev.ue[static_cast<std::size_t>(c)];
        mean_ue += u ? *u : 0.25;
        m.add(s, "val", pol, "selected", static_cast<std::size_t>(c), u ? *u : 0.25);
      }
      res.selected_ue.push_back(mean_ue / static_cast<double>(sel.size()));
      res.selections.push_back(sel);
      const std::size_t per_class = std::max<std::size_t>(1, g.synth_batch / sel.size());
      const std::size_t dropped = synthesize_for_classes(sel, per_class, g.omega, *gen, synth_rng, round, pool);
      res.dropped += dropped;
      res.synthesized += per_class * sel.size() - dropped;
      m.add(s, "val", pol, "synth_dropped", "ALL", static_cast<double>(dropped));
      m.add(s, "val", pol, "pool_size", "ALL", static_cast<double>(pool.size()));
    }
  }
  res.pool_manifest = pool.manifest();

  const auto ev = detail::evaluate(ens, data, data.test);
  const auto s = static_cast<std::int64_t>(g.total_steps);
  res.test_accuracy = ev.accuracy;
  m.add(s, "test", pol, "accuracy", "ALL", ev.accuracy);
  if (data.task == Task::segmentation) {
    res.test_iou = ev.iou;
    res.test_dice = ev.dice;
    res.test_ap = ev.ap;
    for (const auto& [name, table] : {std::pair{"iou", &ev.iou}, std::pair{"dice", &ev.dice}, std::pair{"ap", &ev.ap}}) {
      const auto per_label = per_label_means(*table);
      for (std::size_t c = 0; c < data.classes; ++c)
        if (per_label[c]) m.add(s, "test", pol, name, c, *per_label[c]);
      for (auto a : {Aggregate::label_mean, Aggregate::sample_mean, Aggregate::sample_median})
        m.add(s, "test", pol, name, key(a), aggregate(*table, a));
    }
  } else {
    for (std::size_t c = 0; c < data.classes; ++c) {
      const double r = ev.class_score[c].value_or(0.0);
      res.test_recall.push_back(r);
      if (ev.class_score[c]) m.add(s, "test", pol, "recall", c, r);
    }
  }
  return res;
}

}  // namespace gauda
