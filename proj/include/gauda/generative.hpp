#pragma once
// The paired generative stack (autoencoders + latent diffusion on their joint
// latents), its training, and the generators the trainer can draw from.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "gauda/autoencoder.hpp"
#include "gauda/diffusion.hpp"
#include "gauda/log.hpp"
#include "gauda/metrics.hpp"
#include "gauda/rng.hpp"
#include "gauda/sample.hpp"

namespace gauda {

/// Per-dimension affine map taking latents to zero mean and unit variance.
struct LatentStats {
  Tensor mean;  // 1 × d
  Tensor std;   // 1 × d

  static LatentStats fit(const Tensor& z) {
    const std::size_t n = z.rows(), d = z.cols();
    LatentStats s{Tensor({1, d}), Tensor({1, d})};
    for (std::size_t j = 0; j < d; ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += z(i, j);
      m /= static_cast<double>(n);
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) v += (z(i, j) - m) * (z(i, j) - m);
      s.mean[j] = m;
      s.std[j] = std::max(std::sqrt(v / static_cast<double>(n)), 1e-6);
    }
    return s;
  }

  Tensor standardize(const Tensor& z) const {
    Tensor out = z;
    for (std::size_t i = 0; i < z.rows(); ++i)
      for (std::size_t j = 0; j < z.cols(); ++j) out(i, j) = (z(i, j) - mean[j]) / std[j];
    return out;
  }
  Tensor restore(const Tensor& z) const {
    Tensor out = z;
    for (std::size_t i = 0; i < z.rows(); ++i)
      for (std::size_t j = 0; j < z.cols(); ++j) out(i, j) = z(i, j) * std[j] + mean[j];
    return out;
  }
};

struct GenerativeConfig {
  AutoencoderConfig autoencoder;
  DenoiserConfig denoiser;  // latent_dim and num_classes are filled in from the data
  DiffusionTrainConfig diffusion;
  std::size_t timesteps = 200;
  double beta_start = 1e-4;
  double beta_end = 0.05;
};

inline void to_json(nlohmann::json& j, const GenerativeConfig& c) {
  j = nlohmann::json{{"autoencoder", c.autoencoder}, {"denoiser", c.denoiser},     {"diffusion", c.diffusion},
                     {"timesteps", c.timesteps},     {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
}
inline void from_json(const nlohmann::json& j, GenerativeConfig& c) {
  if (j.contains("autoencoder")) j.at("autoencoder").get_to(c.autoencoder);
  if (j.contains("denoiser")) j.at("denoiser").get_to(c.denoiser);
  if (j.contains("diffusion")) j.at("diffusion").get_to(c.diffusion);
  c.timesteps = j.value("timesteps", c.timesteps);
  c.beta_start = j.value("beta_start", c.beta_start);
  c.beta_end = j.value("beta_end", c.beta_end);
}

struct GenerativeStack {
  PairedAutoencoder autoencoder;
  ConditionalDenoiser denoiser;
  NoiseSchedule schedule;
  LatentStats stats;
  GenerativeConfig config;

  std::size_t classes() const { return autoencoder.geometry().classes; }

  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    autoencoder.save(dir / "autoencoder");
    denoiser.body().save(dir / "denoiser_body");
    save_tensors(dir / "denoiser_extra.gaud", {denoiser.class_table(), stats.mean, stats.std});
    nlohmann::json j{{"config", config}, {"schedule_hash", schedule.hash()}, {"checkpoint_hash", denoiser.hash()}};
    std::ofstream(dir / "generative.json") << j.dump(2) << '\n';
  }

  static GenerativeStack load(const std::filesystem::path& dir) {
    std::ifstream js(dir / "generative.json");
    if (!js) throw MissingArtifactError("missing generative stack at " + dir.string());
    const auto j = nlohmann::json::parse(js);
    GenerativeStack g;
    g.config = j.at("config").get<GenerativeConfig>();
    g.autoencoder = PairedAutoencoder::load(dir / "autoencoder");
    RngStream unused(0);
    g.denoiser = ConditionalDenoiser(g.config.denoiser, unused);
    auto body = MlpModel::load(dir / "denoiser_body");
    auto extra = load_tensors(dir / "denoiser_extra.gaud");
    if (extra.size() != 3) throw std::runtime_error("denoiser_extra.gaud must hold three tensors");
    auto params = body.parameters();
    params.push_back(extra[0]);
    g.denoiser.set_parameters(std::move(params));
    g.stats = LatentStats{extra[1], extra[2]};
    g.schedule = make_linear_schedule(g.config.timesteps, g.config.beta_start, g.config.beta_end);
    if (g.schedule.hash() != j.at("schedule_hash").get<std::uint64_t>())
      throw std::runtime_error("stored schedule hash does not match the configured schedule");
    return g;
  }
};

struct PretrainReport {
  AutoencoderReport autoencoder;
  std::vector<double> diffusion_curve;
};

/// Trains the autoencoders, then the denoiser on their frozen standardized latents.
/// Conditioning classes come from each sample's presence set (see DiffusionTrainConfig::balanced).
inline PretrainReport pretrain_autoencoders(GenerativeStack& g, std::span<const PairedSample> train,
                                            const PairGeometry& geo, RngStream& rng) {
  RngStream init = rng.split(1), fit = rng.split(2);
  g.autoencoder = PairedAutoencoder(geo, g.config.autoencoder, init);
  PretrainReport rep;
  rep.autoencoder = train_autoencoders(g.autoencoder, train, fit);
  return rep;
}

inline std::vector<double> pretrain_diffusion(GenerativeStack& g, std::span<const PairedSample> train, RngStream& rng) {
  const Tensor z = g.autoencoder.encode_batch(train);
  g.stats = LatentStats::fit(z);
  auto dcfg = g.config.denoiser;
  dcfg.latent_dim = z.cols();
  dcfg.num_classes = g.classes();
  g.config.denoiser = dcfg;
  RngStream init = rng.split(3), fit = rng.split(4);
  g.denoiser = ConditionalDenoiser(dcfg, init);
  g.schedule = make_linear_schedule(g.config.timesteps, g.config.beta_start, g.config.beta_end);
  std::vector<std::vector<int>> sets;
  sets.reserve(train.size());
  for (const auto& s : train) sets.push_back(s.presence);
  return train_denoiser(g.denoiser, g.stats.standardize(z), sets, g.schedule, g.config.diffusion, fit);
}

// ---------------------------------------------------------------------------

struct SynthResult {
  std::vector<PairedSample> samples;
  std::size_t dropped = 0;  // decodes that failed the class gate
};

class PairGenerator {
 public:
  virtual ~PairGenerator() = default;
  virtual std::string name() const = 0;
  /// n attempts conditioned on `cls`; samples lacking `cls` are dropped.
  virtual SynthResult generate(int cls, std::size_t n, double omega, RngStream& rng) const = 0;
};

class LatentDiffusionGenerator final : public PairGenerator {
 public:
  explicit LatentDiffusionGenerator(std::shared_ptr<const GenerativeStack> g) : g_(std::move(g)) {}
  std::string name() const override { return "ldm"; }

  SynthResult generate(int cls, std::size_t n, double omega, RngStream& rng) const override {
    SynthResult r;
    if (n == 0) return r;
    const auto batch = sample_latents(g_->denoiser, g_->schedule, cls, omega, rng, n);
    for (auto& s : g_->autoencoder.decode_batch(g_->stats.restore(batch.latents))) {
      s.validate();
      if (cls == kUnconditional || contains(s.presence, cls))
        r.samples.push_back(std::move(s));
      else
        ++r.dropped;
    }
    return r;
  }

  /// Decoded samples with no class gate.
  std::vector<PairedSample> raw(int cls, std::size_t n, double omega, RngStream& rng) const {
    const auto batch = sample_latents(g_->denoiser, g_->schedule, cls, omega, rng, n);
    return g_->autoencoder.decode_batch(g_->stats.restore(batch.latents));
  }

 private:
  std::shared_ptr<const GenerativeStack> g_;
};

/// Real pairs standing in for a generator: uniform draws among the held pairs
/// that contain the requested class. Used as the oracle (held-back data) and
/// as an echo of the training data.
class RealPairGenerator final : public PairGenerator {
 public:
  RealPairGenerator(std::vector<PairedSample> pairs, std::string name) : pairs_(std::move(pairs)), name_(std::move(name)) {}
  std::string name() const override { return name_; }

  SynthResult generate(int cls, std::size_t n, double, RngStream& rng) const override {
    SynthResult r;
    std::vector<std::size_t> ok;
    for (std::size_t i = 0; i < pairs_.size(); ++i)
      if (cls == kUnconditional || contains(pairs_[i].presence, cls)) ok.push_back(i);
    if (ok.empty()) {
      r.dropped = n;
      return r;
    }
    for (std::size_t k = 0; k < n; ++k) r.samples.push_back(pairs_[ok[rng.uniform_index(ok.size())]]);
    return r;
  }

 private:
  std::vector<PairedSample> pairs_;
  std::string name_;
};

/// Fraction of class-conditioned draws whose decoded mask contains the class, per class.
inline std::vector<double> conditioning_fidelity(const PairGenerator& gen, std::size_t classes, std::size_t n,
                                                 double omega, RngStream& rng) {
  std::vector<double> out;
  for (std::size_t c = 0; c < classes; ++c) {
    RngStream r = rng.split(c);
    const auto res = gen.generate(static_cast<int>(c), n, omega, r);
    out.push_back(static_cast<double>(res.samples.size()) / static_cast<double>(n));
  }
  return out;
}

inline Tensor flatten_images(std::span<const PairedSample> s) {
  if (s.empty()) throw std::invalid_argument("flatten_images: no samples");
  Tensor out({s.size(), s[0].image.size()});
  for (std::size_t i = 0; i < s.size(); ++i)
    std::copy(s[i].image.data().begin(), s[i].image.data().end(), out.row_span(i).begin());
  return out;
}

}  // namespace gauda
