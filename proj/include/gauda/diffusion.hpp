#pragma once
// DDPM machinery: variance schedules, forward noising, the epsilon-prediction
// losses, a class-conditional denoiser with a learned null class, classifier-free
// guidance and the ancestral reverse sampler.

#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gauda/nn.hpp"
#include "gauda/rng.hpp"
#include "gauda/tape.hpp"
#include "gauda/tensor.hpp"

namespace gauda {

/// FNV-1a over the bit patterns of a sequence of doubles.
inline std::uint64_t hash_doubles(std::span<const double> v, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (double d : v) {
    auto bits = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

/// β, α = 1 − β and ᾱ_t = Π_{s≤t} α_s. Timesteps are 1-based in the accessors.
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  std::size_t steps() const noexcept { return beta.size(); }
  double beta_at(std::size_t t) const { return beta.at(check(t) - 1); }
  double alpha_at(std::size_t t) const { return alpha.at(check(t) - 1); }
  double alpha_bar_at(std::size_t t) const { return alpha_bar.at(check(t) - 1); }

  std::uint64_t hash() const { return hash_doubles(alpha_bar, hash_doubles(beta)); }

 private:
  std::size_t check(std::size_t t) const {
    if (t < 1 || t > beta.size())
      throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " + std::to_string(beta.size()) + "]");
    return t;
  }
};

inline NoiseSchedule schedule_from_betas(std::vector<double> beta) {
  if (beta.empty()) throw std::invalid_argument("schedule needs at least one step");
  NoiseSchedule s;
  double prod = 1.0;
  for (double b : beta) {
    if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("every beta must lie in (0,1)");
    s.alpha.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bar.push_back(prod);
  }
  s.beta = std::move(beta);
  return s;
}

/// β linearly interpolated from beta_start to beta_end, both inclusive.
inline NoiseSchedule make_linear_schedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument("linear schedule requires 0 < beta_start <= beta_end < 1");
  std::vector<double> beta(steps);
  for (std::size_t i = 0; i < steps; ++i)
    beta[i] = steps == 1 ? beta_start
                         : beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(steps - 1);
  return schedule_from_betas(std::move(beta));
}

/// z_t = √ᾱ_t z0 + √(1−ᾱ_t) ε
inline Tensor forward_noise(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched) {
  require_same_shape(z0, eps, "forward_noise");
  const double ab = sched.alpha_bar_at(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out = z0;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return checked(std::move(out), "forward_noise");
}

/// Row-wise forward noising with a separate timestep per row.
inline Tensor forward_noise_rows(const Tensor& z0, std::span<const std::size_t> t, const Tensor& eps,
                                 const NoiseSchedule& sched) {
  require_same_shape(z0, eps, "forward_noise_rows");
  if (t.size() != z0.rows()) throw std::invalid_argument("forward_noise_rows: one timestep per row required");
  Tensor out = z0;
  for (std::size_t i = 0; i < z0.rows(); ++i) {
    const double ab = sched.alpha_bar_at(t[i]);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    auto o = out.row_span(i);
    auto e = eps.row_span(i);
    for (std::size_t j = 0; j < o.size(); ++j) o[j] = a * o[j] + b * e[j];
  }
  return checked(std::move(out), "forward_noise_rows");
}

/// Recovers z0 from z_t when ε is known.
inline Tensor invert_forward_noise(const Tensor& zt, std::size_t t, const Tensor& eps, const NoiseSchedule& sched) {
  require_same_shape(zt, eps, "invert_forward_noise");
  const double ab = sched.alpha_bar_at(t);
  Tensor out = zt;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (zt[i] - std::sqrt(1.0 - ab) * eps[i]) / std::sqrt(ab);
  return checked(std::move(out), "invert_forward_noise");
}

/// ε' = (1 + ω) ε_cond − ω ε_uncond, evaluated as ε_cond + ω (ε_cond − ε_uncond)
/// so that equal inputs come back bit-exact.
inline Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double omega) {
  require_same_shape(eps_cond, eps_uncond, "cfg_combine");
  Tensor out = eps_cond;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps_cond[i] + omega * (eps_cond[i] - eps_uncond[i]);
  return checked(std::move(out), "cfg_combine");
}

inline constexpr double kDefaultGuidance = 3.0;
inline constexpr double kConditioningDrop = 0.2;
inline constexpr int kUnconditional = -1;

/// Sinusoidal features of integer timesteps, N×dim (dim even).
inline Tensor time_embedding(std::span<const std::size_t> t, std::size_t dim) {
  if (dim == 0 || dim % 2) throw std::invalid_argument("time embedding dimension must be even");
  const std::size_t half = dim / 2;
  Tensor out({t.size(), dim});
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      const double a = static_cast<double>(t[i]) * freq;
      out(i, k) = std::sin(a);
      out(i, half + k) = std::cos(a);
    }
  }
  return out;
}

struct DenoiserConfig {
  std::size_t latent_dim = 32;
  std::size_t num_classes = 4;
  std::size_t time_dim = 16;
  std::size_t class_dim = 16;
  std::vector<std::size_t> hidden = {512, 512};
};

inline void to_json(nlohmann::json& j, const DenoiserConfig& c) {
  j = nlohmann::json{{"latent_dim", c.latent_dim}, {"num_classes", c.num_classes}, {"time_dim", c.time_dim},
                     {"class_dim", c.class_dim},   {"hidden", c.hidden}};
}
inline void from_json(const nlohmann::json& j, DenoiserConfig& c) {
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.time_dim = j.value("time_dim", c.time_dim);
  c.class_dim = j.value("class_dim", c.class_dim);
  c.hidden = j.value("hidden", c.hidden);
}

/// Anything that predicts ε from (z_t, t, class); class kUnconditional selects the null condition.
template <class P>
concept EpsPredictor = requires(const P& p, const Tensor& z, std::size_t t, int c) {
  { p(z, t, c) } -> std::convertible_to<Tensor>;
};

/// ε_θ(z_t, t, c): an MLP over [z_t ⊕ time features ⊕ class embedding]. The
/// embedding table has one extra trailing row for the null (dropped) condition.
class ConditionalDenoiser {
 public:
  ConditionalDenoiser() = default;

  ConditionalDenoiser(DenoiserConfig cfg, RngStream& rng) : cfg_(std::move(cfg)) {
    if (cfg_.latent_dim == 0 || cfg_.num_classes == 0) throw std::invalid_argument("denoiser dims must be positive");
    std::vector<std::size_t> widths{cfg_.latent_dim + cfg_.time_dim + cfg_.class_dim};
    widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    widths.push_back(cfg_.latent_dim);
    RngStream body_rng = rng.split(1), table_rng = rng.split(2);
    body_ = MlpModel(MlpConfig{widths, 0.0}, body_rng);
    table_ = gaussian(table_rng, {cfg_.num_classes + 1, cfg_.class_dim});
  }

  const DenoiserConfig& config() const noexcept { return cfg_; }
  std::size_t null_row() const noexcept { return cfg_.num_classes; }
  const Tensor& class_table() const noexcept { return table_; }
  MlpModel& body() noexcept { return body_; }
  const MlpModel& body() const noexcept { return body_; }

  /// Body parameters followed by the class table.
  std::vector<Tensor> parameters() const {
    auto p = body_.parameters();
    p.push_back(table_);
    return p;
  }
  void set_parameters(std::vector<Tensor> p) {
    if (p.size() != body_.parameters().size() + 1) throw std::invalid_argument("denoiser parameter count mismatch");
    table_ = std::move(p.back());
    p.pop_back();
    for (std::size_t i = 0; i < p.size(); ++i) {
      require_same_shape(p[i], body_.parameters()[i], "denoiser set_parameters");
      body_.parameters()[i] = std::move(p[i]);
    }
  }

  struct Bound {
    BoundParams body;
    Var table;
  };

  Bound bind(Tape& tape) const { return Bound{body_.bind(tape), tape.leaf(table_)}; }

  Var forward(Tape& tape, const Bound& b, Var zt, std::span<const std::size_t> t, std::span<const int> classes) const {
    const std::size_t n = tape.value(zt).rows();
    if (t.size() != n || classes.size() != n) throw std::invalid_argument("denoiser: one timestep and class per row");
    Var temb = tape.constant(time_embedding(t, cfg_.time_dim));
    Var cemb = tape.matmul(tape.constant(class_selector(classes)), b.table);
    const Var parts[] = {zt, temb, cemb};
    return body_.forward(tape, b.body, tape.concat_cols(parts), Mode::eval);
  }

  std::vector<Tensor> gradients(const Tape& tape, const Bound& b) const {
    auto g = body_.gradients(tape, b.body);
    g.push_back(tape.grad(b.table));
    return g;
  }

  /// Batched ε prediction at a single timestep and class.
  Tensor operator()(const Tensor& zt, std::size_t t, int cls) const {
    const std::size_t n = zt.rows();
    std::vector<std::size_t> ts(n, t);
    std::vector<int> cs(n, cls);
    Tensor cemb = matmul_raw(class_selector(cs), table_);
    const Tensor parts[] = {zt, time_embedding(ts, cfg_.time_dim), cemb};
    return body_.predict(concat_cols(parts));
  }

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& p : parameters()) h = hash_doubles(p.data(), h);
    return h;
  }

 private:
  Tensor class_selector(std::span<const int> classes) const {
    Tensor sel({classes.size(), cfg_.num_classes + 1});
    for (std::size_t i = 0; i < classes.size(); ++i) {
      const int c = classes[i];
      if (c != kUnconditional && (c < 0 || static_cast<std::size_t>(c) >= cfg_.num_classes))
        throw std::invalid_argument("denoiser: class " + std::to_string(c) + " out of range");
      sel(i, c == kUnconditional ? null_row() : static_cast<std::size_t>(c)) = 1.0;
    }
    return sel;
  }

  DenoiserConfig cfg_;
  MlpModel body_;
  Tensor table_;
};

struct DenoiserLoss {
  double loss = 0.0;
  std::vector<Tensor> grads;  // aligned with ConditionalDenoiser::parameters()
};

/// ε-prediction MSE on a joint latent batch z0 (one row per sample). Classes
/// are replaced by the null condition with probability `drop_p` using `rng`.
inline DenoiserLoss loss_simple(const ConditionalDenoiser& den, const Tensor& z0, std::span<const int> classes,
                                std::span<const std::size_t> t, const Tensor& eps, const NoiseSchedule& sched,
                                RngStream& rng, double drop_p = kConditioningDrop) {
  std::vector<int> cond(classes.begin(), classes.end());
  for (auto& c : cond)
    if (rng.uniform() < drop_p) c = kUnconditional;
  Tape tape;
  auto bound = den.bind(tape);
  Var zt = tape.constant(forward_noise_rows(z0, t, eps, sched));
  Var pred = den.forward(tape, bound, zt, t, cond);
  Var loss = tape.mse(pred, eps);
  tape.backward(loss);
  return DenoiserLoss{tape.value(loss).item(), den.gradients(tape, bound)};
}

/// Semantic loss: the same objective over the concatenated (image, mask) latent pair.
inline DenoiserLoss loss_semantic(const ConditionalDenoiser& den, const Tensor& z_x0, const Tensor& z_m0,
                                  std::span<const int> classes, std::span<const std::size_t> t, const Tensor& eps,
                                  const NoiseSchedule& sched, RngStream& rng, double drop_p = kConditioningDrop) {
  const Tensor parts[] = {z_x0, z_m0};
  return loss_simple(den, concat_cols(parts), classes, t, eps, sched, rng, drop_p);
}

struct SampleProvenance {
  std::uint64_t schedule_hash = 0;
  std::uint64_t checkpoint_hash = 0;
  int cls = kUnconditional;
  double omega = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
};

struct SampleBatch {
  Tensor latents;  // n × latent_dim
  SampleProvenance provenance;
};

/// DDPM ancestral sampling with reverse-step variance β_t. When ω > 0 each
/// step evaluates the conditional and null predictions and mixes them.
template <EpsPredictor Predictor>
Tensor reverse_sample(const Predictor& predict, const NoiseSchedule& sched, std::size_t latent_dim, int cls,
                      double omega, RngStream& rng, std::size_t n) {
  if (omega < 0.0) throw std::invalid_argument("guidance strength must be non-negative");
  if (n == 0) throw std::invalid_argument("reverse_sample: n must be positive");
  Tensor x = gaussian(rng, {n, latent_dim});
  for (std::size_t t = sched.steps(); t >= 1; --t) {
    Tensor eps = predict(x, t, cls);
    if (omega > 0.0 && cls != kUnconditional) eps = cfg_combine(eps, predict(x, t, kUnconditional), omega);
    const double beta = sched.beta_at(t);
    const double c1 = 1.0 / std::sqrt(sched.alpha_at(t));
    const double c2 = beta / std::sqrt(1.0 - sched.alpha_bar_at(t));
    const double sigma = std::sqrt(beta);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = c1 * (x[i] - c2 * eps[i]);
      if (t > 1) x[i] += sigma * rng.normal();
    }
    if (!x.all_finite()) throw NumericError("reverse_sample: non-finite state at step " + std::to_string(t));
  }
  return x;
}

inline SampleBatch sample_latents(const ConditionalDenoiser& den, const NoiseSchedule& sched, int cls, double omega,
                                  RngStream& rng, std::size_t n) {
  SampleProvenance prov{sched.hash(), den.hash(), cls, omega, rng.seed(), rng.stream_id()};
  return SampleBatch{reverse_sample(den, sched, den.config().latent_dim, cls, omega, rng, n), prov};
}

struct DiffusionTrainConfig {
  std::size_t steps = 6000;
  std::size_t batch = 128;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double drop_p = kConditioningDrop;
  bool balanced = true;  // draw the class first, then a row containing it
};

inline void to_json(nlohmann::json& j, const DiffusionTrainConfig& c) {
  j = nlohmann::json{{"steps", c.steps}, {"batch", c.batch}, {"lr", c.lr}, {"weight_decay", c.weight_decay},
                     {"drop_p", c.drop_p}, {"balanced", c.balanced}};
}
inline void from_json(const nlohmann::json& j, DiffusionTrainConfig& c) {
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.drop_p = j.value("drop_p", c.drop_p);
  c.balanced = j.value("balanced", c.balanced);
}

/// Trains the denoiser with AdamW(0.5, 0.999) on fixed latents. Returns the
/// per-step loss curve.
///
/// Balanced mode: with probability drop_p a uniformly drawn row is paired with
/// the null class; otherwise a class is drawn uniformly, then a row whose class
/// set holds it. Otherwise each uniformly drawn row is conditioned on a class
/// from its own set and the condition is dropped with probability drop_p.
inline std::vector<double> train_denoiser(ConditionalDenoiser& den, const Tensor& latents,
                                          const std::vector<std::vector<int>>& class_sets, const NoiseSchedule& sched,
                                          const DiffusionTrainConfig& cfg, RngStream& rng) {
  if (latents.rows() != class_sets.size()) throw std::invalid_argument("train_denoiser: one class set per latent");
  auto params = den.parameters();
  AdamState opt(AdamConfig::adamw(cfg.lr, cfg.weight_decay), params);
  std::vector<double> curve;
  curve.reserve(cfg.steps);
  std::vector<std::size_t> idx(cfg.batch), t(cfg.batch);
  std::vector<int> cls(cfg.batch);
  std::vector<std::vector<std::size_t>> by_class(den.config().num_classes);
  for (std::size_t r = 0; r < class_sets.size(); ++r)
    for (int c : class_sets[r])
      if (c >= 0 && static_cast<std::size_t>(c) < by_class.size()) by_class[static_cast<std::size_t>(c)].push_back(r);
  std::vector<int> seen;
  for (std::size_t c = 0; c < by_class.size(); ++c)
    if (!by_class[c].empty()) seen.push_back(static_cast<int>(c));
  const bool balanced = cfg.balanced && !seen.empty();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      if (balanced && rng.uniform() >= cfg.drop_p) {
        cls[i] = seen[rng.uniform_index(seen.size())];
        const auto& rows = by_class[static_cast<std::size_t>(cls[i])];
        idx[i] = rows[rng.uniform_index(rows.size())];
      } else {
        idx[i] = rng.uniform_index(latents.rows());
        const auto& cs = class_sets[idx[i]];
        cls[i] = balanced || cs.empty() ? kUnconditional : cs[rng.uniform_index(cs.size())];
      }
      t[i] = 1 + rng.uniform_index(sched.steps());
    }
    Tensor z0 = take_rows(latents, idx);
    Tensor eps = gaussian(rng, z0.shape());
    auto res = loss_simple(den, z0, cls, t, eps, sched, rng, balanced ? 0.0 : cfg.drop_p);
    adam_step(opt, params, res.grads);
    den.set_parameters(params);
    curve.push_back(res.loss);
  }
  return curve;
}

}  // namespace gauda
