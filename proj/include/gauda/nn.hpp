#pragma once
// Multilayer perceptrons with inverted dropout, Adam/AdamW, and checkpointing.

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "gauda/losses.hpp"
#include "gauda/rng.hpp"
#include "gauda/serialize.hpp"
#include "gauda/tape.hpp"
#include "gauda/tensor.hpp"

namespace gauda {

enum class Mode { train, eval };

struct MlpConfig {
  std::vector<std::size_t> widths;  // input, hidden..., output
  double dropout_p = 0.0;
};

inline void to_json(nlohmann::json& j, const MlpConfig& c) {
  j = nlohmann::json{{"widths", c.widths}, {"dropout_p", c.dropout_p}};
}
inline void from_json(const nlohmann::json& j, MlpConfig& c) {
  j.at("widths").get_to(c.widths);
  c.dropout_p = j.value("dropout_p", 0.0);
}

/// Parameters bound onto a tape for one forward/backward pass.
struct BoundParams {
  std::vector<Var> vars;
};

class MlpModel {
 public:
  MlpModel() = default;

  /// He-normal weights, zero biases.
  MlpModel(MlpConfig cfg, RngStream& rng) : cfg_(std::move(cfg)) {
    validate();
    for (std::size_t l = 0; l + 1 < cfg_.widths.size(); ++l) {
      const std::size_t in = cfg_.widths[l], out = cfg_.widths[l + 1];
      Tensor w = gaussian(rng, {in, out});
      const double s = std::sqrt(2.0 / static_cast<double>(in));
      for (auto& v : w.data()) v *= s;
      params_.push_back(std::move(w));
      params_.emplace_back(Shape{1, out});
    }
  }

  static MlpModel zeros(MlpConfig cfg) {
    MlpModel m;
    m.cfg_ = std::move(cfg);
    m.validate();
    for (std::size_t l = 0; l + 1 < m.cfg_.widths.size(); ++l) {
      m.params_.emplace_back(Shape{m.cfg_.widths[l], m.cfg_.widths[l + 1]});
      m.params_.emplace_back(Shape{1, m.cfg_.widths[l + 1]});
    }
    return m;
  }

  const MlpConfig& config() const noexcept { return cfg_; }
  std::size_t input_width() const { return cfg_.widths.front(); }
  std::size_t output_width() const { return cfg_.widths.back(); }
  std::size_t num_layers() const { return cfg_.widths.size() - 1; }

  std::vector<Tensor>& parameters() noexcept { return params_; }
  const std::vector<Tensor>& parameters() const noexcept { return params_; }
  Tensor& weight(std::size_t layer) { return params_.at(2 * layer); }
  Tensor& bias(std::size_t layer) { return params_.at(2 * layer + 1); }

  BoundParams bind(Tape& tape) const {
    BoundParams b;
    b.vars.reserve(params_.size());
    for (const auto& p : params_) b.vars.push_back(tape.leaf(p));
    return b;
  }

  /// Forward pass recorded on `tape`. Dropout draws from `rng` in train mode only.
  Var forward(Tape& tape, const BoundParams& bound, Var x, Mode mode, RngStream* rng = nullptr) const {
    const Tensor& xv = tape.value(x);
    if (xv.ndim() != 2 || xv.cols() != input_width())
      throw std::invalid_argument("mlp forward: expected input width " + std::to_string(input_width()) + ", got " +
                                  shape_str(xv.shape()));
    const bool dropout = mode == Mode::train && cfg_.dropout_p > 0.0;
    if (dropout && rng == nullptr) throw std::invalid_argument("mlp forward: dropout in train mode needs an rng");
    Var h = x;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      h = tape.add_row(tape.matmul(h, bound.vars[2 * l]), bound.vars[2 * l + 1]);
      if (l + 1 == num_layers()) break;
      h = tape.relu(h);
      if (dropout) h = tape.mul(h, tape.constant(dropout_mask(tape.value(h).shape(), *rng)));
    }
    return h;
  }

  std::vector<Tensor> gradients(const Tape& tape, const BoundParams& bound) const {
    std::vector<Tensor> g;
    g.reserve(bound.vars.size());
    for (auto v : bound.vars) g.push_back(tape.grad(v));
    return g;
  }

  /// Deterministic eval-mode forward without recording a graph.
  Tensor predict(const Tensor& x) const {
    if (x.ndim() != 2 || x.cols() != input_width())
      throw std::invalid_argument("mlp predict: expected input width " + std::to_string(input_width()) + ", got " +
                                  shape_str(x.shape()));
    Tensor h = x;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      h = matmul_raw(h, params_[2 * l]);
      const Tensor& b = params_[2 * l + 1];
      for (std::size_t i = 0; i < h.rows(); ++i) {
        auto r = h.row_span(i);
        for (std::size_t j = 0; j < r.size(); ++j) {
          r[j] += b[j];
          if (l + 1 < num_layers() && r[j] < 0.0) r[j] = 0.0;
        }
      }
    }
    return checked(std::move(h), "mlp predict");
  }

  void save(const std::filesystem::path& stem) const {
    save_tensors(stem.string() + ".gaud", params_);
    std::ofstream(stem.string() + ".json") << nlohmann::json{{"kind", "mlp"}, {"config", cfg_}}.dump(2) << '\n';
  }

  static MlpModel load(const std::filesystem::path& stem) {
    std::ifstream js(stem.string() + ".json");
    if (!js) throw MissingArtifactError("missing manifest " + stem.string() + ".json");
    MlpModel m = zeros(nlohmann::json::parse(js).at("config").get<MlpConfig>());
    auto tensors = load_tensors(stem.string() + ".gaud");
    if (tensors.size() != m.params_.size()) throw std::runtime_error("checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      require_same_shape(tensors[i], m.params_[i], "mlp load");
      m.params_[i] = std::move(tensors[i]);
    }
    return m;
  }

 private:
  void validate() const {
    if (cfg_.widths.size() < 2) throw std::invalid_argument("mlp needs at least input and output widths");
    for (auto w : cfg_.widths)
      if (w == 0) throw std::invalid_argument("mlp layer widths must be positive");
    if (!(cfg_.dropout_p >= 0.0 && cfg_.dropout_p < 1.0)) throw std::invalid_argument("dropout_p must be in [0,1)");
  }

  // Inverted dropout: kept units are scaled by 1/(1-p) so eval needs no rescale.
  Tensor dropout_mask(const Shape& shape, RngStream& rng) const {
    Tensor m(shape);
    const double keep = 1.0 - cfg_.dropout_p;
    for (auto& v : m.data()) v = rng.uniform() < keep ? 1.0 / keep : 0.0;
    return m;
  }

  MlpConfig cfg_;
  std::vector<Tensor> params_;
};

// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  bool decoupled = false;  // AdamW

  static AdamConfig adam(double lr = 1e-3) { return {lr, 0.9, 0.999, 1e-8, 0.0, false}; }
  static AdamConfig adamw(double lr, double weight_decay = 0.0) { return {lr, 0.5, 0.999, 1e-8, weight_decay, true}; }
};

inline void to_json(nlohmann::json& j, const AdamConfig& c) {
  j = nlohmann::json{{"lr", c.lr},      {"beta1", c.beta1},
                     {"beta2", c.beta2}, {"eps", c.eps},
                     {"weight_decay", c.weight_decay}, {"decoupled", c.decoupled}};
}
inline void from_json(const nlohmann::json& j, AdamConfig& c) {
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.decoupled = j.value("decoupled", c.decoupled);
}

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(AdamConfig cfg, const std::vector<Tensor>& params) : config(cfg) {
    for (const auto& p : params) {
      m.emplace_back(p.shape());
      v.emplace_back(p.shape());
    }
  }
};

/// One bias-corrected Adam (or AdamW) update. Leaves everything untouched and
/// throws NumericError if any gradient is non-finite.
inline void adam_step(AdamState& st, std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i], grads[i], "adam_step");
    require_same_shape(params[i], st.m[i], "adam_step");
    if (!grads[i].all_finite())
      throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(i) + " at step " +
                         std::to_string(st.step + 1));
  }
  const auto& c = st.config;
  ++st.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = st.m[i].data();
    auto v = st.v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      double gj = g[j];
      if (!c.decoupled && c.weight_decay != 0.0) gj += c.weight_decay * p[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      const double mhat = m[j] / bc1, vhat = v[j] / bc2;
      if (c.decoupled && c.weight_decay != 0.0) p[j] -= c.lr * c.weight_decay * p[j];
      p[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace gauda
