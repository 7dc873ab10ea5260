#pragma once
// Deep ensembles: k independently initialised MLPs whose softmax outputs form a
// posterior set. The mean is the final prediction; across-member variance of
// the predicted class gives per-class epistemic uncertainty.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "gauda/losses.hpp"
#include "gauda/nn.hpp"
#include "gauda/rng.hpp"
#include "gauda/sample.hpp"
#include "gauda/tensor.hpp"

namespace gauda {

enum class Task { classification, segmentation };

struct EnsembleConfig {
  std::size_t members = 10;
  std::vector<std::size_t> hidden{64};
  double dropout_p = 0.0;
  AdamConfig adam = AdamConfig::adam();
  std::size_t input_dim = 2;
  std::size_t pixels = 1;  // output heads per example; 1 for classification
  std::size_t classes = 2;

  Task task() const { return pixels > 1 ? Task::segmentation : Task::classification; }
};

inline void to_json(nlohmann::json& j, const EnsembleConfig& c) {
  j = nlohmann::json{{"members", c.members}, {"hidden", c.hidden},       {"dropout_p", c.dropout_p},
                     {"adam", c.adam},       {"input_dim", c.input_dim}, {"pixels", c.pixels},
                     {"classes", c.classes}};
}
inline void from_json(const nlohmann::json& j, EnsembleConfig& c) {
  c.members = j.value("members", c.members);
  c.hidden = j.value("hidden", c.hidden);
  c.dropout_p = j.value("dropout_p", c.dropout_p);
  if (j.contains("adam")) j.at("adam").get_to(c.adam);
  c.input_dim = j.value("input_dim", c.input_dim);
  c.pixels = j.value("pixels", c.pixels);
  c.classes = j.value("classes", c.classes);
}

/// k probability tables, each (examples·pixels) × K. `untrained` marks sets
/// produced by members that have not taken a single optimisation step.
struct PosteriorSet {
  std::vector<Tensor> predictions;
  bool untrained = false;

  std::size_t members() const { return predictions.size(); }
  std::size_t rows() const { return predictions.at(0).rows(); }
  std::size_t classes() const { return predictions.at(0).cols(); }
};

/// Elementwise mean of the member predictions.
inline Tensor mean_prediction(const PosteriorSet& ps) {
  if (ps.predictions.empty()) throw std::invalid_argument("mean_prediction: empty posterior set");
  Tensor out(ps.predictions[0].shape());
  for (const auto& p : ps.predictions) {
    require_same_shape(out, p, "mean_prediction");
    for (std::size_t i = 0; i < p.size(); ++i) out[i] += p[i];
  }
  const double k = static_cast<double>(ps.members());
  for (auto& v : out.data()) v /= k;
  return out;
}

/// Per-class mean over the rows predicted as that class (argmax of m_final) of
/// the population variance of the members' probability for the class.
/// Classes never predicted are nullopt.
inline std::vector<std::optional<double>> class_uncertainty(const PosteriorSet& ps, const Tensor& m_final) {
  if (ps.members() < 2) throw std::invalid_argument("class_uncertainty: need at least two members");
  const std::size_t R = m_final.rows(), K = m_final.cols();
  const double k = static_cast<double>(ps.members());
  std::vector<double> sum(K, 0.0);
  std::vector<std::size_t> count(K, 0);
  for (std::size_t r = 0; r < R; ++r) {
    const std::size_t c = argmax(m_final.row_span(r));
    // Shifted by the first member so identical members give exactly zero.
    const double x0 = ps.predictions[0](r, c);
    double s1 = 0.0, s2 = 0.0;
    for (const auto& p : ps.predictions) {
      const double d = p(r, c) - x0;
      s1 += d;
      s2 += d * d;
    }
    sum[c] += std::max(0.0, s2 / k - (s1 / k) * (s1 / k));
    ++count[c];
  }
  std::vector<std::optional<double>> out(K);
  for (std::size_t c = 0; c < K; ++c)
    if (count[c]) out[c] = sum[c] / static_cast<double>(count[c]);
  return out;
}

inline std::vector<std::optional<double>> class_uncertainty(const PosteriorSet& ps) {
  return class_uncertainty(ps, mean_prediction(ps));
}

class EnsembleModel {
 public:
  EnsembleModel() = default;

  EnsembleModel(EnsembleConfig cfg, const RngStream& rng) : cfg_(std::move(cfg)) {
    if (cfg_.members < 2) throw std::invalid_argument("ensemble needs at least two members");
    if (cfg_.classes < 2) throw std::invalid_argument("ensemble needs at least two classes");
    std::vector<std::size_t> widths{cfg_.input_dim};
    widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    widths.push_back(cfg_.pixels * cfg_.classes);
    for (std::size_t i = 0; i < cfg_.members; ++i) {
      RngStream r = rng.split(i);
      members_.emplace_back(MlpConfig{widths, cfg_.dropout_p}, r);
      opts_.emplace_back(cfg_.adam, members_.back().parameters());
    }
  }

  const EnsembleConfig& config() const noexcept { return cfg_; }
  std::size_t size() const noexcept { return members_.size(); }
  MlpModel& member(std::size_t i) { return members_.at(i); }
  const MlpModel& member(std::size_t i) const { return members_.at(i); }
  bool trained() const {
    for (const auto& o : opts_)
      if (o.step == 0) return false;
    return true;
  }

  /// Softmax table of one member for inputs x (N × input_dim), eval mode.
  Tensor member_probabilities(std::size_t i, const Tensor& x) const {
    return softmax_rows(members_.at(i).predict(x).reshaped({x.rows() * cfg_.pixels, cfg_.classes}));
  }

  PosteriorSet predict_posterior(const Tensor& x) const {
    PosteriorSet ps;
    ps.untrained = !trained();
    ps.predictions.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) ps.predictions.push_back(member_probabilities(i, x));
    return ps;
  }

  /// One Adam step of member i on a batch. Labels hold pixels entries per row
  /// of x. Returns the mean cross-entropy.
  double train_step(std::size_t i, const Tensor& x, std::span<const int> labels, RngStream& rng) {
    const std::size_t n = x.rows();
    if (labels.size() != n * cfg_.pixels) throw std::invalid_argument("train_step: label count does not match batch");
    auto& m = members_.at(i);
    Tape tape;
    auto bound = m.bind(tape);
    Var logits = tape.reshape(m.forward(tape, bound, tape.constant(x), Mode::train, &rng), {n * cfg_.pixels, cfg_.classes});
    Var loss = tape.cross_entropy(logits, one_hot(labels, cfg_.classes));
    const double l = tape.value(loss).item();
    if (!std::isfinite(l)) throw NumericError("ensemble member " + std::to_string(i) + ": non-finite loss");
    tape.backward(loss);
    adam_step(opts_[i], m.parameters(), m.gradients(tape, bound));
    return l;
  }

  void save(const std::filesystem::path& dir, std::uint64_t seed) const {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < size(); ++i) members_[i].save(dir / ("member_" + std::to_string(i)));
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& o : opts_) steps.push_back(o.step);
    nlohmann::json j{{"k", size()},
                     {"task", cfg_.task() == Task::segmentation ? "segmentation" : "classification"},
                     {"seed", seed},
                     {"member_streams", nlohmann::json::array()},
                     {"steps", steps},
                     {"config", cfg_}};
    for (std::size_t i = 0; i < size(); ++i) j["member_streams"].push_back(i);
    std::ofstream(dir / "ensemble.json") << j.dump(2) << '\n';
  }

  static EnsembleModel load(const std::filesystem::path& dir) {
    std::ifstream js(dir / "ensemble.json");
    if (!js) throw MissingArtifactError("missing " + (dir / "ensemble.json").string());
    const auto j = nlohmann::json::parse(js);
    EnsembleModel e;
    e.cfg_ = j.at("config").get<EnsembleConfig>();
    const auto steps = j.at("steps").get<std::vector<std::uint64_t>>();
    for (std::size_t i = 0; i < j.at("k").get<std::size_t>(); ++i) {
      e.members_.push_back(MlpModel::load(dir / ("member_" + std::to_string(i))));
      e.opts_.emplace_back(e.cfg_.adam, e.members_.back().parameters());
      e.opts_.back().step = steps.at(i);
    }
    return e;
  }

 private:
  EnsembleConfig cfg_;
  std::vector<MlpModel> members_;
  std::vector<AdamState> opts_;
};

}  // namespace gauda
