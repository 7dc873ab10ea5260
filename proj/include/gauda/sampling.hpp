#pragma once
// Class-weight policies for batch construction: static inverse-sqrt frequency,
// score-driven and uncertainty-driven online reweighting, and weighted draws.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gauda/log.hpp"
#include "gauda/rng.hpp"

namespace gauda {

enum class WeightSource { uniform, frequency, score, uncertainty };

inline std::string to_string(WeightSource s) {
  switch (s) {
    case WeightSource::uniform: return "uniform";
    case WeightSource::frequency: return "frequency";
    case WeightSource::score: return "score";
    case WeightSource::uncertainty: return "uncertainty";
  }
  return "?";
}

inline constexpr double kWeightFloor = 0.05;

struct ClassWeights {
  std::vector<double> weights;  // unnormalised, nonnegative
  WeightSource provenance = WeightSource::uniform;
  std::size_t step = 0;

  std::size_t classes() const { return weights.size(); }

  std::vector<double> normalized() const {
    double s = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("class weights must be finite and nonnegative");
      s += w;
    }
    if (!(s > 0.0)) throw std::invalid_argument("class weights need at least one positive entry");
    std::vector<double> out(weights);
    for (auto& w : out) w /= s;
    return out;
  }
};

inline ClassWeights uniform_weights(std::size_t k) { return ClassWeights{std::vector<double>(k, 1.0), WeightSource::uniform, 0}; }

/// w_c = 1/sqrt(f(c)). Classes with zero count get weight 0 and a warning.
inline ClassWeights freq_weights(std::span<const std::size_t> hist) {
  ClassWeights cw{std::vector<double>(hist.size(), 0.0), WeightSource::frequency, 0};
  for (std::size_t c = 0; c < hist.size(); ++c) {
    if (hist[c] == 0) {
      log_warning("freq_weights: class " + std::to_string(c) + " has zero count and is excluded");
      continue;
    }
    cw.weights[c] = 1.0 / std::sqrt(static_cast<double>(hist[c]));
  }
  if (std::all_of(cw.weights.begin(), cw.weights.end(), [](double w) { return w == 0.0; }))
    throw std::invalid_argument("freq_weights: every class count is zero");
  return cw;
}

/// w_c ∝ (1 − score_c) + η. Classes without a defined score count as solved (score 1).
inline ClassWeights score_adaptive_update(const ClassWeights& prev, std::span<const std::optional<double>> scores,
                                          double eta = kWeightFloor) {
  if (scores.size() != prev.classes()) throw std::invalid_argument("score_adaptive_update: class count mismatch");
  ClassWeights cw{std::vector<double>(scores.size()), WeightSource::score, prev.step + 1};
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const double s = scores[c].value_or(1.0);
    if (s < 0.0 || s > 1.0) throw std::invalid_argument("validation scores must lie in [0,1]");
    cw.weights[c] = (1.0 - s) + eta;
  }
  cw.weights = cw.normalized();
  return cw;
}

/// w_c ∝ UE_c + η. Absent classes take the largest observed UE.
inline ClassWeights uncertainty_adaptive_update(const ClassWeights& prev, std::span<const std::optional<double>> ue,
                                                double eta = kWeightFloor) {
  if (ue.size() != prev.classes()) throw std::invalid_argument("uncertainty_adaptive_update: class count mismatch");
  double mx = 0.0;
  for (const auto& u : ue)
    if (u) {
      if (*u < 0.0) throw std::invalid_argument("uncertainty must be nonnegative");
      mx = std::max(mx, *u);
    }
  ClassWeights cw{std::vector<double>(ue.size()), WeightSource::uncertainty, prev.step + 1};
  for (std::size_t c = 0; c < ue.size(); ++c) cw.weights[c] = ue[c].value_or(mx) + eta;
  cw.weights = cw.normalized();
  return cw;
}

enum class SampleWeightMode { mean, max };

/// Cumulative per-sample weights for drawing with replacement.
class BatchSampler {
 public:
  BatchSampler(const std::vector<std::vector<int>>& presence, const ClassWeights& cw,
               SampleWeightMode mode = SampleWeightMode::mean) {
    if (presence.empty()) throw std::invalid_argument("draw_batch: empty dataset");
    const auto w = cw.normalized();
    cdf_.reserve(presence.size());
    double acc = 0.0;
    for (const auto& p : presence) {
      double s = 0.0;
      for (int c : p) {
        if (c < 0 || static_cast<std::size_t>(c) >= w.size()) throw std::invalid_argument("draw_batch: class out of range");
        s = mode == SampleWeightMode::mean ? s + w[static_cast<std::size_t>(c)] : std::max(s, w[static_cast<std::size_t>(c)]);
      }
      if (mode == SampleWeightMode::mean && !p.empty()) s /= static_cast<double>(p.size());
      acc += s;
      cdf_.push_back(acc);
    }
    if (!(acc > 0.0)) throw std::invalid_argument("draw_batch: every sample has zero weight");
  }

  std::size_t size() const noexcept { return cdf_.size(); }

  /// Probability of drawing sample i.
  double probability(std::size_t i) const { return (cdf_[i] - (i ? cdf_[i - 1] : 0.0)) / cdf_.back(); }

  std::size_t draw(RngStream& rng) const {
    const double u = rng.uniform() * cdf_.back();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return static_cast<std::size_t>(std::min(it, cdf_.end() - 1) - cdf_.begin());
  }

  std::vector<std::size_t> draw(std::size_t b, RngStream& rng) const {
    if (b == 0) throw std::invalid_argument("draw_batch: batch size must be positive");
    std::vector<std::size_t> ids(b);
    for (auto& id : ids) id = draw(rng);
    return ids;
  }

 private:
  std::vector<double> cdf_;
};

inline std::vector<std::size_t> draw_batch(const std::vector<std::vector<int>>& presence, const ClassWeights& cw,
                                           std::size_t b, RngStream& rng,
                                           SampleWeightMode mode = SampleWeightMode::mean) {
  return BatchSampler(presence, cw, mode).draw(b, rng);
}

}  // namespace gauda
