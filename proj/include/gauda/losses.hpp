#pragma once
// Loss kernels returning the value together with the gradient w.r.t. the
// prediction. Shared by the autodiff tape and by callers that need a loss
// without building a graph.

#include <cmath>
#include <stdexcept>
#include <string>

#include "gauda/tensor.hpp"

namespace gauda {

struct LossGrad {
  double loss = 0.0;
  Tensor grad;
};

/// Mean squared error over all elements; gradient 2(pred - target)/N.
inline LossGrad mse(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse");
  const double n = static_cast<double>(pred.size());
  LossGrad out{0.0, Tensor(pred.shape())};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    out.loss += d * d;
    out.grad[i] = 2.0 * d / n;
  }
  out.loss /= n;
  if (!std::isfinite(out.loss)) throw NumericError("mse: non-finite loss");
  return out;
}

inline void require_one_hot_rows(const Tensor& target, const char* op) {
  for (std::size_t i = 0; i < target.rows(); ++i) {
    int ones = 0;
    for (double v : target.row_span(i)) {
      if (v == 1.0)
        ++ones;
      else if (v != 0.0)
        ones = 2;
    }
    if (ones != 1) throw std::invalid_argument(std::string(op) + ": target row " + std::to_string(i) + " is not one-hot");
  }
}

/// Mean softmax cross-entropy over rows of N×K logits against one-hot targets.
/// Computed through log-sum-exp so saturated logits stay finite.
inline LossGrad cross_entropy(const Tensor& logits, const Tensor& target) {
  require_same_shape(logits, target, "cross_entropy");
  require_one_hot_rows(target, "cross_entropy");
  const std::size_t n = logits.rows(), k = logits.cols();
  LossGrad out{0.0, Tensor(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto z = logits.row_span(i);
    auto t = target.row_span(i);
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(z[j] - lse);
      if (t[j] == 1.0) out.loss += lse - z[j];
      out.grad(i, j) = (p - t[j]) * inv_n;
    }
  }
  out.loss *= inv_n;
  if (!std::isfinite(out.loss)) throw NumericError("cross_entropy: non-finite loss");
  return out;
}

/// One-hot N×K matrix from integer labels.
inline Tensor one_hot(std::span<const int> labels, std::size_t k) {
  Tensor out({labels.size(), k});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw std::invalid_argument("one_hot: label out of range");
    out(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return out;
}

}  // namespace gauda
