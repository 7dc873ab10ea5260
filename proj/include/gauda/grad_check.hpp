#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>

#include "gauda/tape.hpp"
#include "gauda/tensor.hpp"

namespace gauda {

/// A scalar function that also reports its analytic gradient.
using DifferentiableFn = std::function<std::pair<double, Tensor>(const Tensor&)>;

/// Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12).
inline double grad_check(const DifferentiableFn& f, const Tensor& x, double h) {
  if (!(h >= 1e-6 && h <= 1e-3)) throw std::invalid_argument("grad_check: step must lie in [1e-6, 1e-3]");
  const auto [f0, analytic] = f(x);
  if (!std::isfinite(f0)) throw NumericError("grad_check: non-finite function value");
  require_same_shape(analytic, x, "grad_check");
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe).first;
    probe[i] = orig - h;
    const double fm = f(probe).first;
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("grad_check: non-finite function value");
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

/// Wraps a graph-building function of one input into a DifferentiableFn.
inline DifferentiableFn tape_function(std::function<Var(Tape&, Var)> build) {
  return [build = std::move(build)](const Tensor& x) {
    Tape tape;
    Var in = tape.leaf(x);
    Var out = build(tape, in);
    tape.backward(out);
    return std::pair<double, Tensor>{tape.value(out).item(), tape.grad(in)};
  };
}

}  // namespace gauda
