#pragma once
// Paired (image, mask) samples and the flat training examples derived from them.

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gauda/tensor.hpp"

namespace gauda {

/// Sorted distinct labels occurring in a label map.
inline std::vector<int> presence_of(std::span<const int> labels) {
  std::vector<int> out(labels.begin(), labels.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline bool contains(std::span<const int> sorted_set, int c) {
  return std::binary_search(sorted_set.begin(), sorted_set.end(), c);
}

/// Image [C×H×W] in [0,1], one-hot mask [K×H×W], and the labels present in the mask.
struct PairedSample {
  Tensor image;
  Tensor mask;
  std::vector<int> presence;

  std::size_t channels() const { return image.shape()[0]; }
  std::size_t classes() const { return mask.shape()[0]; }
  std::size_t height() const { return mask.shape()[1]; }
  std::size_t width() const { return mask.shape()[2]; }
  std::size_t pixels() const { return height() * width(); }

  static PairedSample from_labels(Tensor image, std::span<const int> labels, std::size_t k) {
    if (image.ndim() != 3) throw std::invalid_argument("paired sample image must be C×H×W");
    const std::size_t h = image.shape()[1], w = image.shape()[2];
    if (labels.size() != h * w) throw std::invalid_argument("label map does not match image size");
    Tensor mask({k, h, w});
    for (std::size_t p = 0; p < labels.size(); ++p) {
      if (labels[p] < 0 || static_cast<std::size_t>(labels[p]) >= k)
        throw std::invalid_argument("label " + std::to_string(labels[p]) + " out of range");
      mask[static_cast<std::size_t>(labels[p]) * h * w + p] = 1.0;
    }
    return PairedSample{std::move(image), std::move(mask), presence_of(labels)};
  }

  /// Per-pixel argmax of the mask; the lowest class wins ties.
  std::vector<int> labels() const {
    const std::size_t k = classes(), n = pixels();
    std::vector<int> out(n, 0);
    for (std::size_t p = 0; p < n; ++p) {
      double best = mask[p];
      for (std::size_t c = 1; c < k; ++c)
        if (mask[c * n + p] > best) {
          best = mask[c * n + p];
          out[p] = static_cast<int>(c);
        }
    }
    return out;
  }

  /// Throws unless the mask is one-hot and `presence` matches it.
  void validate() const {
    if (mask.ndim() != 3 || image.ndim() != 3) throw std::invalid_argument("paired sample tensors must be 3-D");
    if (image.shape()[1] != height() || image.shape()[2] != width())
      throw std::invalid_argument("image and mask spatial sizes differ");
    const std::size_t k = classes(), n = pixels();
    for (std::size_t p = 0; p < n; ++p) {
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double v = mask[c * n + p];
        if (v != 0.0 && v != 1.0) throw std::invalid_argument("mask is not one-hot");
        s += v;
      }
      if (s != 1.0) throw std::invalid_argument("mask channels do not sum to 1 at pixel " + std::to_string(p));
    }
    if (presence_of(labels()) != presence) throw std::invalid_argument("class-presence set does not match mask");
  }
};

/// Flat downstream example: input features, per-pixel labels (one entry for
/// classification) and the sorted set of labels present.
struct Example {
  std::vector<double> input;
  std::vector<int> labels;
  std::vector<int> presence;
};

/// Image pixels become the input vector, shifted to be zero-centred.
inline Example to_example(const PairedSample& s) {
  Example e;
  e.input.reserve(s.image.size());
  for (double v : s.image.data()) e.input.push_back(v - 0.5);
  e.labels = s.labels();
  e.presence = s.presence;
  return e;
}

inline Example point_example(std::vector<double> point, int label) {
  return Example{std::move(point), {label}, {label}};
}

/// Rows of inputs for the given example indices.
inline Tensor gather_inputs(std::span<const Example* const> batch) {
  if (batch.empty()) throw std::invalid_argument("gather_inputs: empty batch");
  const std::size_t d = batch[0]->input.size();
  Tensor out({batch.size(), d});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i]->input.size() != d) throw std::invalid_argument("gather_inputs: ragged inputs");
    std::copy(batch[i]->input.begin(), batch[i]->input.end(), out.row_span(i).begin());
  }
  return out;
}

}  // namespace gauda
