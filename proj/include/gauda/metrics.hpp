#pragma once
// Segmentation scores (IoU, Dice, AP), table aggregates, effect size,
// polynomial-kernel MMD, and the append-only metrics log.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gauda/rng.hpp"
#include "gauda/tensor.hpp"

namespace gauda {

using LabelScores = std::vector<std::optional<double>>;

namespace detail {
inline void require_same_length(std::size_t a, std::size_t b, const char* op) {
  if (a != b) throw std::invalid_argument(std::string(op) + ": prediction and truth differ in size");
}
}  // namespace detail

/// Per-label intersection over union of two label maps. Labels in neither map are nullopt.
inline LabelScores iou_per_label(std::span<const int> pred, std::span<const int> truth, std::size_t k) {
  detail::require_same_length(pred.size(), truth.size(), "iou_per_label");
  std::vector<std::size_t> inter(k, 0), uni(k, 0);
  for (std::size_t p = 0; p < pred.size(); ++p) {
    const auto a = static_cast<std::size_t>(pred[p]), b = static_cast<std::size_t>(truth[p]);
    if (a >= k || b >= k) throw std::invalid_argument("iou_per_label: label out of range");
    if (a == b) {
      ++inter[a];
      ++uni[a];
    } else {
      ++uni[a];
      ++uni[b];
    }
  }
  LabelScores out(k);
  for (std::size_t c = 0; c < k; ++c)
    if (uni[c]) out[c] = static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
  return out;
}

/// Label map of a one-hot [K×H×W] mask (lowest channel on ties).
inline std::vector<int> mask_labels(const Tensor& mask) {
  if (mask.ndim() != 3) throw std::invalid_argument("mask must be K×H×W");
  const std::size_t k = mask.shape()[0], n = mask.size() / k;
  std::vector<int> out(n, 0);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 1; c < k; ++c)
      if (mask[c * n + p] > mask[static_cast<std::size_t>(out[p]) * n + p]) out[p] = static_cast<int>(c);
  return out;
}

inline LabelScores iou_per_label(const Tensor& pred_mask, const Tensor& true_mask) {
  if (pred_mask.shape() != true_mask.shape()) throw std::invalid_argument("iou_per_label: mask shapes differ");
  return iou_per_label(mask_labels(pred_mask), mask_labels(true_mask), pred_mask.shape()[0]);
}

/// 2|A∩B|/(|A|+|B|) per label on label maps.
inline LabelScores dice_per_label(std::span<const int> pred, std::span<const int> truth, std::size_t k) {
  detail::require_same_length(pred.size(), truth.size(), "dice_per_label");
  std::vector<std::size_t> inter(k, 0), na(k, 0), nb(k, 0);
  for (std::size_t p = 0; p < pred.size(); ++p) {
    const auto a = static_cast<std::size_t>(pred[p]), b = static_cast<std::size_t>(truth[p]);
    if (a >= k || b >= k) throw std::invalid_argument("dice_per_label: label out of range");
    ++na[a];
    ++nb[b];
    if (a == b) ++inter[a];
  }
  LabelScores out(k);
  for (std::size_t c = 0; c < k; ++c)
    if (na[c] + nb[c]) out[c] = 2.0 * static_cast<double>(inter[c]) / static_cast<double>(na[c] + nb[c]);
  return out;
}

/// Area under the precision/recall curve of scores against binary targets.
/// Thresholds are the distinct scores; the curve starts at (recall 0, precision 1)
/// and is integrated with the trapezoid rule. nullopt without positives.
inline std::optional<double> average_precision(std::span<const double> scores, std::span<const bool> positive) {
  detail::require_same_length(scores.size(), positive.size(), "average_precision");
  const auto npos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  if (npos == 0) return std::nullopt;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double area = 0.0, prev_r = 0.0, prev_p = 1.0;
  std::size_t tp = 0, taken = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      ++taken;
      tp += positive[order[i]];
    }
    const double r = static_cast<double>(tp) / static_cast<double>(npos);
    const double p = static_cast<double>(tp) / static_cast<double>(taken);
    area += (r - prev_r) * (p + prev_p) / 2.0;
    prev_r = r;
    prev_p = p;
  }
  return area;
}

/// Per-label AP from an (pixels × K) probability table and the true label map.
inline LabelScores ap_per_label(const Tensor& probs, std::span<const int> truth) {
  if (probs.rows() != truth.size()) throw std::invalid_argument("ap_per_label: row count differs from label map");
  const std::size_t k = probs.cols();
  LabelScores out(k);
  std::vector<double> s(truth.size());
  auto pos = std::make_unique<bool[]>(truth.size());
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t p = 0; p < truth.size(); ++p) {
      s[p] = probs(p, c);
      pos[p] = truth[p] == static_cast<int>(c);
    }
    out[c] = average_precision(s, std::span<const bool>(pos.get(), truth.size()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation over a sample × label table.

enum class Aggregate { label_mean, sample_mean, sample_median };

inline std::string to_string(Aggregate a) {
  switch (a) {
    case Aggregate::label_mean: return "Label Mean";
    case Aggregate::sample_mean: return "Sample Mean";
    case Aggregate::sample_median: return "Sample Median";
  }
  return "?";
}

/// Snake-case label used for aggregate rows in metrics.csv.
inline std::string key(Aggregate a) {
  switch (a) {
    case Aggregate::label_mean: return "label_mean";
    case Aggregate::sample_mean: return "sample_mean";
    case Aggregate::sample_median: return "sample_median";
  }
  return "?";
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean_of(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("mean of empty set");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Mean over samples of each label's defined scores.
inline LabelScores per_label_means(const std::vector<LabelScores>& table) {
  if (table.empty()) return {};
  const std::size_t k = table[0].size();
  std::vector<double> s(k, 0.0);
  std::vector<std::size_t> n(k, 0);
  for (const auto& row : table)
    for (std::size_t c = 0; c < k; ++c)
      if (row.at(c)) {
        s[c] += *row[c];
        ++n[c];
      }
  LabelScores out(k);
  for (std::size_t c = 0; c < k; ++c)
    if (n[c]) out[c] = s[c] / static_cast<double>(n[c]);
  return out;
}

/// Mean of each sample's defined label scores; samples with none are skipped.
inline std::vector<double> per_sample_means(const std::vector<LabelScores>& table) {
  std::vector<double> out;
  for (const auto& row : table) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& v : row)
      if (v) {
        s += *v;
        ++n;
      }
    if (n) out.push_back(s / static_cast<double>(n));
  }
  return out;
}

inline double aggregate(const std::vector<LabelScores>& table, Aggregate mode) {
  if (table.empty()) throw std::invalid_argument("aggregate: no rows");
  if (mode == Aggregate::label_mean) {
    std::vector<double> defined;
    for (const auto& v : per_label_means(table))
      if (v) defined.push_back(*v);
    if (defined.empty()) throw std::invalid_argument("aggregate: every score is undefined");
    return mean_of(defined);
  }
  const auto s = per_sample_means(table);
  if (s.empty()) throw std::invalid_argument("aggregate: every score is undefined");
  return mode == Aggregate::sample_mean ? mean_of(s) : median(s);
}

/// Pooled-variance standardized mean difference; nullopt when the pooled variance is zero.
inline std::optional<double> cohens_d(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("cohens_d: each group needs at least two values");
  const double ma = mean_of(a), mb = mean_of(b);
  double ss = 0.0;
  for (double v : a) ss += (v - ma) * (v - ma);
  for (double v : b) ss += (v - mb) * (v - mb);
  const double pooled = ss / static_cast<double>(a.size() + b.size() - 2);
  if (!(pooled > 0.0)) return std::nullopt;
  return (ma - mb) / std::sqrt(pooled);
}

// ---------------------------------------------------------------------------
// Kernel MMD with k(x,y) = (xᵀy/d + 1)³.

inline double poly_kernel(std::span<const double> x, std::span<const double> y) {
  double dot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * y[i];
  const double v = dot / static_cast<double>(x.size()) + 1.0;
  return v * v * v;
}

/// Unbiased MMD² U-statistic between the rows of x and the rows of y.
inline double mmd_unbiased(const Tensor& x, const Tensor& y) {
  if (x.ndim() != 2 || y.ndim() != 2 || x.cols() != y.cols())
    throw std::invalid_argument("kernel_mmd: feature dimension mismatch");
  const std::size_t n = x.rows(), m = y.rows();
  if (n < 2 || m < 2) throw std::invalid_argument("kernel_mmd: each set needs at least two vectors");
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) kxx += poly_kernel(x.row_span(i), x.row_span(j));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) kyy += poly_kernel(y.row_span(i), y.row_span(j));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) kxy += poly_kernel(x.row_span(i), y.row_span(j));
  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  return 2.0 * kxx / (dn * (dn - 1.0)) + 2.0 * kyy / (dm * (dm - 1.0)) - 2.0 * kxy / (dn * dm);
}

struct MmdEstimate {
  double value = 0.0;  // full-sample estimate
  double std = 0.0;    // spread of estimates over random half-size subsets
  std::size_t subsets = 0;
};

inline MmdEstimate kernel_mmd(const Tensor& x, const Tensor& y, RngStream rng, std::size_t subsets = 10) {
  MmdEstimate e{mmd_unbiased(x, y), 0.0, subsets};
  const std::size_t sub = std::max<std::size_t>(2, std::min(x.rows(), y.rows()) / 2);
  auto pick = [&](std::size_t n) {
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    rng.shuffle(ids);
    ids.resize(sub);
    return ids;
  };
  std::vector<double> vals;
  for (std::size_t s = 0; s < subsets; ++s) {
    const auto ix = pick(x.rows()), iy = pick(y.rows());
    vals.push_back(mmd_unbiased(take_rows(x, ix), take_rows(y, iy)));
  }
  if (vals.size() >= 2) {
    const double mu = mean_of(vals);
    double ss = 0.0;
    for (double v : vals) ss += (v - mu) * (v - mu);
    e.std = std::sqrt(ss / static_cast<double>(vals.size() - 1));
  }
  return e;
}

// ---------------------------------------------------------------------------
// metrics.csv: step, split, policy, metric, label, value.

inline std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct MetricRow {
  std::int64_t step = 0;
  std::string split;
  std::string policy;
  std::string metric;
  std::string label;  // class index or "ALL"
  double value = 0.0;
};

class RunMetrics {
 public:
  void add(std::int64_t step, std::string split, std::string policy, std::string metric, std::string label, double value) {
    rows_.push_back({step, std::move(split), std::move(policy), std::move(metric), std::move(label), value});
  }
  void add(std::int64_t step, const std::string& split, const std::string& policy, const std::string& metric,
           std::size_t label, double value) {
    add(step, split, policy, metric, std::to_string(label), value);
  }
  void append(const RunMetrics& other) { rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end()); }

  const std::vector<MetricRow>& rows() const noexcept { return rows_; }

  std::vector<MetricRow> select(const std::string& split, const std::string& metric) const {
    std::vector<MetricRow> out;
    for (const auto& r : rows_)
      if (r.split == split && r.metric == metric) out.push_back(r);
    return out;
  }

  std::optional<double> find(const std::string& split, const std::string& metric, const std::string& label) const {
    std::optional<double> v;
    for (const auto& r : rows_)
      if (r.split == split && r.metric == metric && r.label == label) v = r.value;
    return v;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "step,split,policy,metric,label,value\n";
    for (const auto& r : rows_)
      os << r.step << ',' << r.split << ',' << r.policy << ',' << r.metric << ',' << r.label << ','
         << format_value(r.value) << '\n';
    return os.str();
  }

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << to_csv();
  }

  static RunMetrics read_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw MissingArtifactError("missing " + path.string());
    RunMetrics m;
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
      if (f.size() != 6) throw std::runtime_error("malformed metrics row: " + line);
      m.add(std::stoll(f[0]), f[1], f[2], f[3], f[4], std::stod(f[5]));
    }
    return m;
  }

 private:
  std::vector<MetricRow> rows_;
};

}  // namespace gauda
