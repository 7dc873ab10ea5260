#pragma once
// Dense row-major tensor of doubles and the handful of kernels the rest of
// the library is built on.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gauda {

using Shape = std::vector<std::size_t>;

/// Raised when a computation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on malformed configuration or arguments that are not shape errors.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a required on-disk artifact (checkpoint, dataset) is absent.
class MissingArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != shape_size(shape_))
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> d;
    d.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw std::invalid_argument("ragged matrix literal");
      d.insert(d.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(d));
  }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const {
    require_matrix();
    return shape_[0];
  }
  std::size_t cols() const {
    require_matrix();
    return shape_[1];
  }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }
  std::span<double> row_span(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }

  double item() const {
    if (data_.size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape s) const {
    if (shape_size(s) != data_.size())
      throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  static void validate_shape(const Shape& s) {
    if (s.empty()) throw std::invalid_argument("tensor shape must have at least one dimension");
    for (auto d : s)
      if (d == 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_str(s));
  }
  void require_matrix() const {
    if (shape_.size() != 2) throw std::invalid_argument("expected a matrix, got shape " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

inline const Tensor& ensure_finite(const Tensor& t, const char* where) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite value produced by ") + where);
  return t;
}

inline Tensor checked(Tensor t, const char* where) {
  ensure_finite(t, where);
  return t;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

// ---------------------------------------------------------------------------
// Kernels. Unchecked variants (suffix _raw) are used on hot paths inside the
// autodiff tape, which validates finiteness at the loss.

namespace detail {

// out[m×n] += a[m×k] · b[k×n]
inline void gemm_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * bp[j];
    }
  }
}

// out[k×n] += aᵀ · g, a[m×k], g[m×n]
inline void gemm_at_b_acc(const double* a, const double* g, double* out, std::size_t m, std::size_t k,
                          std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* o = out + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * gi[j];
    }
  }
}

// out[m×k] += g · bᵀ, g[m×n], b[k×n]
inline void gemm_a_bt_acc(const double* g, const double* b, double* out, std::size_t m, std::size_t k,
                          std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* o = out + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      o[p] += s;
    }
  }
}

}  // namespace detail

inline Tensor matmul_raw(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " · " +
                                shape_str(b.shape()));
  Tensor out({a.rows(), b.cols()});
  detail::gemm_acc(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(), b.cols());
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) { return checked(matmul_raw(a, b), "matmul"); }

inline Tensor transpose(const Tensor& a) {
  Tensor out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <class F>
Tensor map(const Tensor& a, F&& f) {
  Tensor out = a;
  for (auto& v : out.data()) v = f(v);
  return out;
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, F&& f, const char* op) {
  require_same_shape(a, b, op);
  Tensor out = a;
  auto od = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = f(od[i], bd[i]);
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return checked(zip(a, b, std::plus<>{}, "add"), "add");
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return checked(zip(a, b, std::minus<>{}, "sub"), "sub");
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return checked(zip(a, b, std::multiplies<>{}, "mul"), "mul");
}
inline Tensor scale(const Tensor& a, double s) {
  return checked(map(a, [s](double v) { return v * s; }), "scale");
}

/// Adds a 1×n row to every row of an m×n matrix.
inline Tensor add_row(const Tensor& a, const Tensor& row) {
  if (a.ndim() != 2 || row.size() != a.cols())
    throw std::invalid_argument("add_row: cannot broadcast " + shape_str(row.shape()) + " over " +
                                shape_str(a.shape()));
  Tensor out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = out.row_span(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += row[j];
  }
  return checked(std::move(out), "add_row");
}

inline Tensor relu(const Tensor& a) {
  return map(a, [](double v) { return v > 0.0 ? v : 0.0; });
}

/// Row-wise softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& logits) {
  Tensor out = logits;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row_span(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (auto& v : r) s += (v = std::exp(v - mx));
    for (auto& v : r) v /= s;
  }
  return checked(std::move(out), "softmax");
}

inline double sum(const Tensor& a) { return std::accumulate(a.data().begin(), a.data().end(), 0.0); }
inline double mean(const Tensor& a) { return sum(a) / static_cast<double>(a.size()); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Horizontal concatenation of matrices with equal row counts.
inline Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw std::invalid_argument("concat_cols: row count mismatch");
    c += p.cols();
  }
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      auto src = p.row_span(i);
      std::copy(src.begin(), src.end(), out.row_span(i).begin() + static_cast<std::ptrdiff_t>(off));
      off += p.cols();
    }
  }
  return out;
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin >= end || end > a.cols()) throw std::invalid_argument("slice_cols: bad range");
  Tensor out({a.rows(), end - begin});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto src = a.row_span(i);
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(begin), src.begin() + static_cast<std::ptrdiff_t>(end),
              out.row_span(i).begin());
  }
  return out;
}

/// Gathers the given rows of a matrix, in order.
inline Tensor take_rows(const Tensor& a, std::span<const std::size_t> idx) {
  Tensor out({idx.size(), a.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = a.row_span(idx[i]);
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  return out;
}

inline Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
  const std::size_t c = rows[0].size();
  Tensor out({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != c) throw std::invalid_argument("stack_rows: length mismatch");
    std::copy(rows[i].data().begin(), rows[i].data().end(), out.row_span(i).begin());
  }
  return out;
}

/// Index of the largest element in a row; the lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace gauda
