#pragma once
// Reverse-mode differentiation over a closed set of tensor operations:
// matmul, add, row broadcast, mul, scale, ReLU, softmax, log, mean, plus the
// shape-only reshape/concat and two fused losses. Everything else is composed.

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "gauda/losses.hpp"
#include "gauda/tensor.hpp"

namespace gauda {

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

class Tape {
 public:
  Tape() { nodes_.reserve(64); }

  Var leaf(Tensor value) { return push(std::move(value), true, nullptr); }
  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  const Tensor& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient accumulated by backward(); zeros if the node never received one.
  Tensor grad(Var v) const {
    const Node& n = node(v);
    return n.has_grad ? n.grad : Tensor(n.value.shape());
  }

  /// Propagates d(root)/d(node) to every node reachable from a scalar root.
  void backward(Var root) {
    Node& r = node(root);
    if (r.value.size() != 1) throw std::invalid_argument("backward: root must be a scalar");
    if (!std::isfinite(r.value[0])) throw NumericError("backward: non-finite loss");
    grad_ref(root.id) = Tensor(r.value.shape(), 1.0);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      if (!nodes_[i].has_grad || !nodes_[i].backward) continue;
      // Closures only touch existing nodes, so nodes_ never reallocates here.
      nodes_[i].backward(*this, i);
    }
  }

  Var matmul(Var a, Var b) {
    Tensor out = matmul_raw(value(a), value(b));
    return op(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      const Tensor& av = t.value(a);
      const Tensor& bv = t.value(b);
      if (t.requires_grad(a))
        detail::gemm_a_bt_acc(g.data().data(), bv.data().data(), t.grad_ref(a.id).data().data(), av.rows(),
                              av.cols(), bv.cols());
      if (t.requires_grad(b))
        detail::gemm_at_b_acc(av.data().data(), g.data().data(), t.grad_ref(b.id).data().data(), av.rows(),
                              av.cols(), bv.cols());
    });
  }

  Var add(Var a, Var b) {
    require_same_shape(value(a), value(b), "tape add");
    Tensor out = value(a);
    auto od = out.data();
    auto bd = value(b).data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
    return op(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
      t.accumulate(a, t.nodes_[self].grad);
      t.accumulate(b, t.nodes_[self].grad);
    });
  }

  /// Adds a 1×n row to each row of an m×n matrix.
  Var add_row(Var a, Var row) {
    Tensor out = value(a);
    const Tensor& r = value(row);
    if (out.ndim() != 2 || r.size() != out.cols())
      throw std::invalid_argument("tape add_row: cannot broadcast " + shape_str(r.shape()) + " over " +
                                  shape_str(out.shape()));
    for (std::size_t i = 0; i < out.rows(); ++i) {
      auto o = out.row_span(i);
      for (std::size_t j = 0; j < o.size(); ++j) o[j] += r[j];
    }
    return op(std::move(out), {a, row}, [a, row](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      t.accumulate(a, g);
      if (t.requires_grad(row)) {
        Tensor& gr = t.grad_ref(row.id);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          auto gi = g.row_span(i);
          for (std::size_t j = 0; j < gi.size(); ++j) gr[j] += gi[j];
        }
      }
    });
  }

  Var mul(Var a, Var b) {
    require_same_shape(value(a), value(b), "tape mul");
    Tensor out = value(a);
    auto od = out.data();
    auto bd = value(b).data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
    return op(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      if (t.requires_grad(a)) {
        Tensor& ga = t.grad_ref(a.id);
        const Tensor& bv = t.value(b);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (t.requires_grad(b)) {
        Tensor& gb = t.grad_ref(b.id);
        const Tensor& av = t.value(a);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }

  Var scale(Var a, double s) {
    Tensor out = value(a);
    for (auto& v : out.data()) v *= s;
    return op(std::move(out), {a}, [a, s](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      if (!t.requires_grad(a)) return;
      Tensor& ga = t.grad_ref(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
  }

  Var relu(Var a) {
    Tensor out = value(a);
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return op(std::move(out), {a}, [a](Tape& t, std::size_t self) {
      if (!t.requires_grad(a)) return;
      const Tensor& g = t.nodes_[self].grad;
      const Tensor& x = t.value(a);
      Tensor& ga = t.grad_ref(a.id);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0.0) ga[i] += g[i];
    });
  }

  /// Row-wise softmax of a matrix.
  Var softmax(Var a) {
    Tensor out = softmax_rows(value(a));
    return op(std::move(out), {a}, [a](Tape& t, std::size_t self) {
      if (!t.requires_grad(a)) return;
      const Tensor& g = t.nodes_[self].grad;
      const Tensor& y = t.nodes_[self].value;
      Tensor& ga = t.grad_ref(a.id);
      for (std::size_t i = 0; i < y.rows(); ++i) {
        auto yi = y.row_span(i);
        auto gi = g.row_span(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < yi.size(); ++j) dot += yi[j] * gi[j];
        auto out = ga.row_span(i);
        for (std::size_t j = 0; j < yi.size(); ++j) out[j] += yi[j] * (gi[j] - dot);
      }
    });
  }

  Var log(Var a) {
    Tensor out = value(a);
    for (auto& v : out.data()) v = std::log(v);
    ensure_finite(out, "tape log");
    return op(std::move(out), {a}, [a](Tape& t, std::size_t self) {
      if (!t.requires_grad(a)) return;
      const Tensor& g = t.nodes_[self].grad;
      const Tensor& x = t.value(a);
      Tensor& ga = t.grad_ref(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
    });
  }

  /// Mean of all elements, as a 1-element tensor.
  Var mean(Var a) {
    Tensor out = Tensor::scalar(gauda::mean(value(a)));
    return op(std::move(out), {a}, [a](Tape& t, std::size_t self) {
      if (!t.requires_grad(a)) return;
      const double g = t.nodes_[self].grad[0] / static_cast<double>(t.value(a).size());
      Tensor& ga = t.grad_ref(a.id);
      for (auto& v : ga.data()) v += g;
    });
  }

  Var reshape(Var a, Shape s) {
    Tensor out = value(a).reshaped(std::move(s));
    return op(std::move(out), {a}, [a](Tape& t, std::size_t self) {
      if (!t.requires_grad(a)) return;
      const Tensor& g = t.nodes_[self].grad;
      Tensor& ga = t.grad_ref(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }

  Var concat_cols(std::span<const Var> parts) {
    std::vector<Tensor> vals;
    vals.reserve(parts.size());
    for (auto p : parts) vals.push_back(value(p));
    Tensor out = gauda::concat_cols(vals);
    std::vector<Var> ps(parts.begin(), parts.end());
    return op(std::move(out), ps, [ps](Tape& t, std::size_t self) {
      const Tensor& g = t.nodes_[self].grad;
      std::size_t off = 0;
      for (auto p : ps) {
        const std::size_t c = t.value(p).cols();
        if (t.requires_grad(p)) {
          Tensor& gp = t.grad_ref(p.id);
          for (std::size_t i = 0; i < g.rows(); ++i) {
            auto gi = g.row_span(i);
            auto o = gp.row_span(i);
            for (std::size_t j = 0; j < c; ++j) o[j] += gi[off + j];
          }
        }
        off += c;
      }
    });
  }

  /// Fused mean squared error against a constant target.
  Var mse(Var pred, const Tensor& target) {
    LossGrad lg = gauda::mse(value(pred), target);
    return op(Tensor::scalar(lg.loss), {pred}, [pred, g = std::move(lg.grad)](Tape& t, std::size_t self) {
      t.accumulate_scaled(pred, g, t.nodes_[self].grad[0]);
    });
  }

  /// Fused mean softmax cross-entropy of N×K logits against one-hot rows.
  Var cross_entropy(Var logits, const Tensor& target) {
    LossGrad lg = gauda::cross_entropy(value(logits), target);
    return op(Tensor::scalar(lg.loss), {logits}, [logits, g = std::move(lg.grad)](Tape& t, std::size_t self) {
      t.accumulate_scaled(logits, g, t.nodes_[self].grad[0]);
    });
  }

  /// Forward value `replacement`, backward identity to `z` (straight-through estimator).
  Var straight_through(Var z, Tensor replacement) {
    require_same_shape(value(z), replacement, "straight_through");
    return op(std::move(replacement), {z}, [z](Tape& t, std::size_t self) { t.accumulate(z, t.nodes_[self].grad); });
  }

  Var stop_gradient(Var a) { return constant(value(a)); }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  using Backward = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw std::out_of_range("tape: invalid variable");
    return nodes_[v.id];
  }
  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw std::out_of_range("tape: invalid variable");
    return nodes_[v.id];
  }

  Var push(Tensor value, bool requires_grad, Backward bw) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, false, std::move(bw)});
    return Var{nodes_.size() - 1};
  }

  Var op(Tensor value, std::initializer_list<Var> inputs, Backward bw) {
    return op(std::move(value), std::vector<Var>(inputs), std::move(bw));
  }
  Var op(Tensor value, const std::vector<Var>& inputs, Backward bw) {
    bool rg = false;
    for (auto v : inputs) rg = rg || requires_grad(v);
    return push(std::move(value), rg, rg ? std::move(bw) : Backward{});
  }

  Tensor& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  void accumulate(Var v, const Tensor& g) {
    if (!requires_grad(v)) return;
    Tensor& gv = grad_ref(v.id);
    for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
  }

  void accumulate_scaled(Var v, const Tensor& g, double s) {
    if (!requires_grad(v)) return;
    Tensor& gv = grad_ref(v.id);
    for (std::size_t i = 0; i < g.size(); ++i) gv[i] += s * g[i];
  }

  std::vector<Node> nodes_;
};

}  // namespace gauda
