#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "koop/error.hpp"
#include "koop/params.hpp"
#include "koop/tensor.hpp"

namespace koop {

enum class Activation { relu, softplus };

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "softplus"; }

/// Overflow-safe log(1 + e^x).
template <class T>
inline T softplus(T x) {
  if (x > T(20)) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

template <class T>
inline T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Reverse-mode tape over dense 2-D values. Nodes are appended in evaluation
/// order, so every node's inputs have smaller ids and the backward sweep is a
/// plain reverse walk.
template <class T>
class Tape {
 public:
  enum class Op {
    constant,
    param,
    affine,
    matmul,
    add,
    add_row,
    sub,
    mul,
    scale,
    relu,
    softplus,
    concat_cols,
    slice_cols,
    mean_sq_rows,
    bound_sq,
  };

  struct Node {
    Op op;
    std::array<std::size_t, 3> in{};
    std::size_t n_in = 0;
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    double aux = 0.0;        // scale factor / bound
    std::size_t lo = 0, hi = 0;  // slice range
    double reduced = 0.0;    // 64-bit result for reductions
    Parameter<T>* param = nullptr;
  };

  Tape() { nodes_.reserve(256); }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(Var v) const { return nodes_.at(v.id); }
  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of the last backward() output w.r.t. v (empty if not reached).
  const Tensor<T>& grad(Var v) const { return nodes_.at(v.id).grad; }
  /// 64-bit value of a reduction node (mean_sq_rows / bound_sq), else value[0].
  double scalar(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.op == Op::mean_sq_rows || n.op == Op::bound_sq) return n.reduced;
    return static_cast<double>(n.value[0]);
  }

  Var constant(Tensor<T> t) {
    Node n;
    n.op = Op::constant;
    n.value = std::move(t);
    return push(std::move(n));
  }

  /// Value copy that blocks gradient flow.
  Var detach(Var v) { return constant(value(v)); }

  /// Leaf for a parameter. Repeated uses share one node so gradients sum
  /// over every use.
  Var param(Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var{it->second};
    Node n;
    n.op = Op::param;
    n.value = p.value;
    n.needs_grad = true;
    n.param = &p;
    Var v = push(std::move(n));
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  /// out[b,o] = sum_i x[b,i] w[i,o] + bias[o]
  Var affine(Var x, Var w, Var b) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(w);
    const Tensor<T>& bv = value(b);
    if (xv.cols() != wv.rows() || wv.rank() != 2)
      throw ConfigError("affine: input " + xv.dims_string() + " does not conform to weight " +
                        wv.dims_string());
    if (bv.size() != wv.cols())
      throw ConfigError("affine: bias " + bv.dims_string() + " does not match weight " +
                        wv.dims_string());
    Tensor<T> out({xv.rows(), wv.cols()});
    out.mat().noalias() = xv.mat() * wv.mat();
    out.mat().rowwise() += bv.mat().row(0);
    return push_op(Op::affine, {x.id, w.id, b.id}, 3, std::move(out));
  }

  Var matmul(Var x, Var w) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(w);
    if (xv.cols() != wv.rows() || wv.rank() != 2)
      throw ConfigError("matmul: input " + xv.dims_string() + " does not conform to weight " +
                        wv.dims_string());
    Tensor<T> out({xv.rows(), wv.cols()});
    out.mat().noalias() = xv.mat() * wv.mat();
    return push_op(Op::matmul, {x.id, w.id, 0}, 2, std::move(out));
  }

  Var add(Var a, Var b) { return binary(Op::add, a, b); }

  /// x + row broadcast over every row of x.
  Var add_row(Var x, Var row) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& rv = value(row);
    if (rv.size() != xv.cols())
      throw ConfigError("add_row: " + rv.dims_string() + " does not broadcast over " +
                        xv.dims_string());
    Tensor<T> out = xv;
    out.mat().rowwise() += rv.mat().row(0);
    return push_op(Op::add_row, {x.id, row.id, 0}, 2, std::move(out));
  }

  Var sub(Var a, Var b) { return binary(Op::sub, a, b); }
  Var mul(Var a, Var b) { return binary(Op::mul, a, b); }

  Var scale(Var a, double s) {
    Tensor<T> out = value(a);
    for (auto& v : out.values()) v = static_cast<T>(v * s);
    Var r = push_op(Op::scale, {a.id, 0, 0}, 1, std::move(out));
    nodes_[r.id].aux = s;
    return r;
  }

  Var activate(Var a, Activation kind) {
    return kind == Activation::relu ? relu(a) : softplus(a);
  }

  Var relu(Var a) {
    Tensor<T> out = value(a);
    for (auto& v : out.values()) v = v > T(0) ? v : T(0);
    return push_op(Op::relu, {a.id, 0, 0}, 1, std::move(out));
  }

  Var softplus(Var a) {
    Tensor<T> out = value(a);
    for (auto& v : out.values()) v = koop::softplus(v);
    return push_op(Op::softplus, {a.id, 0, 0}, 1, std::move(out));
  }

  Var concat_cols(Var a, Var b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (av.rows() != bv.rows())
      throw ConfigError("concat: row mismatch " + av.dims_string() + " vs " + bv.dims_string());
    Tensor<T> out({av.rows(), av.cols() + bv.cols()});
    out.mat().leftCols(av.cols()) = av.mat();
    out.mat().rightCols(bv.cols()) = bv.mat();
    return push_op(Op::concat_cols, {a.id, b.id, 0}, 2, std::move(out));
  }

  /// Columns [lo, hi).
  Var slice_cols(Var a, std::size_t lo, std::size_t hi) {
    const Tensor<T>& av = value(a);
    if (lo >= hi || hi > av.cols())
      throw ConfigError("slice: range [" + std::to_string(lo) + "," + std::to_string(hi) +
                        ") outside " + av.dims_string());
    Tensor<T> out({av.rows(), hi - lo});
    out.mat() = av.mat().middleCols(lo, hi - lo);
    Var r = push_op(Op::slice_cols, {a.id, 0, 0}, 1, std::move(out));
    nodes_[r.id].lo = lo;
    nodes_[r.id].hi = hi;
    return r;
  }

  /// Scalar: mean over rows of the squared row norm. Accumulated in 64-bit.
  Var mean_sq_rows(Var a) {
    const Tensor<T>& av = value(a);
    double acc = 0.0;
    for (T v : av.values()) acc += static_cast<double>(v) * static_cast<double>(v);
    acc /= static_cast<double>(av.rows());
    Var r = push_op(Op::mean_sq_rows, {a.id, 0, 0}, 1, Tensor<T>({1, 1}, static_cast<T>(acc)));
    nodes_[r.id].reduced = acc;
    return r;
  }

  /// Scalar: mean over elements of max(0, |a| - bound)^2.
  Var bound_sq(Var a, double bound) {
    const Tensor<T>& av = value(a);
    double acc = 0.0;
    for (T v : av.values()) {
      const double e = std::abs(static_cast<double>(v)) - bound;
      if (e > 0) acc += e * e;
    }
    acc /= static_cast<double>(av.size());
    Var r = push_op(Op::bound_sq, {a.id, 0, 0}, 1, Tensor<T>({1, 1}, static_cast<T>(acc)));
    nodes_[r.id].aux = bound;
    nodes_[r.id].reduced = acc;
    return r;
  }

  /// Reverse sweep from `out` seeded with `seed`, then adds parameter-node
  /// gradients into each Parameter::grad.
  void backward(Var out, const Tensor<T>& seed) {
    if (nodes_.empty() || out.id >= nodes_.size())
      throw UsageError("backward called before any forward computation was recorded");
    if (!seed.same_shape(nodes_[out.id].value) && seed.size() != nodes_[out.id].value.size())
      throw ConfigError("backward: seed " + seed.dims_string() + " does not match output " +
                        nodes_[out.id].value.dims_string());
    for (auto& n : nodes_) n.grad = Tensor<T>();
    nodes_[out.id].grad = Tensor<T>(nodes_[out.id].value.dims(), seed.storage());
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      propagate(n);
    }
    for (auto& n : nodes_) {
      if (n.op == Op::param && !n.grad.empty()) {
        Parameter<T>& p = *n.param;
        if (!p.grad.same_shape(p.value)) p.grad = Tensor<T>(p.value.dims());
        p.grad.mat() += n.grad.mat();
      }
    }
  }

  void backward(Var out) {
    if (nodes_.empty() || out.id >= nodes_.size())
      throw UsageError("backward called before any forward computation was recorded");
    backward(out, Tensor<T>(nodes_[out.id].value.dims(), T(1)));
  }

  /// True when every node's inputs precede it.
  bool topologically_ordered() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      for (std::size_t k = 0; k < nodes_[i].n_in; ++k)
        if (nodes_[i].in[k] >= i) return false;
    return true;
  }

 private:
  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var push_op(Op op, std::array<std::size_t, 3> in, std::size_t n_in, Tensor<T> value) {
    Node n;
    n.op = op;
    n.in = in;
    n.n_in = n_in;
    n.value = std::move(value);
    for (std::size_t k = 0; k < n_in; ++k) n.needs_grad = n.needs_grad || nodes_[in[k]].needs_grad;
    return push(std::move(n));
  }

  Var binary(Op op, Var a, Var b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols())
      throw ConfigError("elementwise op: shape mismatch " + av.dims_string() + " vs " +
                        bv.dims_string());
    Tensor<T> out({av.rows(), av.cols()});
    switch (op) {
      case Op::add: out.mat() = av.mat() + bv.mat(); break;
      case Op::sub: out.mat() = av.mat() - bv.mat(); break;
      default: out.mat() = av.mat().cwiseProduct(bv.mat()); break;
    }
    return push_op(op, {a.id, b.id, 0}, 2, std::move(out));
  }

  // Returns the gradient buffer of input k, or nullptr when it needs none.
  Tensor<T>* input_grad(const Node& n, std::size_t k) {
    Node& in = nodes_[n.in[k]];
    if (!in.needs_grad) return nullptr;
    if (in.grad.empty()) in.grad = Tensor<T>(in.value.dims());
    return &in.grad;
  }

  void propagate(const Node& n) {
    const auto g = n.grad.mat();
    switch (n.op) {
      case Op::constant:
      case Op::param:
        break;
      case Op::affine:
      case Op::matmul: {
        const Tensor<T>& x = nodes_[n.in[0]].value;
        const Tensor<T>& w = nodes_[n.in[1]].value;
        if (auto* gx = input_grad(n, 0)) gx->mat().noalias() += g * w.mat().transpose();
        if (auto* gw = input_grad(n, 1)) gw->mat().noalias() += x.mat().transpose() * g;
        if (n.op == Op::affine)
          if (auto* gb = input_grad(n, 2)) gb->mat().row(0) += g.colwise().sum();
        break;
      }
      case Op::add:
        if (auto* ga = input_grad(n, 0)) ga->mat() += g;
        if (auto* gb = input_grad(n, 1)) gb->mat() += g;
        break;
      case Op::add_row:
        if (auto* ga = input_grad(n, 0)) ga->mat() += g;
        if (auto* gb = input_grad(n, 1)) gb->mat().row(0) += g.colwise().sum();
        break;
      case Op::sub:
        if (auto* ga = input_grad(n, 0)) ga->mat() += g;
        if (auto* gb = input_grad(n, 1)) gb->mat() -= g;
        break;
      case Op::mul: {
        const Tensor<T>& a = nodes_[n.in[0]].value;
        const Tensor<T>& b = nodes_[n.in[1]].value;
        if (auto* ga = input_grad(n, 0)) ga->mat() += g.cwiseProduct(b.mat());
        if (auto* gb = input_grad(n, 1)) gb->mat() += g.cwiseProduct(a.mat());
        break;
      }
      case Op::scale:
        if (auto* ga = input_grad(n, 0)) ga->mat() += g * static_cast<T>(n.aux);
        break;
      case Op::relu:
        if (auto* ga = input_grad(n, 0)) {
          const T* y = n.value.data();
          const T* gy = n.grad.data();
          T* gx = ga->data();
          for (std::size_t i = 0; i < n.value.size(); ++i)
            if (y[i] > T(0)) gx[i] += gy[i];
        }
        break;
      case Op::softplus:
        if (auto* ga = input_grad(n, 0)) {
          const T* x = nodes_[n.in[0]].value.data();
          const T* gy = n.grad.data();
          T* gx = ga->data();
          for (std::size_t i = 0; i < n.value.size(); ++i) gx[i] += gy[i] * sigmoid(x[i]);
        }
        break;
      case Op::concat_cols: {
        const std::size_t ca = nodes_[n.in[0]].value.cols();
        const std::size_t cb = nodes_[n.in[1]].value.cols();
        if (auto* ga = input_grad(n, 0)) ga->mat() += g.leftCols(ca);
        if (auto* gb = input_grad(n, 1)) gb->mat() += g.rightCols(cb);
        break;
      }
      case Op::slice_cols:
        if (auto* ga = input_grad(n, 0)) ga->mat().middleCols(n.lo, n.hi - n.lo) += g;
        break;
      case Op::mean_sq_rows:
        if (auto* ga = input_grad(n, 0)) {
          const Tensor<T>& a = nodes_[n.in[0]].value;
          const T s = n.grad[0] * static_cast<T>(2.0 / static_cast<double>(a.rows()));
          ga->mat() += a.mat() * s;
        }
        break;
      case Op::bound_sq:
        if (auto* ga = input_grad(n, 0)) {
          const Tensor<T>& a = nodes_[n.in[0]].value;
          const double s = static_cast<double>(n.grad[0]) * 2.0 / static_cast<double>(a.size());
          for (std::size_t i = 0; i < a.size(); ++i) {
            const double v = static_cast<double>(a[i]);
            const double e = std::abs(v) - n.aux;
            if (e > 0) (*ga)[i] += static_cast<T>(s * e * (v > 0 ? 1.0 : -1.0));
          }
        }
        break;
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

}  // namespace koop
