#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <deque>
#include <vector>

#include "onering/error.hpp"
#include "onering/tensor.hpp"

namespace onering {

enum class OpKind {
  Constant,
  Parameter,
  Input,
  MatMul,
  AddBias,
  Relu,
  LogSoftmax,
  Softmax,
  CrossEntropy,
  RowEntropy,
  DropColumn,
  Add,
  Scale,
  Mul,
  Sum,
  Mean,
  RowSum,
  RowDot,
  Transpose,
  WeightedSum,
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while its graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Scalar value of a one-element node.
  double item() const { return value()[0]; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape of operations recorded in construction order.
///
/// Node inputs always precede the node, so reverse construction order is a
/// valid reverse topological order and backward() is a single sweep.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  ~Graph() {
    for (auto& node : nodes_) {
      if (node.param && node.param->bound_graph_ == this) node.param->bound_graph_ = nullptr;
    }
  }

  /// Leaf with no gradient.
  Var constant(Tensor value) { return push(OpKind::Constant, {}, std::move(value), nullptr); }

  /// Leaf whose gradient stays inside the graph (read it back with grad()).
  Var input(Tensor value) { return push(OpKind::Input, {}, std::move(value), nullptr); }

  /// Leaf bound to an external tensor; backward() accumulates into param.grad.
  Var parameter(Tensor& param) {
    if (param.bound_graph_ && param.bound_graph_ != this) {
      throw Error(ErrorKind::InvalidBackward, "tensor is already bound to another live graph");
    }
    param.bound_graph_ = this;
    Var v = push(OpKind::Parameter, {}, param, nullptr);
    nodes_[v.id()].param = &param;
    return v;
  }

  Var push(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
    nodes_.push_back(Node{kind, std::move(inputs), std::move(value), {}, std::move(backward), nullptr});
    return Var(this, nodes_.size() - 1);
  }

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return nodes_[id].kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }

  /// Gradient of the last backward() w.r.t. a node; empty if it was not reached.
  std::span<const double> grad(Var v) const { return nodes_[v.id()].grad; }

  /// Upstream gradient of a node, for use inside backward functions.
  std::span<const double> upstream(std::size_t id) const { return nodes_[id].grad; }

  /// Accumulator for the gradient of node `id`, allocated on first use.
  std::span<double> accum(std::size_t id) {
    auto& node = nodes_[id];
    if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
    return node.grad;
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].kind != OpKind::Constant; }

  /// Reverse sweep from a scalar loss. Parameter gradients accumulate across
  /// calls; intermediate node gradients are recomputed each time.
  void backward(Var loss) {
    if (&loss.graph() != this) throw Error(ErrorKind::InvalidBackward, "loss belongs to another graph");
    if (!loss.value().is_scalar()) {
      throw Error(ErrorKind::InvalidBackward,
                  "backward requires a scalar loss, got shape " + shape_string(loss.value().shape()));
    }
    for (auto& node : nodes_) node.grad.clear();
    accum(loss.id())[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (node.grad.empty()) continue;
      if (node.backward) node.backward(*this, id);
      if (node.param) {
        auto g = node.param->mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
      }
    }
  }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    std::vector<double> grad;
    BackwardFn backward;
    Tensor* param;
  };

  std::deque<Node> nodes_;  // stable addresses: value() references outlive later pushes
};

inline const Tensor& Var::value() const { return graph_->value(id_); }

namespace detail {

inline void require_same_graph(const Var& a, const Var& b) {
  if (&a.graph() != &b.graph()) throw Error(ErrorKind::InvalidShape, "operands belong to different graphs");
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw Error(ErrorKind::InvalidShape, std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
  }
}

/// Row-wise log-softmax with max subtraction.
inline Tensor log_softmax_values(const Tensor& z) {
  Tensor out(z.shape());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto in = z.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (double v : in) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < in.size(); ++c) o[c] = in[c] - lse;
  }
  return out;
}

inline void require_classes(const Tensor& z, const char* op) {
  require_matrix(z, op);
  if (z.cols() < 2) throw Error(ErrorKind::InvalidShape, std::string(op) + " needs at least 2 columns");
}

}  // namespace detail

/// Row-wise softmax of a matrix of logits, without graph bookkeeping.
inline Tensor softmax_values(const Tensor& z) {
  Tensor out = detail::log_softmax_values(z);
  for (double& v : out.values()) v = std::exp(v);
  return out;
}

inline Var matmul(Var a, Var b) {
  detail::require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw Error(ErrorKind::InvalidShape,
                "matmul inner dimensions differ: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    auto o = out.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av.at(i, p);
      if (aip == 0.0) continue;
      const auto brow = bv.row(p);
      for (std::size_t j = 0; j < n; ++j) o[j] += aip * brow[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().push(OpKind::MatMul, {ia, ib}, std::move(out), [ia, ib, m, k, n](Graph& g, std::size_t self) {
    const auto up = g.upstream(self);
    const Tensor& A = g.value(ia);
    const Tensor& B = g.value(ib);
    if (g.needs_grad(ia)) {
      auto ga = g.accum(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += up[i * n + j] * B.at(p, j);
          ga[i * k + p] += s;
        }
    }
    if (g.needs_grad(ib)) {
      auto gb = g.accum(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A.at(i, p);
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * up[i * n + j];
        }
    }
  });
}

inline Var add_bias(Var x, Var b) {
  detail::require_same_graph(x, b);
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  detail::require_matrix(xv, "add_bias");
  if (bv.size() != xv.cols()) {
    throw Error(ErrorKind::InvalidShape,
                "add_bias width mismatch: " + shape_string(xv.shape()) + " + " + shape_string(bv.shape()));
  }
  Tensor out = xv;
  const std::size_t m = xv.rows(), n = xv.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += bv[j];
  const std::size_t ix = x.id(), ib = b.id();
  return x.graph().push(OpKind::AddBias, {ix, ib}, std::move(out), [ix, ib, m, n](Graph& g, std::size_t self) {
    const auto up = g.upstream(self);
    if (g.needs_grad(ix)) {
      auto gx = g.accum(ix);
      for (std::size_t i = 0; i < up.size(); ++i) gx[i] += up[i];
    }
    if (g.needs_grad(ib)) {
      auto gb = g.accum(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += up[i * n + j];
    }
  });
}

/// Elementwise max(0, x); the subgradient at exactly 0 is 0.
inline Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  const std::size_t ix = x.id();
  return x.graph().push(OpKind::Relu, {ix}, std::move(out), [ix](Graph& g, std::size_t self) {
    if (!g.needs_grad(ix)) return;
    const auto up = g.upstream(self);
    const auto in = g.value(ix).values();
    auto gx = g.accum(ix);
    for (std::size_t i = 0; i < up.size(); ++i)
      if (in[i] > 0.0) gx[i] += up[i];
  });
}

inline Var log_softmax(Var z) {
  detail::require_classes(z.value(), "log_softmax");
  Tensor out = detail::log_softmax_values(z.value());
  const std::size_t iz = z.id();
  return z.graph().push(OpKind::LogSoftmax, {iz}, std::move(out), [iz](Graph& g, std::size_t self) {
    if (!g.needs_grad(iz)) return;
    const auto up = g.upstream(self);
    const Tensor& ls = g.value(self);
    auto gz = g.accum(iz);
    const std::size_t c = ls.cols();
    for (std::size_t r = 0; r < ls.rows(); ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += up[r * c + j];
      for (std::size_t j = 0; j < c; ++j) gz[r * c + j] += up[r * c + j] - std::exp(ls.at(r, j)) * s;
    }
  });
}

inline Var softmax(Var z) {
  detail::require_classes(z.value(), "softmax");
  Tensor out = softmax_values(z.value());
  const std::size_t iz = z.id();
  return z.graph().push(OpKind::Softmax, {iz}, std::move(out), [iz](Graph& g, std::size_t self) {
    if (!g.needs_grad(iz)) return;
    const auto up = g.upstream(self);
    const Tensor& p = g.value(self);
    auto gz = g.accum(iz);
    const std::size_t c = p.cols();
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += up[r * c + j] * p.at(r, j);
      for (std::size_t j = 0; j < c; ++j) gz[r * c + j] += p.at(r, j) * (up[r * c + j] - dot);
    }
  });
}

/// Mean over rows of -log softmax(logits)[label], fused for stability.
inline Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const Tensor& z = logits.value();
  detail::require_classes(z, "cross_entropy");
  const std::size_t m = z.rows(), c = z.cols();
  if (labels.size() != m) {
    throw Error(ErrorKind::InvalidShape, "cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                             std::to_string(m) + " rows");
  }
  for (std::size_t r = 0; r < m; ++r) {
    if (labels[r] >= c) {
      throw Error(ErrorKind::InvalidLabel, "label " + std::to_string(labels[r]) + " at row " + std::to_string(r) +
                                               " outside [0, " + std::to_string(c) + ")");
    }
  }
  Tensor ls = detail::log_softmax_values(z);
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) total -= ls.at(r, labels[r]);
  Tensor out({1}, total / static_cast<double>(m));
  const std::size_t iz = logits.id();
  std::vector<std::size_t> y(labels.begin(), labels.end());
  return logits.graph().push(
      OpKind::CrossEntropy, {iz}, std::move(out),
      [iz, y = std::move(y), ls = std::move(ls), m, c](Graph& g, std::size_t self) {
        if (!g.needs_grad(iz)) return;
        const double scale = g.upstream(self)[0] / static_cast<double>(m);
        auto gz = g.accum(iz);
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(ls.at(r, j));
            gz[r * c + j] += scale * (p - (j == y[r] ? 1.0 : 0.0));
          }
        }
      });
}

/// Per-row Shannon entropy of softmax(logits), shape [m].
inline Var row_entropy(Var logits) {
  const Tensor& z = logits.value();
  detail::require_classes(z, "row_entropy");
  const std::size_t m = z.rows(), c = z.cols();
  Tensor ls = detail::log_softmax_values(z);
  Tensor out({m});
  for (std::size_t r = 0; r < m; ++r) {
    double h = 0.0;
    for (std::size_t j = 0; j < c; ++j) h -= std::exp(ls.at(r, j)) * ls.at(r, j);
    out[r] = h;
  }
  const std::size_t iz = logits.id();
  return logits.graph().push(OpKind::RowEntropy, {iz}, std::move(out),
                             [iz, ls = std::move(ls), m, c](Graph& g, std::size_t self) {
                               if (!g.needs_grad(iz)) return;
                               const auto up = g.upstream(self);
                               const Tensor& h = g.value(self);
                               auto gz = g.accum(iz);
                               // dH/dz_j = -p_j (log p_j + H)
                               for (std::size_t r = 0; r < m; ++r)
                                 for (std::size_t j = 0; j < c; ++j) {
                                   const double lp = ls.at(r, j);
                                   gz[r * c + j] -= up[r] * std::exp(lp) * (lp + h[r]);
                                 }
                             });
}

/// Drops column `drop[r]` from row r; output is [m x (c-1)].
inline Var drop_column_per_row(Var x, std::span<const std::size_t> drop) {
  const Tensor& xv = x.value();
  detail::require_matrix(xv, "drop_column_per_row");
  const std::size_t m = xv.rows(), c = xv.cols();
  if (drop.size() != m) throw Error(ErrorKind::InvalidShape, "drop_column_per_row: one index per row required");
  if (c < 2) throw Error(ErrorKind::InvalidShape, "drop_column_per_row needs at least 2 columns");
  Tensor out({m, c - 1});
  for (std::size_t r = 0; r < m; ++r) {
    if (drop[r] >= c) throw Error(ErrorKind::InvalidLabel, "column index out of range at row " + std::to_string(r));
    for (std::size_t j = 0, k = 0; j < c; ++j)
      if (j != drop[r]) out.at(r, k++) = xv.at(r, j);
  }
  const std::size_t ix = x.id();
  std::vector<std::size_t> d(drop.begin(), drop.end());
  return x.graph().push(OpKind::DropColumn, {ix}, std::move(out),
                        [ix, d = std::move(d), m, c](Graph& g, std::size_t self) {
                          if (!g.needs_grad(ix)) return;
                          const auto up = g.upstream(self);
                          auto gx = g.accum(ix);
                          for (std::size_t r = 0; r < m; ++r)
                            for (std::size_t j = 0, k = 0; j < c; ++j)
                              if (j != d[r]) gx[r * c + j] += up[r * (c - 1) + k++];
                        });
}

inline Var add(Var a, Var b) {
  detail::require_same_graph(a, b);
  if (a.value().shape() != b.value().shape()) {
    throw Error(ErrorKind::InvalidShape,
                "add shape mismatch: " + shape_string(a.value().shape()) + " vs " + shape_string(b.value().shape()));
  }
  Tensor out = a.value();
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().push(OpKind::Add, {ia, ib}, std::move(out), [ia, ib](Graph& g, std::size_t self) {
    const auto up = g.upstream(self);
    for (std::size_t in : {ia, ib}) {
      if (!g.needs_grad(in)) continue;
      auto gi = g.accum(in);
      for (std::size_t i = 0; i < up.size(); ++i) gi[i] += up[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  const std::size_t ia = a.id();
  return a.graph().push(OpKind::Scale, {ia}, std::move(out), [ia, s](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const auto up = g.upstream(self);
    auto ga = g.accum(ia);
    for (std::size_t i = 0; i < up.size(); ++i) ga[i] += s * up[i];
  });
}

/// Elementwise product of two same-shape nodes.
inline Var mul(Var a, Var b) {
  detail::require_same_graph(a, b);
  if (a.value().shape() != b.value().shape()) {
    throw Error(ErrorKind::InvalidShape,
                "mul shape mismatch: " + shape_string(a.value().shape()) + " vs " + shape_string(b.value().shape()));
  }
  Tensor out = a.value();
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().push(OpKind::Mul, {ia, ib}, std::move(out), [ia, ib](Graph& g, std::size_t self) {
    const auto up = g.upstream(self);
    const auto av = g.value(ia).values();
    const auto bv = g.value(ib).values();
    if (g.needs_grad(ia)) {
      auto ga = g.accum(ia);
      for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i] * bv[i];
    }
    if (g.needs_grad(ib)) {
      auto gb = g.accum(ib);
      for (std::size_t i = 0; i < up.size(); ++i) gb[i] += up[i] * av[i];
    }
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.graph().push(OpKind::Sum, {ia}, Tensor({1}, s), [ia](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const double up = g.upstream(self)[0];
    for (double& v : g.accum(ia)) v += up;
  });
}

inline Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw Error(ErrorKind::InvalidShape, "mean of an empty tensor");
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.graph().push(OpKind::Mean, {ia}, Tensor({1}, s / static_cast<double>(n)),
                        [ia, n](Graph& g, std::size_t self) {
                          if (!g.needs_grad(ia)) return;
                          const double up = g.upstream(self)[0] / static_cast<double>(n);
                          for (double& v : g.accum(ia)) v += up;
                        });
}

/// Sum of each row of a matrix, shape [m].
inline Var row_sum(Var a) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "row_sum");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m});
  for (std::size_t r = 0; r < m; ++r)
    for (double v : av.row(r)) out[r] += v;
  const std::size_t ia = a.id();
  return a.graph().push(OpKind::RowSum, {ia}, std::move(out), [ia, m, n](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const auto up = g.upstream(self);
    auto ga = g.accum(ia);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += up[r];
  });
}

/// Per-row inner product of two same-shape matrices, shape [m].
inline Var row_dot(Var a, Var b) {
  detail::require_same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "row_dot");
  if (av.shape() != bv.shape()) {
    throw Error(ErrorKind::InvalidShape,
                "row_dot shape mismatch: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r] += av.at(r, j) * bv.at(r, j);
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().push(OpKind::RowDot, {ia, ib}, std::move(out), [ia, ib, m, n](Graph& g, std::size_t self) {
    const auto up = g.upstream(self);
    const Tensor& A = g.value(ia);
    const Tensor& B = g.value(ib);
    if (g.needs_grad(ia)) {
      auto ga = g.accum(ia);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += up[r] * B.at(r, j);
    }
    if (g.needs_grad(ib)) {
      auto gb = g.accum(ib);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < n; ++j) gb[r * n + j] += up[r] * A.at(r, j);
    }
  });
}

inline Var transpose(Var a) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "transpose");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({n, m});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out.at(c, r) = av.at(r, c);
  const std::size_t ia = a.id();
  return a.graph().push(OpKind::Transpose, {ia}, std::move(out), [ia, m, n](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const auto up = g.upstream(self);
    auto ga = g.accum(ia);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += up[c * m + r];
  });
}

/// Scalar sum_i w_i * v_i with constant weights.
inline Var weighted_sum(Var v, std::span<const double> weights) {
  const auto vv = v.value().values();
  if (weights.size() != vv.size()) throw Error(ErrorKind::InvalidShape, "weighted_sum: weight count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < vv.size(); ++i) s += weights[i] * vv[i];
  const std::size_t iv = v.id();
  std::vector<double> w(weights.begin(), weights.end());
  return v.graph().push(OpKind::WeightedSum, {iv}, Tensor({1}, s), [iv, w = std::move(w)](Graph& g, std::size_t self) {
    if (!g.needs_grad(iv)) return;
    const double up = g.upstream(self)[0];
    auto gv = g.accum(iv);
    for (std::size_t i = 0; i < w.size(); ++i) gv[i] += up * w[i];
  });
}

/// Mean per-row entropy of softmax(logits); each row lies in [0, ln c].
inline Var entropy(Var logits) { return mean(row_entropy(logits)); }

/// Convenience: the graph's gradient with respect to an input node, as a Tensor.
inline Tensor grad_of(const Var& v) {
  const auto g = v.graph().grad(v);
  Tensor out(v.value().shape());
  std::copy(g.begin(), g.end(), out.values().begin());
  return out;
}

}  // namespace onering
