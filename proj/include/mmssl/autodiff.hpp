#pragma once

// Tape-based reverse-mode differentiation over BasicTensor.
//
// A BasicGraph owns every value produced during one forward pass. Nodes are
// appended in evaluation order, so the node vector is already a topological
// order and backward is a single reverse sweep. BasicVar is a cheap handle
// (graph pointer + node index); ops are free functions on handles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmssl/errors.hpp"
#include "mmssl/tensor.hpp"

namespace mmssl {

template <typename Scalar>
class BasicGraph;

template <typename Scalar>
class BasicVar {
 public:
  using Tensor = BasicTensor<Scalar>;

  BasicVar() = default;
  BasicVar(BasicGraph<Scalar>* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Tensor& value() const { return graph_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index rank() const { return value().rank(); }

  BasicGraph<Scalar>& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool requires_grad() const { return graph_->requires_grad(id_); }

 private:
  BasicGraph<Scalar>* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Leaf gradients produced by one backward sweep.
template <typename Scalar>
class BasicGradients {
 public:
  using Tensor = BasicTensor<Scalar>;

  bool contains(const BasicVar<Scalar>& leaf) const { return grads_.count(leaf.id()) != 0; }

  const Tensor& operator[](const BasicVar<Scalar>& leaf) const {
    auto it = grads_.find(leaf.id());
    if (it == grads_.end()) throw ContractError("no gradient recorded for node " + std::to_string(leaf.id()));
    return it->second;
  }

  std::size_t size() const noexcept { return grads_.size(); }

  void insert(std::size_t id, Tensor g) { grads_.insert_or_assign(id, std::move(g)); }

 private:
  std::unordered_map<std::size_t, Tensor> grads_;
};

template <typename Scalar>
class BasicGraph {
 public:
  using Tensor = BasicTensor<Scalar>;
  using Matrix = MatrixX<Scalar>;
  using Var = BasicVar<Scalar>;
  using BackwardFn = std::function<void(BasicGraph&, std::size_t self)>;

  BasicGraph() = default;
  BasicGraph(const BasicGraph&) = delete;
  BasicGraph& operator=(const BasicGraph&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, requires_grad, true});
    return Var(this, nodes_.size() - 1);
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op node. The node requires a gradient iff any input does.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    bool rg = false;
    for (auto i : inputs) rg = rg || nodes_.at(i).requires_grad;
    nodes_.push_back(Node{std::move(value), std::move(inputs), rg ? std::move(backward) : nullptr, rg, false});
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool is_leaf(std::size_t id) const { return nodes_.at(id).is_leaf; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Valid only inside a backward sweep.
  const Matrix& grad(std::size_t id) const { return grads_[id]; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  Matrix& grad_buffer(std::size_t id) { return grads_[id]; }

  BasicGradients<Scalar> backward(const Var& output) {
    if (&output.graph() != this) throw ContractError("backward: output belongs to a different graph");
    const Tensor& out = value(output.id());
    if (out.size() != 1) {
      throw ContractError("backward requires a scalar output, got shape " + shape_string(out.shape()));
    }
    const std::size_t n = output.id() + 1;
    grads_.assign(nodes_.size(), Matrix());
    for (std::size_t i = 0; i < n; ++i) {
      if (nodes_[i].requires_grad) grads_[i] = Matrix::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
    }
    BasicGradients<Scalar> result;
    if (!nodes_[output.id()].requires_grad) return result;
    grads_[output.id()](0, 0) = Scalar(1);
    for (std::size_t i = n; i-- > 0;) {
      if (nodes_[i].backward) nodes_[i].backward(*this, i);
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (nodes_[i].is_leaf && nodes_[i].requires_grad) {
        result.insert(i, Tensor(nodes_[i].value.shape(), std::move(grads_[i])));
      }
    }
    grads_.clear();
    return result;
  }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad;
    bool is_leaf;
  };

  std::deque<Node> nodes_;  // stable references across record()
  std::vector<Matrix> grads_;
};

using Graph = BasicGraph<double>;
using Var = BasicVar<double>;
using Gradients = BasicGradients<double>;

namespace detail {

template <typename Scalar>
void require_same_graph(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b, const char* op) {
  if (&a.graph() != &b.graph()) throw ContractError(std::string(op) + ": operands from different graphs");
}

template <typename Scalar>
void require_same_shape(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b, const char* op) {
  require_same_graph(a, b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename Scalar>
void require_rank2(const BasicVar<Scalar>& a, const char* op) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
}

/// Unary pointwise op: forward functor f and derivative functor df(x, y).
template <typename Scalar, typename F, typename DF>
BasicVar<Scalar> pointwise(const BasicVar<Scalar>& a, F f, DF df) {
  using Matrix = MatrixX<Scalar>;
  Matrix out = a.value().matrix().unaryExpr(f);
  const std::size_t ia = a.id();
  return a.graph().record(BasicTensor<Scalar>(a.shape(), std::move(out)), {ia},
                          [ia, df](BasicGraph<Scalar>& g, std::size_t self) {
                            if (!g.needs_grad(ia)) return;
                            const auto x = g.value(ia).matrix().array();
                            const auto y = g.value(self).matrix().array();
                            g.grad_buffer(ia).array() += g.grad(self).array() * x.binaryExpr(y, df);
                          });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
BasicVar<Scalar> matmul(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_graph(a, b, "matmul");
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  }
  MatrixX<Scalar> c = a.value().matrix() * b.value().matrix();
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(BasicTensor<Scalar>::from_matrix(std::move(c)), {ia, ib},
                          [ia, ib](BasicGraph<Scalar>& g, std::size_t self) {
                            const auto& dc = g.grad(self);
                            if (g.needs_grad(ia)) g.grad_buffer(ia).noalias() += dc * g.value(ib).matrix().transpose();
                            if (g.needs_grad(ib)) g.grad_buffer(ib).noalias() += g.value(ia).matrix().transpose() * dc;
                          });
}

template <typename Scalar>
BasicVar<Scalar> operator*(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  return matmul(a, b);
}

template <typename Scalar>
BasicVar<Scalar> transpose(const BasicVar<Scalar>& a) {
  detail::require_rank2(a, "transpose");
  MatrixX<Scalar> t = a.value().matrix().transpose();
  const std::size_t ia = a.id();
  return a.graph().record(BasicTensor<Scalar>::from_matrix(std::move(t)), {ia},
                          [ia](BasicGraph<Scalar>& g, std::size_t self) {
                            if (g.needs_grad(ia)) g.grad_buffer(ia) += g.grad(self).transpose();
                          });
}

template <typename Scalar>
BasicVar<Scalar> reshape(const BasicVar<Scalar>& a, Shape shape) {
  BasicTensor<Scalar> out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.graph().record(std::move(out), {ia}, [ia](BasicGraph<Scalar>& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    auto& buf = g.grad_buffer(ia);
    buf += Eigen::Map<const MatrixX<Scalar>>(g.grad(self).data(), buf.rows(), buf.cols());
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
BasicVar<Scalar> add(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  MatrixX<Scalar> c = a.value().matrix() + b.value().matrix();
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(BasicTensor<Scalar>(a.shape(), std::move(c)), {ia, ib},
                          [ia, ib](BasicGraph<Scalar>& g, std::size_t self) {
                            if (g.needs_grad(ia)) g.grad_buffer(ia) += g.grad(self);
                            if (g.needs_grad(ib)) g.grad_buffer(ib) += g.grad(self);
                          });
}

template <typename Scalar>
BasicVar<Scalar> sub(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_shape(a, b, "sub");
  MatrixX<Scalar> c = a.value().matrix() - b.value().matrix();
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(BasicTensor<Scalar>(a.shape(), std::move(c)), {ia, ib},
                          [ia, ib](BasicGraph<Scalar>& g, std::size_t self) {
                            if (g.needs_grad(ia)) g.grad_buffer(ia) += g.grad(self);
                            if (g.needs_grad(ib)) g.grad_buffer(ib) -= g.grad(self);
                          });
}

/// Hadamard product.
template <typename Scalar>
BasicVar<Scalar> mul(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  MatrixX<Scalar> c = a.value().matrix().cwiseProduct(b.value().matrix());
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(BasicTensor<Scalar>(a.shape(), std::move(c)), {ia, ib},
                          [ia, ib](BasicGraph<Scalar>& g, std::size_t self) {
                            const auto& dc = g.grad(self);
                            if (g.needs_grad(ia)) g.grad_buffer(ia) += dc.cwiseProduct(g.value(ib).matrix());
                            if (g.needs_grad(ib)) g.grad_buffer(ib) += dc.cwiseProduct(g.value(ia).matrix());
                          });
}

template <typename Scalar>
BasicVar<Scalar> operator+(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  return add(a, b);
}

template <typename Scalar>
BasicVar<Scalar> operator-(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  return sub(a, b);
}

template <typename Scalar>
BasicVar<Scalar> scale(const BasicVar<Scalar>& a, Scalar s) {
  MatrixX<Scalar> c = a.value().matrix() * s;
  const std::size_t ia = a.id();
  return a.graph().record(BasicTensor<Scalar>(a.shape(), std::move(c)), {ia},
                          [ia, s](BasicGraph<Scalar>& g, std::size_t self) {
                            if (g.needs_grad(ia)) g.grad_buffer(ia) += g.grad(self) * s;
                          });
}

/// Adds a constant to every element.
template <typename Scalar>
BasicVar<Scalar> shift(const BasicVar<Scalar>& a, Scalar s) {
  MatrixX<Scalar> c = (a.value().matrix().array() + s).matrix();
  const std::size_t ia = a.id();
  return a.graph().record(BasicTensor<Scalar>(a.shape(), std::move(c)), {ia},
                          [ia](BasicGraph<Scalar>& g, std::size_t self) {
                            if (g.needs_grad(ia)) g.grad_buffer(ia) += g.grad(self);
                          });
}

/// ReLU; the subgradient at exactly 0 is 0.
template <typename Scalar>
BasicVar<Scalar> relu(const BasicVar<Scalar>& a) {
  return detail::pointwise(
      a, [](Scalar x) { return x > Scalar(0) ? x : Scalar(0); },
      [](Scalar x, Scalar) { return x > Scalar(0) ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
BasicVar<Scalar> exp(const BasicVar<Scalar>& a) {
  return detail::pointwise(
      a, [](Scalar x) { return std::exp(x); }, [](Scalar, Scalar y) { return y; });
}

template <typename Scalar>
BasicVar<Scalar> log(const BasicVar<Scalar>& a) {
  if ((a.value().matrix().array() <= Scalar(0)).any()) throw DomainError("log of a non-positive value");
  return detail::pointwise(
      a, [](Scalar x) { return std::log(x); }, [](Scalar x, Scalar) { return Scalar(1) / x; });
}

/// Elementwise maximum; ties route the gradient to `a`.
template <typename Scalar>
BasicVar<Scalar> maximum(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_shape(a, b, "maximum");
  Mask take_a = a.value().matrix().array() >= b.value().matrix().array();
  MatrixX<Scalar> c = take_a.select(a.value().matrix(), b.value().matrix());
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(BasicTensor<Scalar>(a.shape(), std::move(c)), {ia, ib},
                          [ia, ib, take_a = std::move(take_a)](BasicGraph<Scalar>& g, std::size_t self) {
                            const auto& dc = g.grad(self);
                            if (g.needs_grad(ia)) g.grad_buffer(ia).array() += take_a.select(dc.array(), Scalar(0));
                            if (g.needs_grad(ib)) g.grad_buffer(ib).array() += take_a.select(Scalar(0), dc.array());
                          });
}

// ---------------------------------------------------------------------------
// Reductions

enum class Reduce { sum, mean, max };

/// Full reduction to a scalar.
template <typename Scalar>
BasicVar<Scalar> sum(const BasicVar<Scalar>& a) {
  const std::size_t ia = a.id();
  return a.graph().record(BasicTensor<Scalar>::scalar(a.value().matrix().sum()), {ia},
                          [ia](BasicGraph<Scalar>& g, std::size_t self) {
                            if (g.needs_grad(ia)) g.grad_buffer(ia).array() += g.grad(self)(0, 0);
                          });
}

template <typename Scalar>
BasicVar<Scalar> mean(const BasicVar<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.value().size()));
}

/// Reduction along one axis of a vector or matrix. Max ties go to the lowest
/// index.
template <typename Scalar>
BasicVar<Scalar> reduce(const BasicVar<Scalar>& a, Reduce kind, Index axis) {
  using Matrix = MatrixX<Scalar>;
  if (a.rank() == 0 || a.rank() > 2 || axis < 0 || axis >= a.rank()) {
    throw DimensionError("reduce: axis " + std::to_string(axis) + " invalid for shape " + shape_string(a.shape()));
  }
  const Matrix& x = a.value().matrix();
  // Vectors are stored 1xn, so their axis 0 is the storage column axis.
  const bool along_rows = a.rank() == 1 || axis == 1;
  const Index outer = along_rows ? x.rows() : x.cols();
  const Index inner = along_rows ? x.cols() : x.rows();
  auto at = [&](Index o, Index i) { return along_rows ? x(o, i) : x(i, o); };

  Matrix out(1, outer);
  std::vector<Index> argmax;
  if (kind == Reduce::max) argmax.resize(static_cast<std::size_t>(outer));
  for (Index o = 0; o < outer; ++o) {
    if (kind == Reduce::max) {
      Index best = 0;
      for (Index i = 1; i < inner; ++i) {
        if (at(o, i) > at(o, best)) best = i;
      }
      argmax[static_cast<std::size_t>(o)] = best;
      out(0, o) = at(o, best);
    } else {
      Scalar s = 0;
      for (Index i = 0; i < inner; ++i) s += at(o, i);
      out(0, o) = kind == Reduce::mean ? s / static_cast<Scalar>(inner) : s;
    }
  }
  Shape shape = a.rank() == 1 ? Shape{} : Shape{outer};
  const std::size_t ia = a.id();
  return a.graph().record(
      BasicTensor<Scalar>(std::move(shape), std::move(out)), {ia},
      [ia, kind, along_rows, inner, argmax = std::move(argmax)](BasicGraph<Scalar>& g, std::size_t self) {
        if (!g.needs_grad(ia)) return;
        auto& buf = g.grad_buffer(ia);
        const auto& dy = g.grad(self);
        for (Index o = 0; o < dy.cols(); ++o) {
          const Scalar d = dy(0, o);
          if (kind == Reduce::max) {
            const Index i = argmax[static_cast<std::size_t>(o)];
            (along_rows ? buf(o, i) : buf(i, o)) += d;
          } else {
            const Scalar w = kind == Reduce::mean ? d / static_cast<Scalar>(inner) : d;
            for (Index i = 0; i < inner; ++i) (along_rows ? buf(o, i) : buf(i, o)) += w;
          }
        }
      });
}

template <typename Scalar>
BasicVar<Scalar> sum(const BasicVar<Scalar>& a, Index axis) {
  return reduce(a, Reduce::sum, axis);
}
template <typename Scalar>
BasicVar<Scalar> mean(const BasicVar<Scalar>& a, Index axis) {
  return reduce(a, Reduce::mean, axis);
}
template <typename Scalar>
BasicVar<Scalar> max(const BasicVar<Scalar>& a, Index axis) {
  return reduce(a, Reduce::max, axis);
}

// ---------------------------------------------------------------------------
// Structural

template <typename Scalar>
BasicVar<Scalar> concat_rows(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_graph(a, b, "concat_rows");
  detail::require_rank2(a, "concat_rows");
  detail::require_rank2(b, "concat_rows");
  if (a.cols() != b.cols()) throw DimensionError("concat_rows: column counts differ");
  MatrixX<Scalar> c(a.rows() + b.rows(), a.cols());
  c << a.value().matrix(), b.value().matrix();
  const std::size_t ia = a.id(), ib = b.id();
  const Index ra = a.rows(), rb = b.rows();
  return a.graph().record(BasicTensor<Scalar>::from_matrix(std::move(c)), {ia, ib},
                          [ia, ib, ra, rb](BasicGraph<Scalar>& g, std::size_t self) {
                            if (g.needs_grad(ia)) g.grad_buffer(ia) += g.grad(self).topRows(ra);
                            if (g.needs_grad(ib)) g.grad_buffer(ib) += g.grad(self).bottomRows(rb);
                          });
}

template <typename Scalar>
BasicVar<Scalar> concat_cols(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_graph(a, b, "concat_cols");
  detail::require_rank2(a, "concat_cols");
  detail::require_rank2(b, "concat_cols");
  if (a.rows() != b.rows()) throw DimensionError("concat_cols: row counts differ");
  MatrixX<Scalar> c(a.rows(), a.cols() + b.cols());
  c << a.value().matrix(), b.value().matrix();
  const std::size_t ia = a.id(), ib = b.id();
  const Index ca = a.cols(), cb = b.cols();
  return a.graph().record(BasicTensor<Scalar>::from_matrix(std::move(c)), {ia, ib},
                          [ia, ib, ca, cb](BasicGraph<Scalar>& g, std::size_t self) {
                            if (g.needs_grad(ia)) g.grad_buffer(ia) += g.grad(self).leftCols(ca);
                            if (g.needs_grad(ib)) g.grad_buffer(ib) += g.grad(self).rightCols(cb);
                          });
}

template <typename Scalar>
BasicVar<Scalar> slice_rows(const BasicVar<Scalar>& a, Index start, Index count) {
  detail::require_rank2(a, "slice_rows");
  if (start < 0 || count <= 0 || start + count > a.rows()) throw DimensionError("slice_rows: range out of bounds");
  MatrixX<Scalar> c = a.value().matrix().middleRows(start, count);
  const std::size_t ia = a.id();
  return a.graph().record(BasicTensor<Scalar>::from_matrix(std::move(c)), {ia},
                          [ia, start, count](BasicGraph<Scalar>& g, std::size_t self) {
                            if (g.needs_grad(ia)) g.grad_buffer(ia).middleRows(start, count) += g.grad(self);
                          });
}

template <typename Scalar>
BasicVar<Scalar> slice_cols(const BasicVar<Scalar>& a, Index start, Index count) {
  detail::require_rank2(a, "slice_cols");
  if (start < 0 || count <= 0 || start + count > a.cols()) throw DimensionError("slice_cols: range out of bounds");
  MatrixX<Scalar> c = a.value().matrix().middleCols(start, count);
  const std::size_t ia = a.id();
  return a.graph().record(BasicTensor<Scalar>::from_matrix(std::move(c)), {ia},
                          [ia, start, count](BasicGraph<Scalar>& g, std::size_t self) {
                            if (g.needs_grad(ia)) g.grad_buffer(ia).middleCols(start, count) += g.grad(self);
                          });
}

/// Repeats a vector [m] as every row of an [n x m] matrix.
template <typename Scalar>
BasicVar<Scalar> broadcast_rows(const BasicVar<Scalar>& v, Index n) {
  if (v.rank() != 1) throw DimensionError("broadcast_rows: expected a vector, got " + shape_string(v.shape()));
  MatrixX<Scalar> c = v.value().matrix().replicate(n, 1);
  const std::size_t iv = v.id();
  return v.graph().record(BasicTensor<Scalar>::from_matrix(std::move(c)), {iv},
                          [iv](BasicGraph<Scalar>& g, std::size_t self) {
                            if (g.needs_grad(iv)) g.grad_buffer(iv) += g.grad(self).colwise().sum();
                          });
}

/// Repeats a vector [n] as every column of an [n x m] matrix.
template <typename Scalar>
BasicVar<Scalar> broadcast_cols(const BasicVar<Scalar>& v, Index m) {
  if (v.rank() != 1) throw DimensionError("broadcast_cols: expected a vector, got " + shape_string(v.shape()));
  MatrixX<Scalar> c = v.value().matrix().transpose().replicate(1, m);
  const std::size_t iv = v.id();
  return v.graph().record(BasicTensor<Scalar>::from_matrix(std::move(c)), {iv},
                          [iv](BasicGraph<Scalar>& g, std::size_t self) {
                            if (g.needs_grad(iv)) g.grad_buffer(iv) += g.grad(self).rowwise().sum().transpose();
                          });
}

/// Adds a bias vector [m] to every row of an [n x m] matrix.
template <typename Scalar>
BasicVar<Scalar> add_row_vector(const BasicVar<Scalar>& a, const BasicVar<Scalar>& v) {
  detail::require_rank2(a, "add_row_vector");
  return add(a, broadcast_rows(v, a.rows()));
}

/// Gathers one entry per row: out[i] = a(i, index[i]).
template <typename Scalar>
BasicVar<Scalar> pick(const BasicVar<Scalar>& a, std::vector<Index> index) {
  detail::require_rank2(a, "pick");
  if (static_cast<Index>(index.size()) != a.rows()) throw DimensionError("pick: one index per row required");
  MatrixX<Scalar> out(1, a.rows());
  for (Index i = 0; i < a.rows(); ++i) {
    const Index j = index[static_cast<std::size_t>(i)];
    if (j < 0 || j >= a.cols()) throw IndexError("pick: column index " + std::to_string(j) + " out of range");
    out(0, i) = a.value()(i, j);
  }
  const std::size_t ia = a.id();
  return a.graph().record(BasicTensor<Scalar>({a.rows()}, std::move(out)), {ia},
                          [ia, index = std::move(index)](BasicGraph<Scalar>& g, std::size_t self) {
                            if (!g.needs_grad(ia)) return;
                            auto& buf = g.grad_buffer(ia);
                            const auto& dy = g.grad(self);
                            for (Index i = 0; i < buf.rows(); ++i) buf(i, index[static_cast<std::size_t>(i)]) += dy(0, i);
                          });
}

template <typename Scalar>
BasicVar<Scalar> diagonal(const BasicVar<Scalar>& a) {
  detail::require_rank2(a, "diagonal");
  if (a.rows() != a.cols()) throw DimensionError("diagonal: matrix must be square");
  std::vector<Index> idx(static_cast<std::size_t>(a.rows()));
  for (Index i = 0; i < a.rows(); ++i) idx[static_cast<std::size_t>(i)] = i;
  return pick(a, std::move(idx));
}

// ---------------------------------------------------------------------------
// Normalization and softmax family

/// Scales every row to unit Euclidean norm.
template <typename Scalar>
BasicVar<Scalar> l2_normalize(const BasicVar<Scalar>& a) {
  using Matrix = MatrixX<Scalar>;
  detail::require_rank2(a, "l2_normalize");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> norms = a.value().matrix().rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) >= Scalar(1e-12))) {
      throw DegenerateInputError("l2_normalize: row " + std::to_string(i) + " has (near) zero norm");
    }
  }
  Matrix y = a.value().matrix().array().colwise() / norms.array();
  const std::size_t ia = a.id();
  return a.graph().record(BasicTensor<Scalar>(a.shape(), std::move(y)), {ia},
                          [ia, norms = std::move(norms)](BasicGraph<Scalar>& g, std::size_t self) {
                            if (!g.needs_grad(ia)) return;
                            const auto& y = g.value(self).matrix();
                            const auto& dy = g.grad(self);
                            // dx = (dy - y <y, dy>) / |x|
                            Eigen::Matrix<Scalar, Eigen::Dynamic, 1> proj = y.cwiseProduct(dy).rowwise().sum();
                            g.grad_buffer(ia).array() +=
                                (dy.array() - y.array().colwise() * proj.array()).colwise() / norms.array();
                          });
}

/// Pairwise cosine similarities between the rows of a and the rows of b.
template <typename Scalar>
BasicVar<Scalar> cosine_sim_matrix(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_rank2(a, "cosine_sim_matrix");
  detail::require_rank2(b, "cosine_sim_matrix");
  if (a.cols() != b.cols()) throw DimensionError("cosine_sim_matrix: embedding widths differ");
  return matmul(l2_normalize(a), transpose(l2_normalize(b)));
}

namespace detail {

inline void check_mask(const std::optional<Mask>& mask, Index rows, Index cols, const char* op) {
  if (!mask) return;
  if (mask->rows() != rows || mask->cols() != cols) throw DimensionError(std::string(op) + ": mask shape mismatch");
  for (Index i = 0; i < rows; ++i) {
    if (!mask->row(i).any()) throw DegenerateInputError(std::string(op) + ": row " + std::to_string(i) + " fully masked");
  }
}

/// Row-wise softmax restricted to entries where keep(i, j) is true.
template <typename Scalar>
MatrixX<Scalar> masked_softmax(const MatrixX<Scalar>& x, const std::optional<Mask>& keep,
                               Eigen::Matrix<Scalar, Eigen::Dynamic, 1>* lse) {
  MatrixX<Scalar> p(x.rows(), x.cols());
  if (lse) lse->resize(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    Scalar m = -std::numeric_limits<Scalar>::infinity();
    for (Index j = 0; j < x.cols(); ++j) {
      if (!keep || (*keep)(i, j)) m = std::max(m, x(i, j));
    }
    Scalar z = 0;
    for (Index j = 0; j < x.cols(); ++j) {
      const Scalar e = (!keep || (*keep)(i, j)) ? std::exp(x(i, j) - m) : Scalar(0);
      p(i, j) = e;
      z += e;
    }
    p.row(i) /= z;
    if (lse) (*lse)(i) = m + std::log(z);
  }
  return p;
}

}  // namespace detail

/// Numerically stable row softmax (max subtraction). Entries where `keep` is
/// false get probability 0.
template <typename Scalar>
BasicVar<Scalar> softmax_rows(const BasicVar<Scalar>& a, std::optional<Mask> keep = std::nullopt) {
  detail::require_rank2(a, "softmax_rows");
  detail::check_mask(keep, a.rows(), a.cols(), "softmax_rows");
  MatrixX<Scalar> p = detail::masked_softmax<Scalar>(a.value().matrix(), keep, nullptr);
  const std::size_t ia = a.id();
  return a.graph().record(BasicTensor<Scalar>(a.shape(), std::move(p)), {ia},
                          [ia](BasicGraph<Scalar>& g, std::size_t self) {
                            if (!g.needs_grad(ia)) return;
                            const auto& p = g.value(self).matrix();
                            const auto& dy = g.grad(self);
                            Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot = p.cwiseProduct(dy).rowwise().sum();
                            g.grad_buffer(ia).array() +=
                                p.array() * (dy.array().colwise() - dot.array());
                          });
}

/// log(sum_j exp(a(i, j))) over kept entries, one value per row.
template <typename Scalar>
BasicVar<Scalar> logsumexp_rows(const BasicVar<Scalar>& a, std::optional<Mask> keep = std::nullopt) {
  detail::require_rank2(a, "logsumexp_rows");
  detail::check_mask(keep, a.rows(), a.cols(), "logsumexp_rows");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> lse;
  MatrixX<Scalar> p = detail::masked_softmax<Scalar>(a.value().matrix(), keep, &lse);
  MatrixX<Scalar> out = lse.transpose();
  const std::size_t ia = a.id();
  return a.graph().record(BasicTensor<Scalar>({a.rows()}, std::move(out)), {ia},
                          [ia, p = std::move(p)](BasicGraph<Scalar>& g, std::size_t self) {
                            if (!g.needs_grad(ia)) return;
                            const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dy = g.grad(self).transpose();
                            g.grad_buffer(ia).array() += p.array().colwise() * dy.array();
                          });
}

}  // namespace mmssl
