#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "socnn/error.hpp"
#include "socnn/rng.hpp"

namespace socnn {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

template <typename T>
struct TensorNode;

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

// Per-backward-pass gradient accumulator. Keyed by node identity so a pass
// never mutates shared leaf state unless the caller publishes it afterwards.
template <typename T>
class GradMap {
 public:
  std::vector<T>& at(const TensorNode<T>* node, int64_t numel) {
    auto it = grads_.find(node);
    if (it == grads_.end()) {
      it = grads_.emplace(node, std::vector<T>(static_cast<size_t>(numel), T(0))).first;
    }
    return it->second;
  }
  bool contains(const TensorNode<T>* node) const { return grads_.count(node) > 0; }
  const std::vector<T>& get(const TensorNode<T>* node) const { return grads_.at(node); }
  auto begin() { return grads_.begin(); }
  auto end() { return grads_.end(); }
  void clear() { grads_.clear(); }

 private:
  std::unordered_map<const TensorNode<T>*, std::vector<T>> grads_;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> values;
  bool requires_grad = false;  // leaf flag
  bool needs_grad = false;     // this node or an ancestor requires grad
  std::vector<T> grad;         // published gradient (leaves, after backward)
  std::vector<NodePtr<T>> parents;
  std::function<void(const std::vector<T>&, GradMap<T>&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  bool is_leaf() const { return parents.empty(); }
};

// Compensated (Kahan) accumulator. Reduction results are insensitive to the
// order of the summands well below the tolerances asserted by the
// permutation-invariance suites.
template <typename T>
struct KahanSum {
  T sum = T(0);
  T comp = T(0);
  void add(T x) {
    const T y = x - comp;
    const T t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
};

// Dense row-major tensor handle with reverse-mode automatic differentiation.
// Copies share the underlying node; ops build a DAG evaluated eagerly.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr<T> node) : node_(std::move(node)) {}

  static Tensor leaf(Shape shape, std::vector<T> values, bool requires_grad = false) {
    const int64_t n = shape_numel(shape);
    if (n != static_cast<int64_t>(values.size())) {
      throw ShapeError("leaf: " + std::to_string(values.size()) + " values for shape " +
                       shape_str(shape));
    }
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    node->needs_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<T> v(static_cast<size_t>(shape_numel(shape)), T(0));
    return leaf(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    std::vector<T> v(static_cast<size_t>(shape_numel(shape)), value);
    return leaf(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor scalar(T value) { return leaf({1}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return node_->numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool needs_grad() const { return node_->needs_grad; }

  const std::vector<T>& values() const { return node_->values; }

  // Leaf data may be mutated in place (parameter updates, finite-difference
  // probes). Graph interiors are immutable.
  std::vector<T>& mutable_values() {
    if (!node_->is_leaf()) throw ValueError("mutable_values: not a leaf tensor");
    return node_->values;
  }

  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " values");
    return node_->values[0];
  }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<T>& grad() const {
    if (node_->grad.empty()) throw ValueError("grad: no gradient accumulated");
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->values.size(), T(0)); }
  void clear_grad() { node_->grad.clear(); }

  NodePtr<T> node() const { return node_; }

  // Reverse sweep from this (scalar) tensor; leaf gradients are accumulated
  // into each leaf's published grad buffer.
  void backward() {
    if (numel() != 1) throw ShapeError("backward: implicit seed requires a scalar tensor");
    backward(std::vector<T>{T(1)});
  }

  void backward(const std::vector<T>& seed) {
    GradMap<T> sink;
    backward_into(sink, seed);
    publish_leaf_grads(sink);
  }

  // Same sweep, but gradients stay in `sink`; shared leaves are untouched.
  // Safe to run concurrently for distinct graphs over shared leaves.
  void backward_into(GradMap<T>& sink, const std::vector<T>& seed) const {
    if (static_cast<int64_t>(seed.size()) != numel()) {
      throw ShapeError("backward: seed size mismatch");
    }
    if (!node_->needs_grad) return;
    std::vector<TensorNode<T>*> order = topo_order();
    sink.at(node_.get(), numel()) = seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorNode<T>* n = *it;
      if (!sink.contains(n) || !n->backward_fn) continue;
      n->backward_fn(sink.get(n), sink);
    }
  }

  void publish_leaf_grads(GradMap<T>& sink) {
    std::vector<TensorNode<T>*> order = topo_order();
    for (TensorNode<T>* n : order) {
      if (!n->is_leaf() || !n->requires_grad || !sink.contains(n)) continue;
      const std::vector<T>& g = sink.get(n);
      if (n->grad.empty()) n->grad.assign(n->values.size(), T(0));
      for (size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
    }
  }

 private:
  std::vector<TensorNode<T>*> topo_order() const {
    std::vector<TensorNode<T>*> order;
    std::vector<std::pair<TensorNode<T>*, size_t>> stack;
    std::unordered_map<TensorNode<T>*, bool> done;  // false = open, true = closed
    stack.emplace_back(node_.get(), 0);
    done[node_.get()] = false;
    while (!stack.empty()) {
      auto& [n, next_parent] = stack.back();
      if (next_parent < n->parents.size()) {
        TensorNode<T>* p = n->parents[next_parent].get();
        ++next_parent;
        if (p->needs_grad && done.find(p) == done.end()) {
          done[p] = false;
          stack.emplace_back(p, 0);
        }
      } else {
        done[n] = true;
        order.push_back(n);
        stack.pop_back();
      }
    }
    return order;  // parents precede children
  }

  NodePtr<T> node_;
};

namespace detail {

template <typename T>
NodePtr<T> make_op(Shape shape, std::vector<NodePtr<T>> parents) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->values.resize(static_cast<size_t>(shape_numel(node->shape)));
  node->parents = std::move(parents);
  for (const auto& p : node->parents) node->needs_grad = node->needs_grad || p->needs_grad;
  return node;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
void require_rank2(const Tensor<T>& x, const char* op) {
  if (x.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2, got " + shape_str(x.shape()));
}

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

// Row vector parameter: accepts {C} or {1,C}.
template <typename T>
int rowvec_width(const Tensor<T>& v, const char* op) {
  if (v.rank() == 1) return v.dim(0);
  if (v.rank() == 2 && v.dim(0) == 1) return v.dim(1);
  throw ShapeError(std::string(op) + ": expected row vector, got " + shape_str(v.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcast arithmetic
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  auto node = detail::make_op<T>(a.shape(), {a.node(), b.node()});
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) node->values[i] = av[i] + bv[i];
  auto pa = a.node();
  auto pb = b.node();
  node->backward_fn = [pa, pb](const std::vector<T>& g, GradMap<T>& gm) {
    if (pa->needs_grad) {
      auto& ga = gm.at(pa.get(), pa->numel());
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (pb->needs_grad) {
      auto& gb = gm.at(pb.get(), pb->numel());
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  auto node = detail::make_op<T>(a.shape(), {a.node(), b.node()});
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) node->values[i] = av[i] - bv[i];
  auto pa = a.node();
  auto pb = b.node();
  node->backward_fn = [pa, pb](const std::vector<T>& g, GradMap<T>& gm) {
    if (pa->needs_grad) {
      auto& ga = gm.at(pa.get(), pa->numel());
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (pb->needs_grad) {
      auto& gb = gm.at(pb.get(), pb->numel());
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  auto node = detail::make_op<T>(a.shape(), {a.node(), b.node()});
  const auto& av = a.values();
  const auto& bv = b.values();
  for (size_t i = 0; i < av.size(); ++i) node->values[i] = av[i] * bv[i];
  auto pa = a.node();
  auto pb = b.node();
  node->backward_fn = [pa, pb](const std::vector<T>& g, GradMap<T>& gm) {
    if (pa->needs_grad) {
      auto& ga = gm.at(pa.get(), pa->numel());
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb->values[i];
    }
    if (pb->needs_grad) {
      auto& gb = gm.at(pb.get(), pb->numel());
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa->values[i];
    }
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  auto node = detail::make_op<T>(a.shape(), {a.node()});
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) node->values[i] = av[i] * s;
  auto pa = a.node();
  node->backward_fn = [pa, s](const std::vector<T>& g, GradMap<T>& gm) {
    if (!pa->needs_grad) return;
    auto& ga = gm.at(pa.get(), pa->numel());
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  auto node = detail::make_op<T>(a.shape(), {a.node()});
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) node->values[i] = av[i] + s;
  auto pa = a.node();
  node->backward_fn = [pa](const std::vector<T>& g, GradMap<T>& gm) {
    if (!pa->needs_grad) return;
    auto& ga = gm.at(pa.get(), pa->numel());
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  };
  return Tensor<T>(node);
}

// y = 1/sqrt(x), elementwise. Inputs must be positive.
template <typename T>
Tensor<T> rsqrt(const Tensor<T>& a) {
  auto node = detail::make_op<T>(a.shape(), {a.node()});
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) node->values[i] = T(1) / std::sqrt(av[i]);
  auto pa = a.node();
  TensorNode<T>* self = node.get();
  node->backward_fn = [pa, self](const std::vector<T>& g, GradMap<T>& gm) {
    if (!pa->needs_grad) return;
    auto& ga = gm.at(pa.get(), pa->numel());
    for (size_t i = 0; i < g.size(); ++i) {
      const T y = self->values[i];
      ga[i] += g[i] * T(-0.5) * y * y * y;
    }
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  if (!(slope > T(0) && slope < T(1))) throw ValueError("leaky_relu: slope must be in (0,1)");
  auto node = detail::make_op<T>(a.shape(), {a.node()});
  const auto& av = a.values();
  for (size_t i = 0; i < av.size(); ++i) node->values[i] = av[i] > T(0) ? av[i] : slope * av[i];
  auto pa = a.node();
  node->backward_fn = [pa, slope](const std::vector<T>& g, GradMap<T>& gm) {
    if (!pa->needs_grad) return;
    auto& ga = gm.at(pa.get(), pa->numel());
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * (pa->values[i] > T(0) ? T(1) : slope);
    }
  };
  return Tensor<T>(node);
}

// ---------------------------------------------------------------------------
// Row-vector broadcasting over rank-2 tensors
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  detail::require_rank2(x, "add_rowvec");
  const int cols = detail::rowvec_width(v, "add_rowvec");
  if (cols != x.dim(1)) throw ShapeError("add_rowvec: width mismatch");
  auto node = detail::make_op<T>(x.shape(), {x.node(), v.node()});
  const int rows = x.dim(0);
  const auto& xv = x.values();
  const auto& vv = v.values();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      node->values[static_cast<size_t>(r) * cols + c] = xv[static_cast<size_t>(r) * cols + c] + vv[static_cast<size_t>(c)];
    }
  }
  auto px = x.node();
  auto pv = v.node();
  node->backward_fn = [px, pv, rows, cols](const std::vector<T>& g, GradMap<T>& gm) {
    if (px->needs_grad) {
      auto& gx = gm.at(px.get(), px->numel());
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (pv->needs_grad) {
      auto& gv = gm.at(pv.get(), pv->numel());
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) gv[static_cast<size_t>(c)] += g[static_cast<size_t>(r) * cols + c];
      }
    }
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> sub_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  detail::require_rank2(x, "sub_rowvec");
  const int cols = detail::rowvec_width(v, "sub_rowvec");
  if (cols != x.dim(1)) throw ShapeError("sub_rowvec: width mismatch");
  auto node = detail::make_op<T>(x.shape(), {x.node(), v.node()});
  const int rows = x.dim(0);
  const auto& xv = x.values();
  const auto& vv = v.values();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      node->values[static_cast<size_t>(r) * cols + c] = xv[static_cast<size_t>(r) * cols + c] - vv[static_cast<size_t>(c)];
    }
  }
  auto px = x.node();
  auto pv = v.node();
  node->backward_fn = [px, pv, rows, cols](const std::vector<T>& g, GradMap<T>& gm) {
    if (px->needs_grad) {
      auto& gx = gm.at(px.get(), px->numel());
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (pv->needs_grad) {
      auto& gv = gm.at(pv.get(), pv->numel());
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) gv[static_cast<size_t>(c)] -= g[static_cast<size_t>(r) * cols + c];
      }
    }
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> mul_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  detail::require_rank2(x, "mul_rowvec");
  const int cols = detail::rowvec_width(v, "mul_rowvec");
  if (cols != x.dim(1)) throw ShapeError("mul_rowvec: width mismatch");
  auto node = detail::make_op<T>(x.shape(), {x.node(), v.node()});
  const int rows = x.dim(0);
  const auto& xv = x.values();
  const auto& vv = v.values();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      node->values[static_cast<size_t>(r) * cols + c] = xv[static_cast<size_t>(r) * cols + c] * vv[static_cast<size_t>(c)];
    }
  }
  auto px = x.node();
  auto pv = v.node();
  node->backward_fn = [px, pv, rows, cols](const std::vector<T>& g, GradMap<T>& gm) {
    if (px->needs_grad) {
      auto& gx = gm.at(px.get(), px->numel());
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          gx[static_cast<size_t>(r) * cols + c] += g[static_cast<size_t>(r) * cols + c] * pv->values[static_cast<size_t>(c)];
        }
      }
    }
    if (pv->needs_grad) {
      auto& gv = gm.at(pv.get(), pv->numel());
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          gv[static_cast<size_t>(c)] += g[static_cast<size_t>(r) * cols + c] * px->values[static_cast<size_t>(r) * cols + c];
        }
      }
    }
  };
  return Tensor<T>(node);
}

// ---------------------------------------------------------------------------
// Matrix products (Eigen-backed kernels)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto node = detail::make_op<T>({m, n}, {a.node(), b.node()});
  detail::ECMap<T> A(a.values().data(), m, k);
  detail::ECMap<T> B(b.values().data(), k, n);
  detail::EMap<T> C(node->values.data(), m, n);
  C.noalias() = A * B;
  auto pa = a.node();
  auto pb = b.node();
  node->backward_fn = [pa, pb, m, k, n](const std::vector<T>& g, GradMap<T>& gm) {
    detail::ECMap<T> G(g.data(), m, n);
    if (pa->needs_grad) {
      auto& ga = gm.at(pa.get(), pa->numel());
      detail::EMap<T> GA(ga.data(), m, k);
      detail::ECMap<T> B(pb->values.data(), k, n);
      GA.noalias() += G * B.transpose();
    }
    if (pb->needs_grad) {
      auto& gb = gm.at(pb.get(), pb->numel());
      detail::EMap<T> GB(gb.data(), k, n);
      detail::ECMap<T> A(pa->values.data(), m, k);
      GB.noalias() += A.transpose() * G;
    }
  };
  return Tensor<T>(node);
}

// C = A * B^T for A [MxK], B [NxK].
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a, "matmul_nt");
  detail::require_rank2(b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) {
    throw ShapeError("matmul_nt: inner dimensions " + shape_str(a.shape()) + " * " + shape_str(b.shape()) + "^T");
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  auto node = detail::make_op<T>({m, n}, {a.node(), b.node()});
  detail::ECMap<T> A(a.values().data(), m, k);
  detail::ECMap<T> B(b.values().data(), n, k);
  detail::EMap<T> C(node->values.data(), m, n);
  C.noalias() = A * B.transpose();
  auto pa = a.node();
  auto pb = b.node();
  node->backward_fn = [pa, pb, m, k, n](const std::vector<T>& g, GradMap<T>& gm) {
    detail::ECMap<T> G(g.data(), m, n);
    if (pa->needs_grad) {
      auto& ga = gm.at(pa.get(), pa->numel());
      detail::EMap<T> GA(ga.data(), m, k);
      detail::ECMap<T> B(pb->values.data(), n, k);
      GA.noalias() += G * B;
    }
    if (pb->needs_grad) {
      auto& gb = gm.at(pb.get(), pb->numel());
      detail::EMap<T> GB(gb.data(), n, k);
      detail::ECMap<T> A(pa->values.data(), m, k);
      GB.noalias() += G.transpose() * A;
    }
  };
  return Tensor<T>(node);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  auto node = detail::make_op<T>({1}, {x.node()});
  KahanSum<T> acc;
  for (T v : x.values()) acc.add(v);
  node->values[0] = acc.sum;
  auto px = x.node();
  node->backward_fn = [px](const std::vector<T>& g, GradMap<T>& gm) {
    if (!px->needs_grad) return;
    auto& gx = gm.at(px.get(), px->numel());
    for (auto& v : gx) v += g[0];
  };
  return Tensor<T>(node);
}

// Column means of a rank-2 tensor, compensated summation.
template <typename T>
Tensor<T> colwise_mean(const Tensor<T>& x) {
  detail::require_rank2(x, "colwise_mean");
  const int rows = x.dim(0), cols = x.dim(1);
  if (rows < 1) throw ShapeError("colwise_mean: empty tensor");
  auto node = detail::make_op<T>({1, cols}, {x.node()});
  std::vector<KahanSum<T>> acc(static_cast<size_t>(cols));
  const auto& xv = x.values();
  for (int r = 0; r < rows; ++r) {
    const T* row = xv.data() + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) acc[static_cast<size_t>(c)].add(row[c]);
  }
  for (int c = 0; c < cols; ++c) node->values[static_cast<size_t>(c)] = acc[static_cast<size_t>(c)].sum / T(rows);
  auto px = x.node();
  node->backward_fn = [px, rows, cols](const std::vector<T>& g, GradMap<T>& gm) {
    if (!px->needs_grad) return;
    auto& gx = gm.at(px.get(), px->numel());
    const T inv = T(1) / T(rows);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) gx[static_cast<size_t>(r) * cols + c] += g[static_cast<size_t>(c)] * inv;
    }
  };
  return Tensor<T>(node);
}

// Mean over the middle axis of a rank-3 tensor: [N,k,C] -> [N,C]. Each
// k-slice is sorted by value before compensated summation, so the result is
// bitwise invariant to any reordering of the slice entries.
template <typename T>
Tensor<T> mean_axis1(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("mean_axis1: expected rank-3, got " + shape_str(x.shape()));
  const int n = x.dim(0), k = x.dim(1), c = x.dim(2);
  if (k < 1) throw ShapeError("mean_axis1: empty middle axis");
  auto node = detail::make_op<T>({n, c}, {x.node()});
  const auto& xv = x.values();
  std::vector<T> slice(static_cast<size_t>(k));
  for (int i = 0; i < n; ++i) {
    T* out = node->values.data() + static_cast<size_t>(i) * c;
    const T* block = xv.data() + static_cast<size_t>(i) * k * c;
    for (int q = 0; q < c; ++q) {
      for (int j = 0; j < k; ++j) slice[static_cast<size_t>(j)] = block[static_cast<size_t>(j) * c + q];
      std::sort(slice.begin(), slice.end());
      KahanSum<T> acc;
      for (T v : slice) acc.add(v);
      out[q] = acc.sum / T(k);
    }
  }
  auto px = x.node();
  node->backward_fn = [px, n, k, c](const std::vector<T>& g, GradMap<T>& gm) {
    if (!px->needs_grad) return;
    auto& gx = gm.at(px.get(), px->numel());
    const T inv = T(1) / T(k);
    for (int i = 0; i < n; ++i) {
      const T* gi = g.data() + static_cast<size_t>(i) * c;
      for (int j = 0; j < k; ++j) {
        T* row = gx.data() + (static_cast<size_t>(i) * k + j) * c;
        for (int q = 0; q < c; ++q) row[q] += gi[q] * inv;
      }
    }
  };
  return Tensor<T>(node);
}

// Max over the middle axis of a rank-3 tensor; ties resolve to the lowest
// index, gradients route to the selected entries only.
template <typename T>
Tensor<T> max_axis1(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("max_axis1: expected rank-3, got " + shape_str(x.shape()));
  const int n = x.dim(0), k = x.dim(1), c = x.dim(2);
  if (k < 1) throw ShapeError("max_axis1: empty middle axis");
  auto node = detail::make_op<T>({n, c}, {x.node()});
  auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(n) * c, 0);
  const auto& xv = x.values();
  for (int i = 0; i < n; ++i) {
    T* out = node->values.data() + static_cast<size_t>(i) * c;
    int* arg = argmax->data() + static_cast<size_t>(i) * c;
    const T* first = xv.data() + static_cast<size_t>(i) * k * c;
    for (int q = 0; q < c; ++q) out[q] = first[q];
    for (int j = 1; j < k; ++j) {
      const T* row = first + static_cast<size_t>(j) * c;
      for (int q = 0; q < c; ++q) {
        if (row[q] > out[q]) {
          out[q] = row[q];
          arg[q] = j;
        }
      }
    }
  }
  auto px = x.node();
  node->backward_fn = [px, argmax, n, k, c](const std::vector<T>& g, GradMap<T>& gm) {
    if (!px->needs_grad) return;
    auto& gx = gm.at(px.get(), px->numel());
    for (int i = 0; i < n; ++i) {
      const int* arg = argmax->data() + static_cast<size_t>(i) * c;
      const T* gi = g.data() + static_cast<size_t>(i) * c;
      for (int q = 0; q < c; ++q) {
        gx[(static_cast<size_t>(i) * k + arg[q]) * c + q] += gi[q];
      }
    }
  };
  return Tensor<T>(node);
}

// Columnwise max of a rank-2 tensor: [R,C] -> [1,C].
template <typename T>
Tensor<T> colwise_max(const Tensor<T>& x) {
  detail::require_rank2(x, "colwise_max");
  const int rows = x.dim(0), cols = x.dim(1);
  if (rows < 1) throw ShapeError("colwise_max: empty tensor");
  auto node = detail::make_op<T>({1, cols}, {x.node()});
  auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(cols), 0);
  const auto& xv = x.values();
  for (int c = 0; c < cols; ++c) node->values[static_cast<size_t>(c)] = xv[static_cast<size_t>(c)];
  for (int r = 1; r < rows; ++r) {
    const T* row = xv.data() + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) {
      if (row[c] > node->values[static_cast<size_t>(c)]) {
        node->values[static_cast<size_t>(c)] = row[c];
        (*argmax)[static_cast<size_t>(c)] = r;
      }
    }
  }
  auto px = x.node();
  node->backward_fn = [px, argmax, cols](const std::vector<T>& g, GradMap<T>& gm) {
    if (!px->needs_grad) return;
    auto& gx = gm.at(px.get(), px->numel());
    for (int c = 0; c < cols; ++c) {
      gx[static_cast<size_t>((*argmax)[static_cast<size_t>(c)]) * cols + c] += g[static_cast<size_t>(c)];
    }
  };
  return Tensor<T>(node);
}

// ---------------------------------------------------------------------------
// Softmax and losses
// ---------------------------------------------------------------------------

// Row softmax with max-subtraction; denominators use compensated summation.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  detail::require_rank2(x, "softmax_rows");
  const int rows = x.dim(0), cols = x.dim(1);
  auto node = detail::make_op<T>(x.shape(), {x.node()});
  const auto& xv = x.values();
  for (int r = 0; r < rows; ++r) {
    const T* in = xv.data() + static_cast<size_t>(r) * cols;
    T* out = node->values.data() + static_cast<size_t>(r) * cols;
    T mx = in[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    KahanSum<T> denom;
    for (int c = 0; c < cols; ++c) {
      out[c] = std::exp(in[c] - mx);
      denom.add(out[c]);
    }
    const T inv = T(1) / denom.sum;
    for (int c = 0; c < cols; ++c) out[c] *= inv;
  }
  auto px = x.node();
  TensorNode<T>* self = node.get();
  node->backward_fn = [px, self, rows, cols](const std::vector<T>& g, GradMap<T>& gm) {
    if (!px->needs_grad) return;
    auto& gx = gm.at(px.get(), px->numel());
    for (int r = 0; r < rows; ++r) {
      const T* y = self->values.data() + static_cast<size_t>(r) * cols;
      const T* gr = g.data() + static_cast<size_t>(r) * cols;
      T dot = T(0);
      for (int c = 0; c < cols; ++c) dot += gr[c] * y[c];
      T* gxr = gx.data() + static_cast<size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) gxr[c] += y[c] * (gr[c] - dot);
    }
  };
  return Tensor<T>(node);
}

// Mean softmax cross-entropy over rows. Labels are class indices.
template <typename T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits, const std::vector<int>& labels) {
  detail::require_rank2(logits, "cross_entropy_mean");
  const int rows = logits.dim(0), cols = logits.dim(1);
  if (static_cast<int>(labels.size()) != rows) {
    throw ShapeError("cross_entropy_mean: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  for (int r = 0; r < rows; ++r) {
    if (labels[static_cast<size_t>(r)] < 0 || labels[static_cast<size_t>(r)] >= cols) {
      throw ValueError("cross_entropy_mean: label " + std::to_string(labels[static_cast<size_t>(r)]) +
                       " out of range for " + std::to_string(cols) + " classes");
    }
  }
  auto node = detail::make_op<T>({1}, {logits.node()});
  auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(rows) * cols);
  const auto& xv = logits.values();
  T loss = T(0);
  for (int r = 0; r < rows; ++r) {
    const T* in = xv.data() + static_cast<size_t>(r) * cols;
    T* p = probs->data() + static_cast<size_t>(r) * cols;
    T mx = in[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    KahanSum<T> denom;
    for (int c = 0; c < cols; ++c) {
      p[c] = std::exp(in[c] - mx);
      denom.add(p[c]);
    }
    const T lse = mx + std::log(denom.sum);
    loss -= in[labels[static_cast<size_t>(r)]] - lse;
    const T inv = T(1) / denom.sum;
    for (int c = 0; c < cols; ++c) p[c] *= inv;
  }
  node->values[0] = loss / T(rows);
  auto px = logits.node();
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  node->backward_fn = [px, probs, labels_copy, rows, cols](const std::vector<T>& g, GradMap<T>& gm) {
    if (!px->needs_grad) return;
    auto& gx = gm.at(px.get(), px->numel());
    const T w = g[0] / T(rows);
    for (int r = 0; r < rows; ++r) {
      const T* p = probs->data() + static_cast<size_t>(r) * cols;
      T* gxr = gx.data() + static_cast<size_t>(r) * cols;
      const int y = (*labels_copy)[static_cast<size_t>(r)];
      for (int c = 0; c < cols; ++c) gxr[c] += w * (p[c] - (c == y ? T(1) : T(0)));
    }
  };
  return Tensor<T>(node);
}

// ---------------------------------------------------------------------------
// Structure ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
  }
  auto node = detail::make_op<T>(new_shape, {x.node()});
  node->values = x.values();
  auto px = x.node();
  node->backward_fn = [px](const std::vector<T>& g, GradMap<T>& gm) {
    if (!px->needs_grad) return;
    auto& gx = gm.at(px.get(), px->numel());
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  };
  return Tensor<T>(node);
}

// Gathers feature rows into per-point neighbor blocks: [N,C] with flat
// indices of size N*k -> [N,k,C]. Backward scatter-adds to source rows.
template <typename T>
Tensor<T> gather_rows3(const Tensor<T>& x, const std::vector<int>& flat_indices, int n, int k) {
  detail::require_rank2(x, "gather_rows3");
  const int src_rows = x.dim(0), c = x.dim(1);
  if (static_cast<int64_t>(flat_indices.size()) != static_cast<int64_t>(n) * k) {
    throw ShapeError("gather_rows3: index count mismatch");
  }
  for (int idx : flat_indices) {
    if (idx < 0 || idx >= src_rows) {
      throw ValueError("gather_rows3: index " + std::to_string(idx) + " out of range [0," +
                       std::to_string(src_rows) + ")");
    }
  }
  auto node = detail::make_op<T>({n, k, c}, {x.node()});
  const auto& xv = x.values();
  for (int64_t i = 0; i < static_cast<int64_t>(n) * k; ++i) {
    std::copy_n(xv.data() + static_cast<size_t>(flat_indices[static_cast<size_t>(i)]) * c, c,
                node->values.data() + static_cast<size_t>(i) * c);
  }
  auto px = x.node();
  auto idx_copy = std::make_shared<std::vector<int>>(flat_indices);
  node->backward_fn = [px, idx_copy, n, k, c](const std::vector<T>& g, GradMap<T>& gm) {
    if (!px->needs_grad) return;
    auto& gx = gm.at(px.get(), px->numel());
    for (int64_t i = 0; i < static_cast<int64_t>(n) * k; ++i) {
      const T* gi = g.data() + static_cast<size_t>(i) * c;
      T* dst = gx.data() + static_cast<size_t>((*idx_copy)[static_cast<size_t>(i)]) * c;
      for (int q = 0; q < c; ++q) dst[q] += gi[q];
    }
  };
  return Tensor<T>(node);
}

// a[N,k,C] - b[N,C] broadcast over the middle axis.
template <typename T>
Tensor<T> sub_bcast_mid(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 2 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw ShapeError("sub_bcast_mid: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const int n = a.dim(0), k = a.dim(1), c = a.dim(2);
  auto node = detail::make_op<T>(a.shape(), {a.node(), b.node()});
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int i = 0; i < n; ++i) {
    const T* bi = bv.data() + static_cast<size_t>(i) * c;
    for (int j = 0; j < k; ++j) {
      const T* ai = av.data() + (static_cast<size_t>(i) * k + j) * c;
      T* out = node->values.data() + (static_cast<size_t>(i) * k + j) * c;
      for (int q = 0; q < c; ++q) out[q] = ai[q] - bi[q];
    }
  }
  auto pa = a.node();
  auto pb = b.node();
  node->backward_fn = [pa, pb, n, k, c](const std::vector<T>& g, GradMap<T>& gm) {
    if (pa->needs_grad) {
      auto& ga = gm.at(pa.get(), pa->numel());
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (pb->needs_grad) {
      auto& gb = gm.at(pb.get(), pb->numel());
      for (int i = 0; i < n; ++i) {
        T* gbi = gb.data() + static_cast<size_t>(i) * c;
        for (int j = 0; j < k; ++j) {
          const T* gi = g.data() + (static_cast<size_t>(i) * k + j) * c;
          for (int q = 0; q < c; ++q) gbi[q] -= gi[q];
        }
      }
    }
  };
  return Tensor<T>(node);
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int rows = parts[0].dim(0);
  int total = 0;
  std::vector<NodePtr<T>> parents;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.dim(0) != rows) throw ShapeError("concat_cols: row count mismatch");
    total += p.dim(1);
    parents.push_back(p.node());
  }
  auto node = detail::make_op<T>({rows, total}, parents);
  int offset = 0;
  for (const auto& p : parts) {
    const int c = p.dim(1);
    for (int r = 0; r < rows; ++r) {
      std::copy_n(p.values().data() + static_cast<size_t>(r) * c, c,
                  node->values.data() + static_cast<size_t>(r) * total + offset);
    }
    offset += c;
  }
  auto parents_copy = std::make_shared<std::vector<NodePtr<T>>>(parents);
  node->backward_fn = [parents_copy, rows, total](const std::vector<T>& g, GradMap<T>& gm) {
    int offset = 0;
    for (const auto& p : *parents_copy) {
      const int c = p->shape[1];
      if (p->needs_grad) {
        auto& gp = gm.at(p.get(), p->numel());
        for (int r = 0; r < rows; ++r) {
          const T* src = g.data() + static_cast<size_t>(r) * total + offset;
          T* dst = gp.data() + static_cast<size_t>(r) * c;
          for (int q = 0; q < c; ++q) dst[q] += src[q];
        }
      }
      offset += c;
    }
  };
  return Tensor<T>(node);
}

// Stacks B [1,C] rows into [B,C].
template <typename T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no inputs");
  const int c = rows[0].dim(rows[0].rank() - 1);
  std::vector<NodePtr<T>> parents;
  for (const auto& r : rows) {
    if (r.numel() != c) throw ShapeError("stack_rows: width mismatch");
    parents.push_back(r.node());
  }
  const int b = static_cast<int>(rows.size());
  auto node = detail::make_op<T>({b, c}, parents);
  for (int r = 0; r < b; ++r) {
    std::copy_n(rows[static_cast<size_t>(r)].values().data(), c,
                node->values.data() + static_cast<size_t>(r) * c);
  }
  auto parents_copy = std::make_shared<std::vector<NodePtr<T>>>(parents);
  node->backward_fn = [parents_copy, c](const std::vector<T>& g, GradMap<T>& gm) {
    for (size_t r = 0; r < parents_copy->size(); ++r) {
      const auto& p = (*parents_copy)[r];
      if (!p->needs_grad) continue;
      auto& gp = gm.at(p.get(), p->numel());
      const T* src = g.data() + r * static_cast<size_t>(c);
      for (int q = 0; q < c; ++q) gp[static_cast<size_t>(q)] += src[q];
    }
  };
  return Tensor<T>(node);
}

// Broadcast a [1,C] row to [n,C]. Backward sums over rows.
template <typename T>
Tensor<T> repeat_row(const Tensor<T>& x, int n) {
  const int c = detail::rowvec_width(x, "repeat_row");
  if (n < 1) throw ShapeError("repeat_row: n must be >= 1");
  auto node = detail::make_op<T>({n, c}, {x.node()});
  for (int r = 0; r < n; ++r) {
    std::copy_n(x.values().data(), c, node->values.data() + static_cast<size_t>(r) * c);
  }
  auto px = x.node();
  node->backward_fn = [px, n, c](const std::vector<T>& g, GradMap<T>& gm) {
    if (!px->needs_grad) return;
    auto& gx = gm.at(px.get(), px->numel());
    for (int r = 0; r < n; ++r) {
      const T* src = g.data() + static_cast<size_t>(r) * c;
      for (int q = 0; q < c; ++q) gx[static_cast<size_t>(q)] += src[q];
    }
  };
  return Tensor<T>(node);
}

// Inverted dropout: active only when `train` is set; scaling keeps the
// expectation so eval mode is the identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng, bool train) {
  if (rate < 0.0 || rate >= 1.0) throw ValueError("dropout: rate must be in [0,1)");
  if (!train || rate == 0.0) return x;
  auto node = detail::make_op<T>(x.shape(), {x.node()});
  auto mask = std::make_shared<std::vector<T>>(x.values().size());
  const T keep_inv = T(1.0 / (1.0 - rate));
  const auto& xv = x.values();
  for (size_t i = 0; i < xv.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? T(0) : keep_inv;
    node->values[i] = xv[i] * (*mask)[i];
  }
  auto px = x.node();
  node->backward_fn = [px, mask](const std::vector<T>& g, GradMap<T>& gm) {
    if (!px->needs_grad) return;
    auto& gx = gm.at(px.get(), px->numel());
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  };
  return Tensor<T>(node);
}

}  // namespace socnn
