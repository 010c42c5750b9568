#pragma once

// Eager reverse-mode differentiation over 2-D tensors.
//
// Every operation builds a node holding its value and a closure that pushes
// the output gradient into its parents. A graph is owned by the Var handles
// that reference it and must stay on one thread.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ifield/tensor.hpp"

namespace ifield::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  Tensor& grad_buffer() {
    if (!grad.same_shape(value)) grad = Tensor(value.rows(), value.cols());
    return grad;
  }
};

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

class Var {
 public:
  Var() = default;

  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->id = next_node_id();
  }

  static Var scalar(double v, bool requires_grad = false) {
    return Var(Tensor::scalar(v), requires_grad);
  }

  static Var from_node(NodePtr node) {
    Var v;
    v.node_ = std::move(node);
    return v;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  // Mutable access is for leaves only (optimizer updates, finite differences).
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.same_shape(node_->value); }
  bool requires_grad() const { return node_->requires_grad; }
  std::uint64_t id() const { return node_->id; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const { return node_->value.item(); }
  double operator()(std::size_t r, std::size_t c) const { return node_->value(r, c); }

  void zero_grad() { node_->grad = Tensor(); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

class GradientMap {
 public:
  void set(std::uint64_t id, Tensor g) { grads_[id] = std::move(g); }
  bool contains(const Var& v) const { return grads_.count(v.id()) > 0; }
  const Tensor& at(const Var& v) const { return grads_.at(v.id()); }
  std::size_t size() const { return grads_.size(); }
  const std::unordered_map<std::uint64_t, Tensor>& entries() const { return grads_; }

 private:
  std::unordered_map<std::uint64_t, Tensor> grads_;
};

struct BackwardOptions {
  bool retain_graph = false;
};

// Populates grad() of each reachable requires_grad leaf (accumulating into any
// existing gradient) and returns the leaf gradients of this pass.
inline GradientMap backward(const Var& root, BackwardOptions opts = {}) {
  if (!root.defined()) throw std::invalid_argument("backward: undefined root");
  if (!root.value().is_scalar()) {
    throw std::invalid_argument("backward: root must be scalar, got " + root.value().shape_string());
  }
  GradientMap out;
  if (!root.requires_grad()) return out;

  // Iterative post-order DFS; parent order is deterministic so is the tape.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<Node*, Tensor> leaf_before;
  for (Node* n : order) {
    if (n->is_leaf()) {
      leaf_before[n] = n->grad;
      n->grad = Tensor(n->value.rows(), n->value.cols());
    } else {
      n->grad = Tensor(n->value.rows(), n->value.cols());
    }
  }
  root.node()->grad(0, 0) = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf()) n->backward_fn(*n);
  }

  for (Node* n : order) {
    if (n->is_leaf()) {
      out.set(n->id, n->grad);
      Tensor& before = leaf_before[n];
      if (before.same_shape(n->grad)) n->grad += before;
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) {
      n->grad = Tensor();
      if (!opts.retain_graph) {
        n->parents.clear();
        n->backward_fn = nullptr;
        n->requires_grad = false;
      }
    }
  }
  return out;
}

namespace detail {

inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  Var out(std::move(value), needs);
  if (needs) {
    auto& node = *out.node();
    node.parents.reserve(parents.size());
    for (auto& p : parents) node.parents.push_back(p.node());
    node.backward_fn = std::move(fn);
  }
  return out;
}

inline bool wants(const Node& n, std::size_t i) { return n.parents[i]->requires_grad; }
inline Tensor& pgrad(Node& n, std::size_t i) { return n.parents[i]->grad_buffer(); }
inline const Tensor& pval(const Node& n, std::size_t i) { return n.parents[i]->value; }

inline std::size_t broadcast_dim(std::size_t a, std::size_t b, const char* op) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw std::invalid_argument(std::string(op) + ": incompatible broadcast dimensions");
}

// Accumulates g (full output shape) into target, summing over broadcast axes.
inline void reduce_into(Tensor& target, const Tensor& g) {
  const std::size_t tr = target.rows(), tc = target.cols();
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t c = 0; c < g.cols(); ++c) {
      target(tr == 1 ? 0 : r, tc == 1 ? 0 : c) += g(r, c);
    }
  }
}

template <typename F>
Tensor broadcast_apply(const Tensor& a, const Tensor& b, const char* op, F f) {
  const std::size_t rows = broadcast_dim(a.rows(), b.rows(), op);
  const std::size_t cols = broadcast_dim(a.cols(), b.cols(), op);
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t ar = a.rows() == 1 ? 0 : r, br = b.rows() == 1 ? 0 : r;
    for (std::size_t c = 0; c < cols; ++c) {
      out(r, c) = f(a(ar, a.cols() == 1 ? 0 : c), b(br, b.cols() == 1 ? 0 : c));
    }
  }
  return out;
}

template <typename F, typename DF>
Var unary(const Var& x, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_op(std::move(out), {x}, [df](Node& n) {
    const Tensor& xv = pval(n, 0);
    Tensor& g = pgrad(n, 0);
    for (std::size_t i = 0; i < xv.size(); ++i) g[i] += n.grad[i] * df(xv[i], n.value[i]);
  });
}

}  // namespace detail

inline Var constant(Tensor t) { return Var(std::move(t), false); }
inline Var detach(const Var& x) { return Var(x.value(), false); }

// --- elementwise binary ops with 2-D broadcasting ---------------------------

inline Var add(const Var& a, const Var& b) {
  auto out = detail::broadcast_apply(a.value(), b.value(), "add", [](double x, double y) { return x + y; });
  return detail::make_op(std::move(out), {a, b}, [](Node& n) {
    if (detail::wants(n, 0)) detail::reduce_into(detail::pgrad(n, 0), n.grad);
    if (detail::wants(n, 1)) detail::reduce_into(detail::pgrad(n, 1), n.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  auto out = detail::broadcast_apply(a.value(), b.value(), "sub", [](double x, double y) { return x - y; });
  return detail::make_op(std::move(out), {a, b}, [](Node& n) {
    if (detail::wants(n, 0)) detail::reduce_into(detail::pgrad(n, 0), n.grad);
    if (detail::wants(n, 1)) {
      Tensor neg = n.grad;
      for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
      detail::reduce_into(detail::pgrad(n, 1), neg);
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  auto out = detail::broadcast_apply(a.value(), b.value(), "mul", [](double x, double y) { return x * y; });
  return detail::make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = detail::pval(n, 0);
    const Tensor& bv = detail::pval(n, 1);
    if (detail::wants(n, 0)) {
      auto g = detail::broadcast_apply(n.grad, bv, "mul", [](double gg, double y) { return gg * y; });
      detail::reduce_into(detail::pgrad(n, 0), g);
    }
    if (detail::wants(n, 1)) {
      auto g = detail::broadcast_apply(n.grad, av, "mul", [](double gg, double x) { return gg * x; });
      detail::reduce_into(detail::pgrad(n, 1), g);
    }
  });
}

inline Var div(const Var& a, const Var& b) {
  auto out = detail::broadcast_apply(a.value(), b.value(), "div", [](double x, double y) { return x / y; });
  return detail::make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& bv = detail::pval(n, 1);
    if (detail::wants(n, 0)) {
      auto g = detail::broadcast_apply(n.grad, bv, "div", [](double gg, double y) { return gg / y; });
      detail::reduce_into(detail::pgrad(n, 0), g);
    }
    if (detail::wants(n, 1)) {
      // d(a/b)/db = -(a/b)/b
      auto q = detail::broadcast_apply(n.value, bv, "div", [](double o, double y) { return -o / y; });
      for (std::size_t i = 0; i < q.size(); ++i) q[i] *= n.grad[i];
      detail::reduce_into(detail::pgrad(n, 1), q);
    }
  });
}

inline Var minimum(const Var& a, const Var& b) {
  auto out = detail::broadcast_apply(a.value(), b.value(), "minimum", [](double x, double y) { return std::min(x, y); });
  return detail::make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = detail::pval(n, 0);
    const Tensor& bv = detail::pval(n, 1);
    auto pick_a = detail::broadcast_apply(av, bv, "minimum", [](double x, double y) { return x <= y ? 1.0 : 0.0; });
    if (detail::wants(n, 0)) {
      Tensor g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= pick_a[i];
      detail::reduce_into(detail::pgrad(n, 0), g);
    }
    if (detail::wants(n, 1)) {
      Tensor g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - pick_a[i];
      detail::reduce_into(detail::pgrad(n, 1), g);
    }
  });
}

inline Var maximum(const Var& a, const Var& b) {
  auto out = detail::broadcast_apply(a.value(), b.value(), "maximum", [](double x, double y) { return std::max(x, y); });
  return detail::make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = detail::pval(n, 0);
    const Tensor& bv = detail::pval(n, 1);
    auto pick_a = detail::broadcast_apply(av, bv, "maximum", [](double x, double y) { return x >= y ? 1.0 : 0.0; });
    if (detail::wants(n, 0)) {
      Tensor g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= pick_a[i];
      detail::reduce_into(detail::pgrad(n, 0), g);
    }
    if (detail::wants(n, 1)) {
      Tensor g = n.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - pick_a[i];
      detail::reduce_into(detail::pgrad(n, 1), g);
    }
  });
}

inline Var scale(const Var& x, double s) {
  return detail::unary(x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

inline Var add_scalar(const Var& x, double s) {
  return detail::unary(x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator-(const Var& a, double s) { return add_scalar(a, -s); }
inline Var operator-(double s, const Var& a) { return add_scalar(scale(a, -1.0), s); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }

// --- elementwise unary ops --------------------------------------------------

inline Var exp(const Var& x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(const Var& x) {
  return detail::unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline double sigmoid_value(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Var sigmoid(const Var& x) {
  return detail::unary(x, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& x) {
  return detail::unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var square(const Var& x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// Subgradient 0 at the origin.
inline Var sqrt(const Var& x) {
  return detail::unary(
      x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

// Subgradient 0 at the kink.
inline Var abs(const Var& x) {
  return detail::unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Var clamp(const Var& x, double lo, double hi) {
  return detail::unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// --- reductions / shape ops -------------------------------------------------

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return detail::make_op(Tensor::scalar(s), {x}, [](Node& n) {
    Tensor& g = detail::pgrad(n, 0);
    const double gg = n.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gg;
  });
}

inline Var mean(const Var& x) {
  if (x.value().size() == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

// Column sums: (N x C) -> (1 x C).
inline Var sum_rows(const Var& x) {
  const Tensor& xv = x.value();
  Tensor out(1, xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out(0, c) += xv(r, c);
  return detail::make_op(std::move(out), {x}, [](Node& n) {
    Tensor& g = detail::pgrad(n, 0);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += n.grad(0, c);
  });
}

inline Var mean_rows(const Var& x) {
  return scale(sum_rows(x), 1.0 / static_cast<double>(x.rows()));
}

// Row sums: (N x C) -> (N x 1).
inline Var sum_cols(const Var& x) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, 0) += xv(r, c);
  return detail::make_op(std::move(out), {x}, [](Node& n) {
    Tensor& g = detail::pgrad(n, 0);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += n.grad(r, 0);
  });
}

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw std::invalid_argument("matmul: shape mismatch " + av.shape_string() + " x " + bv.shape_string());
  }
  Tensor out(av.rows(), bv.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t k = 0; k < av.cols(); ++k) {
      const double aik = av(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < bv.cols(); ++j) out(i, j) += aik * bv(k, j);
    }
  return detail::make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = detail::pval(n, 0);
    const Tensor& bv = detail::pval(n, 1);
    const Tensor& g = n.grad;
    if (detail::wants(n, 0)) {
      Tensor& ga = detail::pgrad(n, 0);  // g * b^T
      for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t k = 0; k < av.cols(); ++k) {
          double s = 0.0;
          for (std::size_t j = 0; j < bv.cols(); ++j) s += g(i, j) * bv(k, j);
          ga(i, k) += s;
        }
    }
    if (detail::wants(n, 1)) {
      Tensor& gb = detail::pgrad(n, 1);  // a^T * g
      for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t k = 0; k < av.cols(); ++k) {
          const double aik = av(i, k);
          if (aik == 0.0) continue;
          for (std::size_t j = 0; j < bv.cols(); ++j) gb(k, j) += aik * g(i, j);
        }
    }
  });
}

inline Var transpose(const Var& x) {
  const Tensor& xv = x.value();
  Tensor out(xv.cols(), xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out(c, r) = xv(r, c);
  return detail::make_op(std::move(out), {x}, [](Node& n) {
    Tensor& g = detail::pgrad(n, 0);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += n.grad(c, r);
  });
}

inline Var reshape(const Var& x, std::size_t rows, std::size_t cols) {
  if (rows * cols != x.value().size()) throw std::invalid_argument("reshape: size mismatch");
  Tensor out(rows, cols, x.value().vec());
  return detail::make_op(std::move(out), {x}, [](Node& n) {
    Tensor& g = detail::pgrad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

inline Var select_rows(const Var& x, const std::vector<std::size_t>& idx) {
  const Tensor& xv = x.value();
  Tensor out(idx.size(), xv.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= xv.rows()) throw std::out_of_range("select_rows: index out of range");
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) = xv(idx[r], c);
  }
  return detail::make_op(std::move(out), {x}, [idx](Node& n) {
    Tensor& g = detail::pgrad(n, 0);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) g(idx[r], c) += n.grad(r, c);
  });
}

inline Var row(const Var& x, std::size_t r) { return select_rows(x, {r}); }

inline Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (begin > end || end > xv.cols()) throw std::out_of_range("slice_cols: bad range");
  Tensor out(xv.rows(), end - begin);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = xv(r, c);
  return detail::make_op(std::move(out), {x}, [begin, end](Node& n) {
    Tensor& g = detail::pgrad(n, 0);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = begin; c < end; ++c) g(r, c) += n.grad(r, c - begin);
  });
}

inline Var element(const Var& x, std::size_t r, std::size_t c) {
  return slice_cols(row(x, r), c, c + 1);
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::size_t at = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < p.rows(); ++r, ++at)
      for (std::size_t c = 0; c < cols; ++c) out(at, c) = p.value()(r, c);
  }
  return detail::make_op(std::move(out), parts, [](Node& n) {
    std::size_t at = 0;
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      const std::size_t pr = n.parents[i]->value.rows();
      if (detail::wants(n, i)) {
        Tensor& g = detail::pgrad(n, i);
        for (std::size_t r = 0; r < pr; ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) g(r, c) += n.grad(at + r, c);
      }
      at += pr;
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t at = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) out(r, at + c) = p.value()(r, c);
    at += p.cols();
  }
  return detail::make_op(std::move(out), parts, [](Node& n) {
    std::size_t at = 0;
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      const std::size_t pc = n.parents[i]->value.cols();
      if (detail::wants(n, i)) {
        Tensor& g = detail::pgrad(n, i);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < pc; ++c) g(r, c) += n.grad(r, at + c);
      }
      at += pc;
    }
  });
}

// Row-wise softmax.
inline Var softmax_rows(const Var& x) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < xv.cols(); ++c) mx = std::max(mx, xv(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c) z += (out(r, c) = std::exp(xv(r, c) - mx));
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) /= z;
  }
  return detail::make_op(std::move(out), {x}, [](Node& n) {
    Tensor& g = detail::pgrad(n, 0);
    const Tensor& y = n.value;
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += n.grad(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) g(r, c) += y(r, c) * (n.grad(r, c) - dot);
    }
  });
}

inline Var log_softmax_rows(const Var& x) {
  const Tensor& xv = x.value();
  Tensor out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < xv.cols(); ++c) mx = std::max(mx, xv(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c) z += std::exp(xv(r, c) - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) = xv(r, c) - lz;
  }
  return detail::make_op(std::move(out), {x}, [](Node& n) {
    Tensor& g = detail::pgrad(n, 0);
    const Tensor& y = n.value;
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) gs += n.grad(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) g(r, c) += n.grad(r, c) - std::exp(y(r, c)) * gs;
    }
  });
}

// Euclidean norm over all entries; subgradient 0 at the origin.
inline Var l2_norm(const Var& x) { return sqrt(sum(square(x))); }

// Row-wise Euclidean distance between (N x C) and (1 x C): (N x 1).
inline Var row_distances(const Var& x, const Var& center) {
  return sqrt(sum_cols(square(sub(x, center))));
}

}  // namespace ifield::ad
