#pragma once

// Dense row-major float64 arrays with a dynamic reverse-mode tape.
//
// Every op returns a new Tensor; when gradients are enabled and any input
// requires them, the result keeps its inputs and a backward rule. backward()
// topologically sorts the graph reachable from a scalar loss and runs the
// rules in reverse. Leaf gradients accumulate across calls; interior
// gradients are reset at the start of every call.

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "error.hpp"
#include "random.hpp"

namespace opr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void(TensorNode&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled()) { detail::grad_enabled() = false; }
  ~NoGradGuard() { detail::grad_enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::TensorNode>()) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor: shape " + shape_str(shape) + " does not match " +
                           std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
  }
  static Tensor scalar(double v) { return Tensor({}, {v}); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t i, std::size_t j) const { return node_->value[i * node_->shape[1] + j]; }
  double item() const {
    if (numel() != 1) throw DimensionError("item: tensor has " + std::to_string(numel()) + " elements");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && numel() > 0; }
  /// Empty span until a backward pass has touched this tensor.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  /// Copy of the values with no history.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

namespace detail {

using NodePtr = std::shared_ptr<TensorNode>;

/// Builds an op result; records history only when needed.
inline Tensor record(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                     std::function<void(TensorNode&)> backward) {
  Tensor out(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  n.is_leaf = false;
  for (const auto& t : inputs) n.inputs.push_back(t.node());
  n.backward = std::move(backward);
  return out;
}

inline Tensor record(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                     std::function<void(TensorNode&)> backward) {
  Tensor out(std::move(shape), std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  n.is_leaf = false;
  for (const auto& t : inputs) n.inputs.push_back(t.node());
  n.backward = std::move(backward);
  return out;
}

/// Gradient buffer of an input if it wants one, else nullptr.
inline double* grad_of(const NodePtr& n) {
  if (!n->requires_grad) return nullptr;
  n->ensure_grad();
  return n->grad.data();
}

/// Period of `b` when broadcast against `a`: b is a scalar or its shape is a
/// suffix of a's shape.
inline std::size_t broadcast_period(const Tensor& a, const Tensor& b, const char* op) {
  if (b.numel() == 1) return 1;
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (bs.size() <= as.size() && std::equal(bs.begin(), bs.end(), as.end() - static_cast<std::ptrdiff_t>(bs.size()))) {
    return b.numel();
  }
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(bs) + " onto " +
                       shape_str(as));
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
  }
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> y(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(xv[i]);
  NodePtr xn = x.node();
  return record(x.shape(), std::move(y), {x}, [xn, deriv](TensorNode& out) {
    double* gx = grad_of(xn);
    if (!gx) return;
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
      gx[i] += out.grad[i] * deriv(xn->value[i], out.value[i]);
    }
  });
}

}  // namespace detail

/// Runs reverse-mode accumulation from a single-element loss.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("backward: loss must be a scalar, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  using detail::NodePtr;
  using detail::TensorNode;
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  TensorNode* root = loss.node().get();
  if (!root->requires_grad) return;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      TensorNode* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (TensorNode* n : order) {
    if (!n->is_leaf) n->grad.assign(n->value.size(), 0.0);
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf && (*it)->backward) (*it)->backward(**it);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<double> c(n * m, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) c[i * m + j] += aip * bv[p * m + j];
    }
  }
  detail::NodePtr an = a.node(), bn = b.node();
  return detail::record({n, m}, std::move(c), {a, b}, [an, bn, n, k, m](detail::TensorNode& out) {
    const double* g = out.grad.data();
    if (double* ga = detail::grad_of(an)) {
      const double* bv = bn->value.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * bv[p * m + j];
          ga[i * k + p] += s;
        }
    }
    if (double* gb = detail::grad_of(bn)) {
      const double* av = an->value.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += aip * g[i * m + j];
        }
    }
  });
}

inline Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> y(r * c);
  const auto xv = x.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = xv[i * c + j];
  detail::NodePtr xn = x.node();
  return detail::record({c, r}, std::move(y), {x}, [xn, r, c](detail::TensorNode& out) {
    if (double* gx = detail::grad_of(xn)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += out.grad[j * r + i];
    }
  });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  detail::NodePtr xn = x.node();
  return detail::record(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()),
                        {x}, [xn](detail::TensorNode& out) {
                          if (double* gx = detail::grad_of(xn)) {
                            for (std::size_t i = 0; i < out.grad.size(); ++i) gx[i] += out.grad[i];
                          }
                        });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic. The right operand may broadcast when it is a
// scalar or its shape is a suffix of the left operand's shape.

inline Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t P = detail::broadcast_period(a, b, "add");
  std::vector<double> c(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = av[i] + bv[i % P];
  detail::NodePtr an = a.node(), bn = b.node();
  return detail::record(a.shape(), std::move(c), {a, b}, [an, bn, P](detail::TensorNode& out) {
    const auto& g = out.grad;
    if (double* ga = detail::grad_of(an))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (double* gb = detail::grad_of(bn))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % P] += g[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  const std::size_t P = detail::broadcast_period(a, b, "sub");
  std::vector<double> c(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = av[i] - bv[i % P];
  detail::NodePtr an = a.node(), bn = b.node();
  return detail::record(a.shape(), std::move(c), {a, b}, [an, bn, P](detail::TensorNode& out) {
    const auto& g = out.grad;
    if (double* ga = detail::grad_of(an))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (double* gb = detail::grad_of(bn))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % P] -= g[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t P = detail::broadcast_period(a, b, "mul");
  std::vector<double> c(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = av[i] * bv[i % P];
  detail::NodePtr an = a.node(), bn = b.node();
  return detail::record(a.shape(), std::move(c), {a, b}, [an, bn, P](detail::TensorNode& out) {
    const auto& g = out.grad;
    if (double* ga = detail::grad_of(an))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[i % P];
    if (double* gb = detail::grad_of(bn))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % P] += g[i] * an->value[i];
  });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

/// Logistic function.
inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::log(v); },
                       [](double v, double) { return 1.0 / v; });
}

/// Entries where mask is nonzero become `value` and pass no gradient.
inline Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value) {
  if (mask.size() != x.numel()) {
    throw DimensionError("masked_fill: mask has " + std::to_string(mask.size()) +
                         " entries for shape " + shape_str(x.shape()));
  }
  std::vector<double> y(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < y.size(); ++i)
    if (mask[i]) y[i] = value;
  detail::NodePtr xn = x.node();
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return detail::record(x.shape(), std::move(y), {x}, [xn, m = std::move(m)](detail::TensorNode& out) {
    if (double* gx = detail::grad_of(xn))
      for (std::size_t i = 0; i < out.grad.size(); ++i)
        if (!m[i]) gx[i] += out.grad[i];
  });
}

/// Multiplies by a fresh Bernoulli keep-mask scaled by 1 / (1 - rate).
inline Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout: rate must be < 1");
  std::vector<double> keep(x.numel());
  const double s = 1.0 / (1.0 - rate);
  for (auto& k : keep) k = rng.uniform() < rate ? 0.0 : s;
  return mul(x, Tensor(x.shape(), std::move(keep)));
}

// ---------------------------------------------------------------------------
// Shape-changing ops

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range for " + shape_str(s0));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) throw DimensionError("concat: incompatible shapes " + shape_str(s0) + " and " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  const auto split = detail::split_axis(out_shape, axis, "concat");
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis) * split.inner);
  const std::size_t row = split.extent * split.inner;
  std::vector<double> y(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].values();
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * widths[k]), widths[k],
                  y.begin() + static_cast<std::ptrdiff_t>(o * row + offset));
    offset += widths[k];
  }
  std::vector<detail::NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::record(std::move(out_shape), std::move(y), parts,
                        [nodes, widths, row, outer = split.outer](detail::TensorNode& out) {
                          std::size_t off = 0;
                          for (std::size_t k = 0; k < nodes.size(); ++k) {
                            if (double* g = detail::grad_of(nodes[k])) {
                              for (std::size_t o = 0; o < outer; ++o)
                                for (std::size_t i = 0; i < widths[k]; ++i)
                                  g[o * widths[k] + i] += out.grad[o * row + off + i];
                            }
                            off += widths[k];
                          }
                        });
}

/// Sum of all elements, as a rank-0 tensor.
inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  detail::NodePtr xn = x.node();
  return detail::record({}, {s}, {x}, [xn](detail::TensorNode& out) {
    if (double* gx = detail::grad_of(xn))
      for (std::size_t i = 0; i < xn->value.size(); ++i) gx[i] += out.grad[0];
  });
}

/// Sum over one axis, which is removed from the shape.
inline Tensor sum(const Tensor& x, std::size_t axis) {
  const auto sp = detail::split_axis(x.shape(), axis, "sum");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> y(sp.outer * sp.inner, 0.0);
  const auto xv = x.values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t a = 0; a < sp.extent; ++a)
      for (std::size_t i = 0; i < sp.inner; ++i)
        y[o * sp.inner + i] += xv[(o * sp.extent + a) * sp.inner + i];
  detail::NodePtr xn = x.node();
  return detail::record(std::move(out_shape), std::move(y), {x}, [xn, sp](detail::TensorNode& out) {
    if (double* gx = detail::grad_of(xn))
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t a = 0; a < sp.extent; ++a)
          for (std::size_t i = 0; i < sp.inner; ++i)
            gx[(o * sp.extent + a) * sp.inner + i] += out.grad[o * sp.inner + i];
  });
}

inline Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

inline Tensor mean(const Tensor& x, std::size_t axis) {
  const auto sp = detail::split_axis(x.shape(), axis, "mean");
  if (sp.extent == 0) throw DimensionError("mean: empty axis");
  return scale(sum(x, axis), 1.0 / static_cast<double>(sp.extent));
}

namespace detail {

template <bool Log>
Tensor softmax_impl(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis(x.shape(), axis, Log ? "log_softmax" : "softmax");
  std::vector<double> y(x.numel());
  const auto xv = x.values();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto idx = [&](std::size_t a) { return (o * sp.extent + a) * sp.inner + i; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < sp.extent; ++a) mx = std::max(mx, xv[idx(a)]);
      double z = 0.0;
      for (std::size_t a = 0; a < sp.extent; ++a) z += std::exp(xv[idx(a)] - mx);
      const double lz = std::log(z);
      for (std::size_t a = 0; a < sp.extent; ++a) {
        const double l = xv[idx(a)] - mx - lz;
        y[idx(a)] = Log ? l : std::exp(l);
      }
    }
  NodePtr xn = x.node();
  return record(x.shape(), std::move(y), {x}, [xn, sp](TensorNode& out) {
    double* gx = grad_of(xn);
    if (!gx) return;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        auto idx = [&](std::size_t a) { return (o * sp.extent + a) * sp.inner + i; };
        double acc = 0.0;
        for (std::size_t a = 0; a < sp.extent; ++a)
          acc += Log ? out.grad[idx(a)] : out.grad[idx(a)] * out.value[idx(a)];
        for (std::size_t a = 0; a < sp.extent; ++a) {
          const std::size_t k = idx(a);
          if constexpr (Log) {
            gx[k] += out.grad[k] - std::exp(out.value[k]) * acc;
          } else {
            gx[k] += out.value[k] * (out.grad[k] - acc);
          }
        }
      }
  });
}

}  // namespace detail

inline Tensor softmax(const Tensor& x, std::size_t axis) { return detail::softmax_impl<false>(x, axis); }
inline Tensor log_softmax(const Tensor& x, std::size_t axis) { return detail::softmax_impl<true>(x, axis); }

// ---------------------------------------------------------------------------
// Sequence and pairwise ops

/// Valid 1-D cross-correlation. x: [B, L], w: [C, K], optional bias [C]
/// -> [B, C, L-K+1]. Rank-1 x and w give a single-channel [L-K+1] result.
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias = {}) {
  if (x.rank() == 1 && w.rank() == 1 && !bias.defined()) {
    Tensor y = conv1d(reshape(x, {1, x.dim(0)}), reshape(w, {1, w.dim(0)}));
    return reshape(y, {y.dim(2)});
  }
  if (x.rank() != 2 || w.rank() != 2) {
    throw DimensionError("conv1d: expected x [B,L] and w [C,K], got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
  }
  const std::size_t B = x.dim(0), L = x.dim(1), C = w.dim(0), K = w.dim(1);
  if (K == 0 || K > L) {
    throw DimensionError("conv1d: kernel length " + std::to_string(K) + " exceeds input length " +
                         std::to_string(L));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != C)) {
    throw DimensionError("conv1d: bias shape " + shape_str(bias.shape()) + " for " +
                         std::to_string(C) + " channels");
  }
  const std::size_t P = L - K + 1;
  std::vector<double> y(B * C * P);
  const auto xv = x.values();
  const auto wv = w.values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) {
        double s = bias.defined() ? bias[c] : 0.0;
        for (std::size_t k = 0; k < K; ++k) s += xv[b * L + p + k] * wv[c * K + k];
        y[(b * C + c) * P + p] = s;
      }
  detail::NodePtr xn = x.node(), wn = w.node();
  detail::NodePtr bn = bias.defined() ? bias.node() : nullptr;
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return detail::record({B, C, P}, std::move(y), inputs,
                        [xn, wn, bn, B, L, C, K, P](detail::TensorNode& out) {
                          double* gx = detail::grad_of(xn);
                          double* gw = detail::grad_of(wn);
                          double* gb = bn ? detail::grad_of(bn) : nullptr;
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t c = 0; c < C; ++c)
                              for (std::size_t p = 0; p < P; ++p) {
                                const double g = out.grad[(b * C + c) * P + p];
                                if (gb) gb[c] += g;
                                for (std::size_t k = 0; k < K; ++k) {
                                  if (gx) gx[b * L + p + k] += g * wn->value[c * K + k];
                                  if (gw) gw[c * K + k] += g * xn->value[b * L + p + k];
                                }
                              }
                        });
}

/// out[i, j, :] = a[i, :] + b[j, :] for a: [N, D], b: [M, D].
inline Tensor pairwise_add(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("pairwise_add: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t N = a.dim(0), M = b.dim(0), D = a.dim(1);
  std::vector<double> y(N * M * D);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < M; ++j)
      for (std::size_t k = 0; k < D; ++k) y[(i * M + j) * D + k] = av[i * D + k] + bv[j * D + k];
  detail::NodePtr an = a.node(), bn = b.node();
  return detail::record({N, M, D}, std::move(y), {a, b}, [an, bn, N, M, D](detail::TensorNode& out) {
    double* ga = detail::grad_of(an);
    double* gb = detail::grad_of(bn);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < M; ++j)
        for (std::size_t k = 0; k < D; ++k) {
          const double g = out.grad[(i * M + j) * D + k];
          if (ga) ga[i * D + k] += g;
          if (gb) gb[j * D + k] += g;
        }
  });
}

}  // namespace opr
