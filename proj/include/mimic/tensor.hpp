#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mimic/error.hpp"

namespace mimic {

// ---------------------------------------------------------------------------
// Dense tensors with reverse-mode autodiff over a dynamically recorded graph.
//
// Tensors are cheap value types: copies share the underlying data, gradient
// and node buffers. Every kernel is a free function that computes the forward
// value eagerly and, when gradients are wanted, attaches a node holding a
// backward closure. float is the working precision; double instantiations
// exist for finite-difference gradient checking.
// ---------------------------------------------------------------------------

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

// Disables graph recording in a scope (inference paths).
struct NoGradGuard {
  NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class S>
struct NodeT {
  std::vector<std::shared_ptr<NodeT<S>>> parents;  // traversal edges only
  std::function<void()> backward;                  // owns its captured buffers
};

template <class S>
struct TensorT {
  using Scalar = S;

  std::vector<int> shape;
  std::shared_ptr<std::vector<S>> data;
  std::shared_ptr<std::vector<S>> grad;  // allocated iff requires_grad
  std::shared_ptr<NodeT<S>> node;        // set on op outputs in grad mode
  bool requires_grad = false;

  TensorT() = default;

  explicit TensorT(std::vector<int> shape_in, bool requires_grad_in = false)
      : shape(std::move(shape_in)) {
    data = std::make_shared<std::vector<S>>(checked_size(shape), S(0));
    if (requires_grad_in) enable_grad();
  }

  static TensorT from(std::vector<int> shape_in, std::vector<S> values,
                      bool requires_grad_in = false) {
    TensorT t;
    t.shape = std::move(shape_in);
    if (checked_size(t.shape) != values.size()) {
      throw Error(ErrorKind::dimension, "tensor data length does not match shape");
    }
    t.data = std::make_shared<std::vector<S>>(std::move(values));
    if (requires_grad_in) t.enable_grad();
    return t;
  }

  void enable_grad() {
    requires_grad = true;
    if (!grad) grad = std::make_shared<std::vector<S>>(data->size(), S(0));
  }

  std::size_t size() const { return data ? data->size() : 0; }
  int rank() const { return static_cast<int>(shape.size()); }

  int rows() const {
    if (rank() == 2) return shape[0];
    if (rank() == 1) return 1;
    throw Error(ErrorKind::dimension, "rows() needs a vector or matrix");
  }
  int cols() const {
    if (rank() == 2) return shape[1];
    if (rank() == 1) return shape[0];
    throw Error(ErrorKind::dimension, "cols() needs a vector or matrix");
  }

  S& at(std::size_t i) { return (*data)[i]; }
  S at(std::size_t i) const { return (*data)[i]; }
  S& at(int r, int c) { return (*data)[static_cast<std::size_t>(r) * cols() + c]; }
  S at(int r, int c) const { return (*data)[static_cast<std::size_t>(r) * cols() + c]; }

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), S(0));
  }

  TensorT detached() const {
    TensorT t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<S>>(*data);
    return t;
  }

  static std::size_t checked_size(const std::vector<int>& shape) {
    if (shape.empty()) throw Error(ErrorKind::dimension, "empty shape");
    std::size_t n = 1;
    for (int e : shape) {
      if (e <= 0) throw Error(ErrorKind::dimension, "non-positive extent in shape");
      n *= static_cast<std::size_t>(e);
    }
    return n;
  }
};

using Tensor = TensorT<float>;

namespace detail {

// Reductions and transcendentals for the float instantiation accumulate in
// double; the 64-bit instantiation keeps plain double.
template <class S>
using acc_t = std::conditional_t<std::is_same_v<S, float>, double, S>;

template <class S>
void ensure_finite(const TensorT<S>& t, const char* op) {
  for (S v : *t.data) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw Error(ErrorKind::non_finite, std::string(op) + " produced a non-finite value");
    }
  }
}

template <class S>
bool wants_grad(const TensorT<S>& t) {
  return t.requires_grad;
}

template <class S, class... Rest>
bool wants_grad(const TensorT<S>& t, const Rest&... rest) {
  return t.requires_grad || wants_grad(rest...);
}

template <class S>
void collect_parent(std::vector<std::shared_ptr<NodeT<S>>>& out, const TensorT<S>& t) {
  if (t.node) out.push_back(t.node);
}

// Marks `out` as gradient-carrying and wires up traversal edges; the caller
// assigns out.node->backward, which must accumulate (+=) into parent grads.
template <class S, class... Parents>
void attach(TensorT<S>& out, const Parents&... parents) {
  out.enable_grad();
  auto node = std::make_shared<NodeT<S>>();
  (collect_parent(node->parents, parents), ...);
  out.node = std::move(node);
}

// c[m x n] += a[m x k] * b[k x n]
template <class S>
void mm_nn(S* c, const S* a, const S* b, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    S* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S apl = a[static_cast<std::size_t>(i) * k + p];
      const S* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += apl * brow[j];
    }
  }
}

// c[m x n] += a[m x k] * b^T, with b stored [n x k]
template <class S>
void mm_nt(S* c, const S* a, const S* b, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<std::size_t>(i) * k;
    S* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const S* brow = b + static_cast<std::size_t>(j) * k;
      S acc = S(0);
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// c[k x n] += a^T * b, with a stored [m x k], b stored [m x n]
template <class S>
void mm_tn(S* c, const S* a, const S* b, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<std::size_t>(i) * k;
    const S* brow = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S apl = arow[p];
      S* crow = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += apl * brow[j];
    }
  }
}

template <class S>
void require_matrix(const TensorT<S>& t, const char* op) {
  if (t.rank() != 2) throw Error(ErrorKind::dimension, std::string(op) + ": expected a matrix");
}

}  // namespace detail

// --------------------------------------------------------------------------
// Backward execution. The graph is the chain of nodes hanging off a result
// tensor; backward() seeds the root gradient with ones, topologically orders
// the reachable nodes and runs each backward closure exactly once.
// --------------------------------------------------------------------------
template <class S>
class GraphT {
 public:
  struct Stats {
    std::size_t nodes_visited = 0;
  };

  Stats backward(TensorT<S>& root) {
    if (!root.requires_grad || !root.grad) {
      throw Error(ErrorKind::internal, "backward on a tensor without gradient");
    }
    std::fill(root.grad->begin(), root.grad->end(), S(1));
    order_.clear();
    if (root.node) {
      std::unordered_set<const NodeT<S>*> seen;
      // Iterative post-order DFS; reversed post-order is a valid topological
      // order with every consumer before its producers.
      std::vector<std::pair<NodeT<S>*, std::size_t>> stack;
      stack.emplace_back(root.node.get(), 0);
      seen.insert(root.node.get());
      while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
          NodeT<S>* parent = node->parents[next].get();
          ++next;
          if (parent && !seen.count(parent)) {
            seen.insert(parent);
            stack.emplace_back(parent, 0);
          }
        } else {
          order_.push_back(node);
          stack.pop_back();
        }
      }
      for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        if ((*it)->backward) (*it)->backward();
      }
    }
    return Stats{order_.size()};
  }

  // Operation records of the last backward pass, in evaluation order.
  const std::vector<NodeT<S>*>& nodes() const { return order_; }

 private:
  std::vector<NodeT<S>*> order_;
};

using Graph = GraphT<float>;

// --------------------------------------------------------------------------
// Kernels
// --------------------------------------------------------------------------

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const int m = a.shape[0], k = a.shape[1];
  if (b.shape[0] != k) throw Error(ErrorKind::dimension, "matmul: inner extents differ");
  const int n = b.shape[1];
  TensorT<S> out({m, n});
  detail::mm_nn(out.data->data(), a.data->data(), b.data->data(), m, k, n);
  detail::ensure_finite(out, "matmul");
  if (grad_mode() && detail::wants_grad(a, b)) {
    auto ad = a.data, bd = b.data, ag = a.grad, bg = b.grad, og = out.grad;
    detail::attach(out, a, b);
    og = out.grad;
    out.node->backward = [=]() {
      if (ag) detail::mm_nt(ag->data(), og->data(), bd->data(), m, n, k);
      if (bg) detail::mm_tn(bg->data(), ad->data(), og->data(), m, k, n);
    };
  }
  return out;
}

template <class S>
TensorT<S> transpose(const TensorT<S>& a) {
  detail::require_matrix(a, "transpose");
  const int r = a.shape[0], c = a.shape[1];
  TensorT<S> out({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
  if (grad_mode() && a.requires_grad) {
    auto ag = a.grad;
    detail::attach(out, a);
    auto og = out.grad;
    out.node->backward = [=]() {
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          (*ag)[static_cast<std::size_t>(i) * c + j] += (*og)[static_cast<std::size_t>(j) * r + i];
    };
  }
  return out;
}

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape != b.shape) throw Error(ErrorKind::dimension, "add: shape mismatch");
  TensorT<S> out(a.shape);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  detail::ensure_finite(out, "add");
  if (grad_mode() && detail::wants_grad(a, b)) {
    auto ag = a.grad, bg = b.grad;
    detail::attach(out, a, b);
    auto og = out.grad;
    out.node->backward = [=]() {
      for (std::size_t i = 0; i < n; ++i) {
        if (ag) (*ag)[i] += (*og)[i];
        if (bg) (*bg)[i] += (*og)[i];
      }
    };
  }
  return out;
}

// m[r x c] + v[c] broadcast over rows.
template <class S>
TensorT<S> add_rowvec(const TensorT<S>& m, const TensorT<S>& v) {
  detail::require_matrix(m, "add_rowvec");
  if (v.rank() != 1 || v.shape[0] != m.shape[1]) {
    throw Error(ErrorKind::dimension, "add_rowvec: vector does not match columns");
  }
  const int r = m.shape[0], c = m.shape[1];
  TensorT<S> out({r, c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(i, j) = m.at(i, j) + v.at(j);
  detail::ensure_finite(out, "add_rowvec");
  if (grad_mode() && detail::wants_grad(m, v)) {
    auto mg = m.grad, vg = v.grad;
    detail::attach(out, m, v);
    auto og = out.grad;
    out.node->backward = [=]() {
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
          const S g = (*og)[static_cast<std::size_t>(i) * c + j];
          if (mg) (*mg)[static_cast<std::size_t>(i) * c + j] += g;
          if (vg) (*vg)[j] += g;
        }
    };
  }
  return out;
}

template <class S>
TensorT<S> scale(const TensorT<S>& a, S factor) {
  TensorT<S> out(a.shape);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * factor;
  detail::ensure_finite(out, "scale");
  if (grad_mode() && a.requires_grad) {
    auto ag = a.grad;
    detail::attach(out, a);
    auto og = out.grad;
    out.node->backward = [=]() {
      for (std::size_t i = 0; i < n; ++i) (*ag)[i] += factor * (*og)[i];
    };
  }
  return out;
}

template <class S>
TensorT<S> relu(const TensorT<S>& a) {
  TensorT<S> out(a.shape);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = std::max(S(0), (*a.data)[i]);
  if (grad_mode() && a.requires_grad) {
    auto ad = a.data, ag = a.grad;
    detail::attach(out, a);
    auto og = out.grad;
    out.node->backward = [=]() {
      for (std::size_t i = 0; i < n; ++i)
        if ((*ad)[i] > S(0)) (*ag)[i] += (*og)[i];
    };
  }
  return out;
}

template <class S>
TensorT<S> log_elementwise(const TensorT<S>& a) {
  TensorT<S> out(a.shape);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = std::log((*a.data)[i]);
  detail::ensure_finite(out, "log");
  if (grad_mode() && a.requires_grad) {
    auto ad = a.data, ag = a.grad;
    detail::attach(out, a);
    auto og = out.grad;
    out.node->backward = [=]() {
      for (std::size_t i = 0; i < n; ++i) (*ag)[i] += (*og)[i] / (*ad)[i];
    };
  }
  return out;
}

namespace detail {

// Row softmax core with max-subtraction; out and in are [r x c].
template <class S>
void softmax_rows_forward(S* out, const S* in, int r, int c) {
  using A = acc_t<S>;
  std::vector<A> expd(static_cast<std::size_t>(c));
  for (int i = 0; i < r; ++i) {
    const S* x = in + static_cast<std::size_t>(i) * c;
    S* y = out + static_cast<std::size_t>(i) * c;
    S mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    A sum = A(0);
    for (int j = 0; j < c; ++j) {
      expd[static_cast<std::size_t>(j)] = std::exp(static_cast<A>(x[j]) - static_cast<A>(mx));
      sum += expd[static_cast<std::size_t>(j)];
    }
    for (int j = 0; j < c; ++j) y[j] = static_cast<S>(expd[static_cast<std::size_t>(j)] / sum);
  }
}

}  // namespace detail

template <class S>
TensorT<S> softmax_rows(const TensorT<S>& a) {
  const int r = a.rows(), c = a.cols();
  TensorT<S> out(a.shape);
  detail::softmax_rows_forward(out.data->data(), a.data->data(), r, c);
  detail::ensure_finite(out, "softmax");
  if (grad_mode() && a.requires_grad) {
    auto yd = out.data, ag = a.grad;
    detail::attach(out, a);
    auto og = out.grad;
    out.node->backward = [=]() {
      for (int i = 0; i < r; ++i) {
        const S* y = yd->data() + static_cast<std::size_t>(i) * c;
        const S* gy = og->data() + static_cast<std::size_t>(i) * c;
        S dot = S(0);
        for (int j = 0; j < c; ++j) dot += y[j] * gy[j];
        S* gx = ag->data() + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) gx[j] += y[j] * (gy[j] - dot);
      }
    };
  }
  return out;
}

// Softmax along `axis` of a vector or matrix, stabilized by max-subtraction.
template <class S>
TensorT<S> softmax(const TensorT<S>& a, int axis) {
  if (a.rank() == 1) {
    if (axis != 0) throw Error(ErrorKind::dimension, "softmax: axis out of range");
    return softmax_rows(a);
  }
  if (a.rank() == 2) {
    if (axis == 1) return softmax_rows(a);
    if (axis == 0) return transpose(softmax_rows(transpose(a)));
    throw Error(ErrorKind::dimension, "softmax: axis out of range");
  }
  throw Error(ErrorKind::dimension, "softmax: expected a vector or matrix");
}

// log(softmax) per row via log-sum-exp; stable even for the tau = 0.01
// similarity scale where raw softmax entries underflow in float.
template <class S>
TensorT<S> log_softmax_rows(const TensorT<S>& a) {
  const int r = a.rows(), c = a.cols();
  TensorT<S> out(a.shape);
  using A = detail::acc_t<S>;
  for (int i = 0; i < r; ++i) {
    const S* x = a.data->data() + static_cast<std::size_t>(i) * c;
    S* y = out.data->data() + static_cast<std::size_t>(i) * c;
    S mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    A sum = A(0);
    for (int j = 0; j < c; ++j) sum += std::exp(static_cast<A>(x[j]) - static_cast<A>(mx));
    const A lse = static_cast<A>(mx) + std::log(sum);
    for (int j = 0; j < c; ++j) y[j] = static_cast<S>(static_cast<A>(x[j]) - lse);
  }
  detail::ensure_finite(out, "log_softmax");
  if (grad_mode() && a.requires_grad) {
    auto yd = out.data, ag = a.grad;
    detail::attach(out, a);
    auto og = out.grad;
    out.node->backward = [=]() {
      for (int i = 0; i < r; ++i) {
        const S* y = yd->data() + static_cast<std::size_t>(i) * c;
        const S* gy = og->data() + static_cast<std::size_t>(i) * c;
        S gsum = S(0);
        for (int j = 0; j < c; ++j) gsum += gy[j];
        S* gx = ag->data() + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) gx[j] += gy[j] - std::exp(y[j]) * gsum;
      }
    };
  }
  return out;
}

// Per-row layer normalization over the last extent with affine gain/bias.
template <class S>
TensorT<S> layer_norm(const TensorT<S>& a, const TensorT<S>& gain, const TensorT<S>& bias,
                      S eps = S(1e-5)) {
  const int r = a.rows(), c = a.cols();
  if (gain.rank() != 1 || gain.shape[0] != c || bias.rank() != 1 || bias.shape[0] != c) {
    throw Error(ErrorKind::dimension, "layer_norm: gain/bias must match last extent");
  }
  TensorT<S> out(a.shape);
  std::vector<S> inv_std(static_cast<std::size_t>(r));
  std::vector<S> xhat(a.size());
  using A = detail::acc_t<S>;
  for (int i = 0; i < r; ++i) {
    const S* x = a.data->data() + static_cast<std::size_t>(i) * c;
    A mean = A(0);
    for (int j = 0; j < c; ++j) mean += x[j];
    mean /= static_cast<A>(c);
    A var = A(0);
    for (int j = 0; j < c; ++j) var += (static_cast<A>(x[j]) - mean) * (static_cast<A>(x[j]) - mean);
    var /= static_cast<A>(c);
    const S istd = static_cast<S>(A(1) / std::sqrt(var + static_cast<A>(eps)));
    inv_std[static_cast<std::size_t>(i)] = istd;
    S* y = out.data->data() + static_cast<std::size_t>(i) * c;
    S* xh = xhat.data() + static_cast<std::size_t>(i) * c;
    for (int j = 0; j < c; ++j) {
      xh[j] = static_cast<S>((static_cast<A>(x[j]) - mean)) * istd;
      y[j] = xh[j] * gain.at(j) + bias.at(j);
    }
  }
  detail::ensure_finite(out, "layer_norm");
  if (grad_mode() && detail::wants_grad(a, gain, bias)) {
    auto ag = a.grad, gg = gain.grad, bg = bias.grad;
    auto gaind = gain.data;
    auto istd_p = std::make_shared<std::vector<S>>(std::move(inv_std));
    auto xhat_p = std::make_shared<std::vector<S>>(std::move(xhat));
    detail::attach(out, a, gain, bias);
    auto og = out.grad;
    out.node->backward = [=]() {
      for (int i = 0; i < r; ++i) {
        const S* gy = og->data() + static_cast<std::size_t>(i) * c;
        const S* xh = xhat_p->data() + static_cast<std::size_t>(i) * c;
        const S istd = (*istd_p)[static_cast<std::size_t>(i)];
        if (gg || bg) {
          for (int j = 0; j < c; ++j) {
            if (gg) (*gg)[j] += gy[j] * xh[j];
            if (bg) (*bg)[j] += gy[j];
          }
        }
        if (ag) {
          // dxhat = gy * gain; dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
          S m1 = S(0), m2 = S(0);
          for (int j = 0; j < c; ++j) {
            const S dxh = gy[j] * (*gaind)[j];
            m1 += dxh;
            m2 += dxh * xh[j];
          }
          m1 /= static_cast<S>(c);
          m2 /= static_cast<S>(c);
          S* gx = ag->data() + static_cast<std::size_t>(i) * c;
          for (int j = 0; j < c; ++j) {
            const S dxh = gy[j] * (*gaind)[j];
            gx[j] += istd * (dxh - m1 - xh[j] * m2);
          }
        }
      }
    };
  }
  return out;
}

// Unit-norm scaling of the whole tensor, treated as one vector.
template <class S>
TensorT<S> l2_normalize(const TensorT<S>& a) {
  using A = detail::acc_t<S>;
  const std::size_t n = a.size();
  A sq = A(0);
  for (std::size_t i = 0; i < n; ++i) {
    sq += static_cast<A>((*a.data)[i]) * static_cast<A>((*a.data)[i]);
  }
  const S norm = static_cast<S>(std::sqrt(sq));
  if (!(norm > S(1e-12))) {
    throw Error(ErrorKind::degenerate_vector, "l2_normalize: near-zero norm");
  }
  TensorT<S> out(a.shape);
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] / norm;
  detail::ensure_finite(out, "l2_normalize");
  if (grad_mode() && a.requires_grad) {
    auto yd = out.data, ag = a.grad;
    detail::attach(out, a);
    auto og = out.grad;
    out.node->backward = [=]() {
      S dot = S(0);
      for (std::size_t i = 0; i < n; ++i) dot += (*yd)[i] * (*og)[i];
      for (std::size_t i = 0; i < n; ++i) (*ag)[i] += ((*og)[i] - (*yd)[i] * dot) / norm;
    };
  }
  return out;
}

// softmax(q k^T / sqrt(d)) v, composed from the primitives above so the
// backward pass comes for free.
template <class S>
TensorT<S> scaled_dot_attention(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v) {
  detail::require_matrix(q, "scaled_dot_attention");
  detail::require_matrix(k, "scaled_dot_attention");
  detail::require_matrix(v, "scaled_dot_attention");
  if (q.shape[1] != k.shape[1]) {
    throw Error(ErrorKind::dimension, "scaled_dot_attention: query/key dims differ");
  }
  if (k.shape[0] != v.shape[0]) {
    throw Error(ErrorKind::dimension, "scaled_dot_attention: key/value lengths differ");
  }
  const S inv_sqrt_d = S(1) / std::sqrt(static_cast<S>(q.shape[1]));
  TensorT<S> scores = scale(matmul(q, transpose(k)), inv_sqrt_d);
  return matmul(softmax_rows(scores), v);
}

// Concatenates blocks along rows; vectors are treated as single rows.
template <class S>
TensorT<S> concat_rows(std::span<const TensorT<S>> blocks) {
  if (blocks.empty()) throw Error(ErrorKind::dimension, "concat_rows: no inputs");
  const int c = blocks[0].cols();
  int total = 0;
  for (const auto& b : blocks) {
    if (b.cols() != c) throw Error(ErrorKind::dimension, "concat_rows: column mismatch");
    total += b.rows();
  }
  TensorT<S> out({total, c});
  std::size_t off = 0;
  for (const auto& b : blocks) {
    std::copy(b.data->begin(), b.data->end(), out.data->begin() + off);
    off += b.size();
  }
  bool any_grad = false;
  for (const auto& b : blocks) any_grad = any_grad || b.requires_grad;
  if (grad_mode() && any_grad) {
    struct Slot {
      std::shared_ptr<std::vector<S>> grad;
      std::size_t offset, count;
    };
    auto slots = std::make_shared<std::vector<Slot>>();
    off = 0;
    out.enable_grad();
    auto node = std::make_shared<NodeT<S>>();
    for (const auto& b : blocks) {
      slots->push_back({b.requires_grad ? b.grad : nullptr, off, b.size()});
      off += b.size();
      if (b.node) node->parents.push_back(b.node);
    }
    auto og = out.grad;
    node->backward = [slots, og]() {
      for (const auto& s : *slots) {
        if (!s.grad) continue;
        for (std::size_t i = 0; i < s.count; ++i) (*s.grad)[i] += (*og)[s.offset + i];
      }
    };
    out.node = std::move(node);
  }
  return out;
}

template <class S>
TensorT<S> concat_rows(std::initializer_list<TensorT<S>> blocks) {
  std::vector<TensorT<S>> v(blocks);
  return concat_rows(std::span<const TensorT<S>>(v));
}

// Concatenates matrices along columns (same row count).
template <class S>
TensorT<S> concat_cols(std::span<const TensorT<S>> blocks) {
  if (blocks.empty()) throw Error(ErrorKind::dimension, "concat_cols: no inputs");
  const int r = blocks[0].rows();
  int total = 0;
  for (const auto& b : blocks) {
    if (b.rows() != r) throw Error(ErrorKind::dimension, "concat_cols: row mismatch");
    total += b.cols();
  }
  TensorT<S> out({r, total});
  int coff = 0;
  for (const auto& b : blocks) {
    const int bc = b.cols();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < bc; ++j) out.at(i, coff + j) = (*b.data)[static_cast<std::size_t>(i) * bc + j];
    coff += bc;
  }
  bool any_grad = false;
  for (const auto& b : blocks) any_grad = any_grad || b.requires_grad;
  if (grad_mode() && any_grad) {
    struct Slot {
      std::shared_ptr<std::vector<S>> grad;
      int col_offset, cols;
    };
    auto slots = std::make_shared<std::vector<Slot>>();
    coff = 0;
    out.enable_grad();
    auto node = std::make_shared<NodeT<S>>();
    for (const auto& b : blocks) {
      slots->push_back({b.requires_grad ? b.grad : nullptr, coff, b.cols()});
      coff += b.cols();
      if (b.node) node->parents.push_back(b.node);
    }
    auto og = out.grad;
    const int total_c = total;
    node->backward = [slots, og, r, total_c]() {
      for (const auto& s : *slots) {
        if (!s.grad) continue;
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < s.cols; ++j)
            (*s.grad)[static_cast<std::size_t>(i) * s.cols + j] +=
                (*og)[static_cast<std::size_t>(i) * total_c + s.col_offset + j];
      }
    };
    out.node = std::move(node);
  }
  return out;
}

template <class S>
TensorT<S> slice_cols(const TensorT<S>& a, int start, int len) {
  detail::require_matrix(a, "slice_cols");
  const int r = a.shape[0], c = a.shape[1];
  if (start < 0 || len <= 0 || start + len > c) {
    throw Error(ErrorKind::dimension, "slice_cols: slice out of range");
  }
  TensorT<S> out({r, len});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = a.at(i, start + j);
  if (grad_mode() && a.requires_grad) {
    auto ag = a.grad;
    detail::attach(out, a);
    auto og = out.grad;
    out.node->backward = [=]() {
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < len; ++j)
          (*ag)[static_cast<std::size_t>(i) * c + start + j] +=
              (*og)[static_cast<std::size_t>(i) * len + j];
    };
  }
  return out;
}

// Mean over rows: [r x c] -> [c].
template <class S>
TensorT<S> mean_rows(const TensorT<S>& a) {
  detail::require_matrix(a, "mean_rows");
  const int r = a.shape[0], c = a.shape[1];
  TensorT<S> out({c});
  {
    using A = detail::acc_t<S>;
    std::vector<A> acc(static_cast<std::size_t>(c), A(0));
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) acc[static_cast<std::size_t>(j)] += a.at(i, j);
    for (int j = 0; j < c; ++j) {
      out.at(static_cast<std::size_t>(j)) = static_cast<S>(acc[static_cast<std::size_t>(j)] / r);
    }
  }
  detail::ensure_finite(out, "mean_rows");
  if (grad_mode() && a.requires_grad) {
    auto ag = a.grad;
    detail::attach(out, a);
    auto og = out.grad;
    out.node->backward = [=]() {
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          (*ag)[static_cast<std::size_t>(i) * c + j] += (*og)[j] / static_cast<S>(r);
    };
  }
  return out;
}

// Mean of all entries -> scalar [1].
template <class S>
TensorT<S> mean_all(const TensorT<S>& a) {
  const std::size_t n = a.size();
  TensorT<S> out({1});
  detail::acc_t<S> acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += (*a.data)[i];
  out.at(std::size_t{0}) = static_cast<S>(acc / static_cast<detail::acc_t<S>>(n));
  detail::ensure_finite(out, "mean_all");
  if (grad_mode() && a.requires_grad) {
    auto ag = a.grad;
    detail::attach(out, a);
    auto og = out.grad;
    out.node->backward = [=]() {
      const S g = (*og)[0] / static_cast<S>(n);
      for (std::size_t i = 0; i < n; ++i) (*ag)[i] += g;
    };
  }
  return out;
}

// Row gather from an embedding table: out[i] = table[indices[i]].
template <class S>
TensorT<S> gather_rows(const TensorT<S>& table, std::span<const int> indices) {
  detail::require_matrix(table, "gather_rows");
  if (indices.empty()) throw Error(ErrorKind::dimension, "gather_rows: no indices");
  const int v = table.shape[0], d = table.shape[1];
  for (int idx : indices) {
    if (idx < 0 || idx >= v) throw Error(ErrorKind::range, "gather_rows: index out of range");
  }
  const int n = static_cast<int>(indices.size());
  TensorT<S> out({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = table.at(indices[i], j);
  if (grad_mode() && table.requires_grad) {
    auto tg = table.grad;
    auto idx = std::make_shared<std::vector<int>>(indices.begin(), indices.end());
    detail::attach(out, table);
    auto og = out.grad;
    out.node->backward = [=]() {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
          (*tg)[static_cast<std::size_t>((*idx)[i]) * d + j] +=
              (*og)[static_cast<std::size_t>(i) * d + j];
    };
  }
  return out;
}

// Picks one entry per row: out[i] = a[i, targets[i]].
template <class S>
TensorT<S> select_per_row(const TensorT<S>& a, std::span<const int> targets) {
  detail::require_matrix(a, "select_per_row");
  const int r = a.shape[0], c = a.shape[1];
  if (static_cast<int>(targets.size()) != r) {
    throw Error(ErrorKind::dimension, "select_per_row: one target per row required");
  }
  for (int t : targets) {
    if (t < 0 || t >= c) throw Error(ErrorKind::range, "select_per_row: target out of range");
  }
  TensorT<S> out({r});
  for (int i = 0; i < r; ++i) out.at(static_cast<std::size_t>(i)) = a.at(i, targets[i]);
  if (grad_mode() && a.requires_grad) {
    auto ag = a.grad;
    auto tg = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
    detail::attach(out, a);
    auto og = out.grad;
    out.node->backward = [=]() {
      for (int i = 0; i < r; ++i)
        (*ag)[static_cast<std::size_t>(i) * c + (*tg)[i]] += (*og)[i];
    };
  }
  return out;
}

// Shape-changing copy (same element count).
template <class S>
TensorT<S> reshape(const TensorT<S>& a, std::vector<int> new_shape) {
  if (TensorT<S>::checked_size(new_shape) != a.size()) {
    throw Error(ErrorKind::dimension, "reshape: element count mismatch");
  }
  TensorT<S> out;
  out.shape = std::move(new_shape);
  out.data = std::make_shared<std::vector<S>>(*a.data);
  if (grad_mode() && a.requires_grad) {
    auto ag = a.grad;
    detail::attach(out, a);
    auto og = out.grad;
    const std::size_t n = a.size();
    out.node->backward = [=]() {
      for (std::size_t i = 0; i < n; ++i) (*ag)[i] += (*og)[i];
    };
  }
  return out;
}

}  // namespace mimic
