#include "sembid/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_set>

#include <Eigen/Core>

#include "sembid/errors.hpp"

namespace sembid {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using Node = TensorNode<T>;
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

template <typename T>
ConstMap<T> as_matrix(const std::vector<T>& v, std::int64_t rows, std::int64_t cols) {
  return ConstMap<T>(v.data(), rows, cols);
}

template <typename T>
std::int64_t mat_cols(const Shape& s) {
  return s.empty() ? 1 : s.back();
}

template <typename T>
bool needs_graph(std::initializer_list<const Tensor<T>*> inputs) {
  if (!g_grad_enabled) return false;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Wraps an op result; records parents and the backward closure only when
// some input needs a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
#ifndef NDEBUG
  for (T x : node->value) {
    if (!std::isfinite(x)) throw DomainError("non-finite value produced by tensor op");
  }
#endif
  if (needs_graph<T>(inputs)) {
    node->requires_grad = true;
    for (const auto* t : inputs) {
      if (t->defined()) node->parents.push_back(t->node_ptr());
    }
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DomainError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
}

template <typename T>
void require_defined(const Tensor<T>& a, const char* op) {
  if (!a.defined()) throw DomainError(std::string(op) + ": undefined tensor");
}

template <typename T, typename F, typename G>
Tensor<T> unary(const Tensor<T>& x, F f, G dfdx) {
  require_defined(x, "unary op");
  const auto& xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  Node<T>* xn = x.node();
  return make_result<T>(x.shape(), std::move(out), {&x}, [xn, dfdx](Node<T>& self) {
    if (!xn->requires_grad) return;
    T* gx = xn->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gx[i] += self.grad[i] * dfdx(xn->value[i], self.value[i]);
    }
  });
}

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw DomainError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
T* TensorNode<T>::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), T(0));
  return grad.data();
}

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  return from(shape, std::vector<T>(static_cast<std::size_t>(shape_numel(shape)), value),
              requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(const Shape& shape, std::vector<T> data, bool requires_grad) {
  if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
    throw DomainError("data length " + std::to_string(data.size()) + " does not match shape " +
                      shape_str(shape));
  }
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = shape;
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
std::int64_t Tensor<T>::dim(int axis) const {
  const int rank = static_cast<int>(shape().size());
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) throw DomainError("axis out of range for shape " + shape_str(shape()));
  return shape()[a];
}

template <typename T>
std::int64_t Tensor<T>::cols() const {
  return mat_cols<T>(shape());
}

template <typename T>
std::int64_t Tensor<T>::rows() const {
  const auto c = cols();
  return c == 0 ? 0 : numel() / c;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DomainError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
void Tensor<T>::backward() {
  if (!node_) throw StateError("backward on an undefined tensor");
  if (node_->consumed) {
    throw StateError("backward already ran on this graph; run the forward pass again");
  }
  if (!node_->requires_grad) throw StateError("backward on a tensor that does not require grad");
  if (numel() != 1) throw DomainError("backward needs a scalar, got shape " + shape_str(shape()));

  // Iterative post-order DFS over interior nodes.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->backward && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (Node<T>* n : order) {
    n->backward = nullptr;
    n->parents.clear();
    n->consumed = true;
    if (n != node_.get()) std::vector<T>().swap(n->grad);
  }
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0)) {
    throw DomainError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  }
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  if (m > 0 && n > 0) {
    MutMap<T>(out.data(), m, n).noalias() =
        as_matrix(a.node()->value, m, k) * as_matrix(b.node()->value, k, n);
  }
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return make_result<T>({m, n}, std::move(out), {&a, &b}, [an, bn, m, k, n](Node<T>& self) {
    const auto g = as_matrix(self.grad, m, n);
    if (an->requires_grad) {
      MutMap<T>(an->grad_buffer(), m, k).noalias() += g * as_matrix(bn->value, k, n).transpose();
    }
    if (bn->requires_grad) {
      MutMap<T>(bn->grad_buffer(), k, n).noalias() += as_matrix(an->value, m, k).transpose() * g;
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_defined(x, "linear");
  require_defined(w, "linear");
  if (w.shape().size() != 2 || x.cols() != w.dim(0)) {
    throw DomainError("linear: input " + shape_str(x.shape()) + " does not fit weight " +
                      shape_str(w.shape()));
  }
  if (bias.defined() && bias.numel() != w.dim(1)) {
    throw DomainError("linear: bias " + shape_str(bias.shape()) + " does not fit weight " +
                      shape_str(w.shape()));
  }
  const std::int64_t m = x.rows(), k = w.dim(0), n = w.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  auto om = MutMap<T>(out.data(), m, n);
  if (m > 0) {
    om.noalias() = as_matrix(x.node()->value, m, k) * as_matrix(w.node()->value, k, n);
    if (bias.defined()) {
      const T* b = bias.node()->value.data();
      for (std::int64_t i = 0; i < m; ++i) {
        T* row = out.data() + i * n;
        for (std::int64_t j = 0; j < n; ++j) row[j] += b[j];
      }
    }
  }
  Shape shape = x.shape();
  shape.back() = n;
  Node<T>* xn = x.node();
  Node<T>* wn = w.node();
  Node<T>* bn = bias.defined() ? bias.node() : nullptr;
  return make_result<T>(std::move(shape), std::move(out), {&x, &w, &bias},
                        [xn, wn, bn, m, k, n](Node<T>& self) {
                          const auto g = as_matrix(self.grad, m, n);
                          if (xn->requires_grad) {
                            MutMap<T>(xn->grad_buffer(), m, k).noalias() +=
                                g * as_matrix(wn->value, k, n).transpose();
                          }
                          if (wn->requires_grad) {
                            MutMap<T>(wn->grad_buffer(), k, n).noalias() +=
                                as_matrix(xn->value, m, k).transpose() * g;
                          }
                          if (bn && bn->requires_grad) {
                            T* gb = bn->grad_buffer();
                            for (std::int64_t i = 0; i < m; ++i) {
                              const T* row = self.grad.data() + i * n;
                              for (std::int64_t j = 0; j < n; ++j) gb[j] += row[j];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [an, bn](Node<T>& self) {
    for (Node<T>* p : {an, bn}) {
      if (!p->requires_grad) continue;
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      T* g = an->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      T* g = bn->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      T* g = an->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      T* g = bn->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

template <typename T>
Tensor<T> affine(const Tensor<T>& a, T alpha, T beta) {
  require_defined(a, "affine");
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& x : out) x = alpha * x + beta;
  Node<T>* an = a.node();
  return make_result<T>(a.shape(), std::move(out), {&a}, [an, alpha](Node<T>& self) {
    if (!an->requires_grad) return;
    T* g = an->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += alpha * self.grad[i];
  });
}

template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& v) {
  require_defined(a, "add_rowvec");
  require_defined(v, "add_rowvec");
  const std::int64_t m = a.rows(), n = a.cols();
  if (v.numel() != n) {
    throw DomainError("add_rowvec: vector " + shape_str(v.shape()) + " does not fit " +
                      shape_str(a.shape()));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto& vv = v.node()->value;
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[i * n + j] += vv[j];
  Node<T>* an = a.node();
  Node<T>* vn = v.node();
  return make_result<T>(a.shape(), std::move(out), {&a, &v}, [an, vn, m, n](Node<T>& self) {
    if (an->requires_grad) {
      T* g = an->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (vn->requires_grad) {
      T* g = vn->grad_buffer();
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_defined(a, "transpose");
  if (a.shape().size() != 2) throw DomainError("transpose needs a rank-2 tensor");
  const std::int64_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(a.data().size());
  const auto& av = a.node()->value;
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  Node<T>* an = a.node();
  return make_result<T>({n, m}, std::move(out), {&a}, [an, m, n](Node<T>& self) {
    if (!an->requires_grad) return;
    T* g = an->grad_buffer();
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw DomainError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  Node<T>* an = a.node();
  return make_result<T>(shape, std::move(out), {&a}, [an](Node<T>& self) {
    if (!an->requires_grad) return;
    T* g = an->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DomainError("concat_rows of nothing");
  const std::int64_t n = parts[0].cols();
  std::int64_t m = 0;
  for (const auto& p : parts) {
    require_defined(p, "concat_rows");
    if (p.cols() != n) throw DomainError("concat_rows: column counts differ");
    m += p.rows();
  }
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(m * n));
  std::vector<Node<T>*> nodes;
  bool any_grad = false;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node());
    any_grad = any_grad || p.requires_grad();
  }
  auto result = make_result<T>({m, n}, std::move(out), {}, nullptr);
  if (g_grad_enabled && any_grad) {
    Node<T>* r = result.node();
    r->requires_grad = true;
    for (const auto& p : parts) r->parents.push_back(p.node_ptr());
    r->backward = [nodes](Node<T>& self) {
      std::size_t off = 0;
      for (Node<T>* p : nodes) {
        const std::size_t len = p->value.size();
        if (p->requires_grad) {
          T* g = p->grad_buffer();
          for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
        }
        off += len;
      }
    };
  }
  return result;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DomainError("concat_cols of nothing");
  const std::int64_t m = parts[0].rows();
  std::int64_t n = 0;
  for (const auto& p : parts) {
    require_defined(p, "concat_cols");
    if (p.rows() != m) throw DomainError("concat_cols: row counts differ");
    n += p.cols();
  }
  std::vector<T> out(static_cast<std::size_t>(m * n));
  std::vector<Node<T>*> nodes;
  std::vector<std::int64_t> widths;
  bool any_grad = false;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p.cols();
    const auto& pv = p.node()->value;
    for (std::int64_t i = 0; i < m; ++i)
      std::copy_n(pv.data() + i * w, w, out.data() + i * n + off);
    off += w;
    nodes.push_back(p.node());
    widths.push_back(w);
    any_grad = any_grad || p.requires_grad();
  }
  auto result = make_result<T>({m, n}, std::move(out), {}, nullptr);
  if (g_grad_enabled && any_grad) {
    Node<T>* r = result.node();
    r->requires_grad = true;
    for (const auto& p : parts) r->parents.push_back(p.node_ptr());
    r->backward = [nodes, widths, m, n](Node<T>& self) {
      std::int64_t col = 0;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        const std::int64_t w = widths[k];
        if (nodes[k]->requires_grad) {
          T* g = nodes[k]->grad_buffer();
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * n + col + j];
        }
        col += w;
      }
    };
  }
  return result;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int64_t> index) {
  require_defined(table, "gather_rows");
  const std::int64_t rows = table.rows(), n = table.cols();
  const std::int64_t m = static_cast<std::int64_t>(index.size());
  std::vector<T> out(static_cast<std::size_t>(m * n));
  const auto& tv = table.node()->value;
  for (std::int64_t i = 0; i < m; ++i) {
    const std::int64_t r = index[i];
    if (r < 0 || r >= rows) {
      throw DomainError("gather_rows: index " + std::to_string(r) + " out of range for " +
                        std::to_string(rows) + " rows");
    }
    std::copy_n(tv.data() + r * n, n, out.data() + i * n);
  }
  std::vector<std::int64_t> idx(index.begin(), index.end());
  Node<T>* tn = table.node();
  return make_result<T>({m, n}, std::move(out), {&table},
                        [tn, idx = std::move(idx), n](Node<T>& self) {
                          if (!tn->requires_grad) return;
                          T* g = tn->grad_buffer();
                          for (std::size_t i = 0; i < idx.size(); ++i) {
                            T* dst = g + idx[i] * n;
                            const T* src = self.grad.data() + static_cast<std::int64_t>(i) * n;
                            for (std::int64_t j = 0; j < n; ++j) dst[j] += src[j];
                          }
                        });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T a = static_cast<T>(0.044715);
  return unary(
      x,
      [c, a](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v))); },
      [c, a](T v, T) {
        const T u = c * (v + a * v * v * v);
        const T th = std::tanh(u);
        const T du = c * (T(1) + T(3) * a * v * v);
        return T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du;
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require_defined(x, "layer_norm");
  const std::int64_t m = x.rows(), n = x.cols();
  if (gain.numel() != n || bias.numel() != n) {
    throw DomainError("layer_norm: affine parameters do not match last dim " + std::to_string(n));
  }
  const auto& xv = x.node()->value;
  const auto& gv = gain.node()->value;
  const auto& bv = bias.node()->value;
  std::vector<T> out(xv.size()), xhat(xv.size()), rstd(static_cast<std::size_t>(m));
  for (std::int64_t i = 0; i < m; ++i) {
    const T* row = xv.data() + i * n;
    double mu = 0.0;
    for (std::int64_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      const double d = row[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const T r = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    rstd[i] = r;
    for (std::int64_t j = 0; j < n; ++j) {
      const T h = static_cast<T>(row[j] - mu) * r;
      xhat[i * n + j] = h;
      out[i * n + j] = h * gv[j] + bv[j];
    }
  }
  Node<T>* xn = x.node();
  Node<T>* gn = gain.node();
  Node<T>* bn = bias.node();
  return make_result<T>(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [xn, gn, bn, m, n, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const T* gy = self.grad.data();
        if (gn->requires_grad) {
          T* g = gn->grad_buffer();
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) g[j] += gy[i * n + j] * xhat[i * n + j];
        }
        if (bn->requires_grad) {
          T* g = bn->grad_buffer();
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) g[j] += gy[i * n + j];
        }
        if (xn->requires_grad) {
          T* g = xn->grad_buffer();
          const auto& gv = gn->value;
          for (std::int64_t i = 0; i < m; ++i) {
            double s1 = 0.0, s2 = 0.0;
            for (std::int64_t j = 0; j < n; ++j) {
              const double d = static_cast<double>(gy[i * n + j]) * gv[j];
              s1 += d;
              s2 += d * xhat[i * n + j];
            }
            s1 /= static_cast<double>(n);
            s2 /= static_cast<double>(n);
            for (std::int64_t j = 0; j < n; ++j) {
              const double d = static_cast<double>(gy[i * n + j]) * gv[j];
              g[i * n + j] += static_cast<T>(rstd[i] * (d - s1 - xhat[i * n + j] * s2));
            }
          }
        }
      });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, std::span<const std::uint8_t> allowed) {
  require_defined(x, "softmax_rows");
  const std::int64_t m = x.rows(), n = x.cols();
  if (!allowed.empty() && static_cast<std::int64_t>(allowed.size()) != m * n) {
    throw DomainError("softmax_rows: mask size does not match input");
  }
  const auto& xv = x.node()->value;
  std::vector<T> out(xv.size(), T(0));
  for (std::int64_t i = 0; i < m; ++i) {
    const auto ok = [&](std::int64_t j) { return allowed.empty() || allowed[i * n + j] != 0; };
    T mx = -std::numeric_limits<T>::infinity();
    for (std::int64_t j = 0; j < n; ++j)
      if (ok(j)) mx = std::max(mx, xv[i * n + j]);
    if (mx == -std::numeric_limits<T>::infinity()) continue;
    T s = T(0);
    for (std::int64_t j = 0; j < n; ++j) {
      if (!ok(j)) continue;
      out[i * n + j] = std::exp(xv[i * n + j] - mx);
      s += out[i * n + j];
    }
    for (std::int64_t j = 0; j < n; ++j) out[i * n + j] /= s;
  }
  Node<T>* xn = x.node();
  return make_result<T>(x.shape(), std::move(out), {&x}, [xn, m, n](Node<T>& self) {
    if (!xn->requires_grad) return;
    T* g = xn->grad_buffer();
    for (std::int64_t i = 0; i < m; ++i) {
      T dot = T(0);
      for (std::int64_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.value[i * n + j];
      for (std::int64_t j = 0; j < n; ++j)
        g[i * n + j] += self.value[i * n + j] * (self.grad[i * n + j] - dot);
    }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool training) {
  require_defined(x, "dropout");
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  const auto& xv = x.node()->value;
  std::vector<T> keep(xv.size());
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    keep[i] = rng.uniform() >= p ? scale : T(0);
    out[i] = xv[i] * keep[i];
  }
  Node<T>* xn = x.node();
  return make_result<T>(x.shape(), std::move(out), {&x},
                        [xn, keep = std::move(keep)](Node<T>& self) {
                          if (!xn->requires_grad) return;
                          T* g = xn->grad_buffer();
                          for (std::size_t i = 0; i < keep.size(); ++i)
                            g[i] += self.grad[i] * keep[i];
                        });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::int64_t batch, int heads, AttentionMask mask,
                    std::span<const std::uint8_t> custom) {
  require_defined(q, "attention");
  require_defined(k, "attention");
  require_defined(v, "attention");
  const std::int64_t d = q.cols();
  if (heads < 1 || d % heads != 0) {
    throw ConfigError("attention: " + std::to_string(heads) + " heads do not divide width " +
                      std::to_string(d));
  }
  if (k.cols() != d || v.cols() != d) throw DomainError("attention: q, k, v widths differ");
  if (batch < 1 || q.rows() % batch != 0 || k.rows() % batch != 0 || k.rows() != v.rows()) {
    throw DomainError("attention: row counts are not a multiple of the batch size");
  }
  const std::int64_t sq = q.rows() / batch, sk = k.rows() / batch;
  if (mask == AttentionMask::kCausal && sq != sk) {
    throw DomainError("attention: causal mask needs equal query and key lengths");
  }
  if (mask == AttentionMask::kCustom && static_cast<std::int64_t>(custom.size()) != sq * sk) {
    throw DomainError("attention: custom mask must be sq x sk");
  }
  std::vector<std::uint8_t> allowed(static_cast<std::size_t>(sq * sk), 1);
  if (mask == AttentionMask::kCausal) {
    for (std::int64_t i = 0; i < sq; ++i)
      for (std::int64_t j = i + 1; j < sk; ++j) allowed[i * sk + j] = 0;
  } else if (mask == AttentionMask::kCustom) {
    std::copy(custom.begin(), custom.end(), allowed.begin());
  }

  const std::int64_t dh = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  using Strided = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
  using MutStrided = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
  const Eigen::OuterStride<> stride(d);
  const T* Q = q.node()->value.data();
  const T* K = k.node()->value.data();
  const T* V = v.node()->value.data();
  std::vector<T> out(static_cast<std::size_t>(q.rows() * d), T(0));
  std::vector<T> probs(static_cast<std::size_t>(batch * heads * sq * sk), T(0));

  RowMat<T> S(sq, sk);
  for (std::int64_t b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const Strided Qh(Q + b * sq * d + h * dh, sq, dh, stride);
      const Strided Kh(K + b * sk * d + h * dh, sk, dh, stride);
      const Strided Vh(V + b * sk * d + h * dh, sk, dh, stride);
      S.noalias() = Qh * Kh.transpose();
      MutMap<T> P(probs.data() + ((b * heads + h) * sq) * sk, sq, sk);
      for (std::int64_t i = 0; i < sq; ++i) {
        const std::uint8_t* ok = allowed.data() + i * sk;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::int64_t j = 0; j < sk; ++j)
          if (ok[j]) mx = std::max(mx, S(i, j) * scale);
        if (mx == -std::numeric_limits<T>::infinity()) continue;
        T z = T(0);
        for (std::int64_t j = 0; j < sk; ++j) {
          if (!ok[j]) continue;
          const T e = std::exp(S(i, j) * scale - mx);
          P(i, j) = e;
          z += e;
        }
        const T inv = T(1) / z;
        for (std::int64_t j = 0; j < sk; ++j) P(i, j) *= inv;
      }
      MutStrided Oh(out.data() + b * sq * d + h * dh, sq, dh, stride);
      Oh.noalias() = P * Vh;
    }
  }

  Node<T>* qn = q.node();
  Node<T>* kn = k.node();
  Node<T>* vn = v.node();
  return make_result<T>(
      {q.rows(), d}, std::move(out), {&q, &k, &v},
      [qn, kn, vn, batch, heads, sq, sk, d, dh, scale, probs = std::move(probs)](Node<T>& self) {
        const Eigen::OuterStride<> stride(d);
        const T* Q = qn->value.data();
        const T* K = kn->value.data();
        const T* V = vn->value.data();
        T* gQ = qn->requires_grad ? qn->grad_buffer() : nullptr;
        T* gK = kn->requires_grad ? kn->grad_buffer() : nullptr;
        T* gV = vn->requires_grad ? vn->grad_buffer() : nullptr;
        RowMat<T> dP(sq, sk);
        for (std::int64_t b = 0; b < batch; ++b) {
          for (int h = 0; h < heads; ++h) {
            const ConstMap<T> P(probs.data() + ((b * heads + h) * sq) * sk, sq, sk);
            const Strided gO(self.grad.data() + b * sq * d + h * dh, sq, dh, stride);
            const Strided Qh(Q + b * sq * d + h * dh, sq, dh, stride);
            const Strided Kh(K + b * sk * d + h * dh, sk, dh, stride);
            const Strided Vh(V + b * sk * d + h * dh, sk, dh, stride);
            if (gV) {
              MutStrided gVh(gV + b * sk * d + h * dh, sk, dh, stride);
              gVh.noalias() += P.transpose() * gO;
            }
            if (!gQ && !gK) continue;
            dP.noalias() = gO * Vh.transpose();
            // Masked entries have P == 0, so they drop out of dS on their own.
            const Eigen::Matrix<T, Eigen::Dynamic, 1> dot = P.cwiseProduct(dP).rowwise().sum();
            dP = (P.array() * (dP.colwise() - dot).array() * scale).matrix();
            if (gQ) {
              MutStrided gQh(gQ + b * sq * d + h * dh, sq, dh, stride);
              gQh.noalias() += dP * Kh;
            }
            if (gK) {
              MutStrided gKh(gK + b * sk * d + h * dh, sk, dh, stride);
              gKh.noalias() += dP.transpose() * Qh;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, std::span<const T> target, std::span<const T> mask) {
  require_defined(pred, "mse_loss");
  const std::size_t n = pred.node()->value.size();
  if (target.size() != n || mask.size() != n) {
    throw DomainError("mse_loss: prediction, target and mask sizes differ");
  }
  const auto& pv = pred.node()->value;
  double denom = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    denom += mask[i];
    const double e = static_cast<double>(pv[i]) - target[i];
    acc += mask[i] * e * e;
  }
  const double loss = denom > 0.0 ? acc / denom : 0.0;
  std::vector<T> t(target.begin(), target.end()), m(mask.begin(), mask.end());
  Node<T>* pn = pred.node();
  return make_result<T>({1}, {static_cast<T>(loss)}, {&pred},
                        [pn, t = std::move(t), m = std::move(m), denom](Node<T>& self) {
                          if (!pn->requires_grad || denom == 0.0) return;
                          T* g = pn->grad_buffer();
                          const double up = self.grad[0];
                          for (std::size_t i = 0; i < t.size(); ++i) {
                            g[i] += static_cast<T>(up * 2.0 * m[i] *
                                                   (static_cast<double>(pn->value[i]) - t[i]) /
                                                   denom);
                          }
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  require_defined(x, "sum");
  double s = 0.0;
  for (T v : x.data()) s += v;
  Node<T>* xn = x.node();
  return make_result<T>({1}, {static_cast<T>(s)}, {&x}, [xn](Node<T>& self) {
    if (!xn->requires_grad) return;
    T* g = xn->grad_buffer();
    for (std::size_t i = 0; i < xn->value.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require_defined(x, "mean");
  if (x.numel() == 0) throw DomainError("mean of an empty tensor");
  return affine(sum(x), static_cast<T>(1.0 / static_cast<double>(x.numel())));
}

#define SEMBID_INSTANTIATE(T)                                                                  \
  template struct TensorNode<T>;                                                               \
  template class Tensor<T>;                                                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> affine(const Tensor<T>&, T, T);                                           \
  template Tensor<T> add_rowvec(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> transpose(const Tensor<T>&);                                              \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                  \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                               \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                               \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::int64_t>);             \
  template Tensor<T> gelu(const Tensor<T>&);                                                   \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                \
  template Tensor<T> tanh(const Tensor<T>&);                                                   \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);      \
  template Tensor<T> softmax_rows(const Tensor<T>&, std::span<const std::uint8_t>);            \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&, bool);                            \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                               std::int64_t, int, AttentionMask, std::span<const std::uint8_t>); \
  template Tensor<T> mse_loss(const Tensor<T>&, std::span<const T>, std::span<const T>);       \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);

SEMBID_INSTANTIATE(float)
SEMBID_INSTANTIATE(double)

#undef SEMBID_INSTANTIATE

}  // namespace sembid
