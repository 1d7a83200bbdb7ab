#ifndef SEMBID_TENSOR_HPP_
#define SEMBID_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sembid/rng.hpp"

namespace sembid {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool consumed = false;  // backward already ran through this node
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  T* grad_buffer();
};

// Dense row-major tensor with reverse-mode autodiff. Every op treats its
// inputs as a matrix of shape [numel / last_dim, last_dim]. Ops never write
// to their inputs' values. A graph belongs to one thread.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<T> data, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(int axis) const;
  std::int64_t rows() const;
  std::int64_t cols() const;
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> data() const { return node_->value; }
  // Mutable access for leaves (parameters, inputs); never used by ops.
  std::span<T> mutable_data() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();
  T item() const;

  // Reverse pass from a scalar. Throws StateError on a second call for the
  // same graph.
  void backward();

  TensorNode<T>* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// While alive, ops on this thread do not record a graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

enum class AttentionMask { kNone, kCausal, kCustom };

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x [m, in] * w [in, out] + bias [out] (bias may be undefined).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
// alpha * a + beta, elementwise.
template <typename T>
Tensor<T> affine(const Tensor<T>& a, T alpha, T beta = T(0));
// a [m, n] + v [n] broadcast over rows.
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& v);
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape);
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
// out[i] = table[index[i]]; gradients scatter-add back into the table.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int64_t> index);

// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5));
// Row softmax. With allowed (rows x cols, nonzero = keep), excluded entries
// are exactly 0; a row with nothing allowed is all zeros.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, std::span<const std::uint8_t> allowed = {});
// Inverted dropout; identity when !training or p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool training);

// Scaled dot-product attention over already projected inputs.
// q [batch * sq, d], k and v [batch * sk, d]; d is split into `heads` heads.
// kCausal requires sq == sk; kCustom takes an sq x sk allowed mask shared by
// every batch element and head. Disallowed scores are never computed.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::int64_t batch, int heads, AttentionMask mask,
                    std::span<const std::uint8_t> custom = {});

// sum_i m_i (p_i - t_i)^2 / sum_i m_i over a prediction of any shape with
// numel == target.size(). An all-zero mask gives a zero loss.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, std::span<const T> target, std::span<const T> mask);
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

}  // namespace sembid

#endif  // SEMBID_TENSOR_HPP_
