#ifndef SEMBID_NN_HPP_
#define SEMBID_NN_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "sembid/rng.hpp"
#include "sembid/tensor.hpp"

namespace sembid {

enum class Init { kZeros, kOnes, kTruncatedNormal };

// Normal(0, 0.02) resampled outside two standard deviations.
double truncated_normal(Rng& rng, double stddev = 0.02);

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool decay = false;  // AdamW weight decay applies
};

// Ordered registry of trainable leaves. Names are unique.
template <typename T>
class ParamStore {
 public:
  Tensor<T> add(const std::string& name, const Shape& shape, Init init, Rng& rng, bool decay);

  const std::vector<NamedParam<T>>& params() const { return params_; }
  std::vector<NamedParam<T>>& params() { return params_; }
  const NamedParam<T>* find(const std::string& name) const;
  std::int64_t count() const;
  void zero_grad();
  // FNV-1a over names, shapes and float32 values.
  std::uint64_t checksum() const;

 private:
  std::vector<NamedParam<T>> params_;
};

template <typename T>
struct Linear {
  Tensor<T> w;  // [in, out]
  Tensor<T> b;  // [out], undefined without bias

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::int64_t in, std::int64_t out,
         Rng& rng, bool bias = true);
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, w, b); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, std::int64_t dim, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
};

enum class Activation { kGelu, kRelu };

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation act);

// Linear -> activation -> Linear.
template <typename T>
struct Mlp2 {
  Linear<T> fc1;
  Linear<T> fc2;
  Activation act = Activation::kGelu;

  Mlp2() = default;
  Mlp2(ParamStore<T>& store, const std::string& name, std::int64_t in, std::int64_t hidden,
       std::int64_t out, Rng& rng, Activation act = Activation::kGelu);
  Tensor<T> operator()(const Tensor<T>& x) const { return fc2(activate(fc1(x), act)); }
};

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables

  void validate() const;
};

// Decoupled weight decay: p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p),
// with wd applied only to parameters flagged for decay.
template <typename T>
class AdamW {
 public:
  AdamW(ParamStore<T>& store, AdamWConfig cfg);

  // Returns the pre-clip global gradient norm.
  double step();
  std::int64_t steps() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  void set_steps(std::int64_t s) { step_ = s; }

 private:
  ParamStore<T>& store_;
  AdamWConfig cfg_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::int64_t step_ = 0;
};

}  // namespace sembid

#endif  // SEMBID_NN_HPP_
