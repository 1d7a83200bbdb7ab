#include "sembid/nn.hpp"

#include <bit>
#include <cmath>

#include "sembid/errors.hpp"

namespace sembid {

double truncated_normal(Rng& rng, double stddev) {
  for (;;) {
    const double z = rng.normal();
    if (std::abs(z) <= 2.0) return z * stddev;
  }
}

template <typename T>
Tensor<T> ParamStore<T>::add(const std::string& name, const Shape& shape, Init init, Rng& rng,
                             bool decay) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name: " + name);
  std::vector<T> data(static_cast<std::size_t>(shape_numel(shape)));
  switch (init) {
    case Init::kZeros: std::fill(data.begin(), data.end(), T(0)); break;
    case Init::kOnes: std::fill(data.begin(), data.end(), T(1)); break;
    case Init::kTruncatedNormal:
      for (T& x : data) x = static_cast<T>(truncated_normal(rng));
      break;
  }
  auto t = Tensor<T>::from(shape, std::move(data), true);
  params_.push_back({name, t, decay});
  return t;
}

template <typename T>
const NamedParam<T>* ParamStore<T>::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
std::int64_t ParamStore<T>::count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
std::uint64_t ParamStore<T>::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto mix = [&h](std::uint64_t v, int bytes) {
    for (int b = 0; b < bytes; ++b) {
      h ^= (v >> (8 * b)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : params_) {
    for (unsigned char c : p.name) mix(c, 1);
    for (auto d : p.tensor.shape()) mix(static_cast<std::uint64_t>(d), 8);
    for (T x : p.tensor.data()) mix(std::bit_cast<std::uint32_t>(static_cast<float>(x)), 4);
  }
  return h;
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, std::int64_t in,
                  std::int64_t out, Rng& rng, bool bias) {
  w = store.add(name + ".w", {in, out}, Init::kTruncatedNormal, rng, true);
  if (bias) b = store.add(name + ".b", {out}, Init::kZeros, rng, false);
}

template <typename T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& name, std::int64_t dim,
                        Rng& rng) {
  gain = store.add(name + ".g", {dim}, Init::kOnes, rng, false);
  bias = store.add(name + ".b", {dim}, Init::kZeros, rng, false);
}

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation act) {
  return act == Activation::kGelu ? gelu(x) : relu(x);
}

template <typename T>
Mlp2<T>::Mlp2(ParamStore<T>& store, const std::string& name, std::int64_t in,
              std::int64_t hidden, std::int64_t out, Rng& rng, Activation a)
    : fc1(store, name + ".fc1", in, hidden, rng),
      fc2(store, name + ".fc2", hidden, out, rng),
      act(a) {}

void AdamWConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be nonnegative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be nonnegative");
}

template <typename T>
AdamW<T>::AdamW(ParamStore<T>& store, AdamWConfig cfg) : store_(store), cfg_(cfg) {
  cfg_.validate();
  for (const auto& p : store_.params()) {
    m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T(0));
    v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T(0));
  }
}

template <typename T>
double AdamW<T>::step() {
  auto& params = store_.params();
  if (params.size() != m_.size()) throw StateError("parameter set changed after optimizer creation");
  double sq = 0.0;
  for (const auto& p : params)
    for (T g : p.tensor.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (!p.tensor.has_grad()) continue;
    auto w = p.tensor.mutable_data();
    auto g = p.tensor.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    const double wd = p.decay ? cfg_.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]) * clip;
      m[i] = static_cast<T>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi);
      v[i] = static_cast<T>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] = static_cast<T>(w[i] - cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * w[i]));
    }
  }
  return norm;
}

#define SEMBID_INSTANTIATE_NN(T)                                      \
  template class ParamStore<T>;                                       \
  template struct Linear<T>;                                          \
  template struct LayerNorm<T>;                                       \
  template struct Mlp2<T>;                                            \
  template class AdamW<T>;                                            \
  template Tensor<T> activate(const Tensor<T>&, Activation);

SEMBID_INSTANTIATE_NN(float)
SEMBID_INSTANTIATE_NN(double)

#undef SEMBID_INSTANTIATE_NN

}  // namespace sembid
