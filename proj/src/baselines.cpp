#include "sembid/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "sembid/checkpoint.hpp"
#include "sembid/errors.hpp"

namespace sembid {

void BcConfig::validate() const {
  if (hidden < 1) throw ConfigError("bc hidden width must be >= 1");
  if (steps < 0) throw ConfigError("bc steps must be nonnegative");
  if (batch_size < 1) throw ConfigError("bc batch_size must be >= 1");
  if (!(lambda_max > 0.0)) throw ConfigError("bc lambda_max must be positive");
  optimizer.validate();
}

BcPolicy::BcPolicy(BcConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(derive_seed(cfg_.seed, "bc-init"));
  fc1_ = Linear<float>(store_, "bc.fc1", kStateDim, cfg_.hidden, rng);
  fc2_ = Linear<float>(store_, "bc.fc2", cfg_.hidden, cfg_.hidden, rng);
  fc3_ = Linear<float>(store_, "bc.fc3", cfg_.hidden, 1, rng);
  std_.fill(1.0);
}

Tensor<float> BcPolicy::forward(const Tensor<float>& x) const {
  const Tensor<float> h = relu(fc2_(relu(fc1_(x))));
  return affine(fc3_(h), static_cast<float>(action_std_), static_cast<float>(action_mean_));
}

double BcPolicy::fit(std::span<const std::array<float, kStateDim>> states,
                     std::span<const float> actions) {
  if (states.empty() || states.size() != actions.size()) {
    throw ConfigError("bc needs a nonempty set of matching states and actions");
  }
  const double n = static_cast<double>(states.size());
  mean_.fill(0.0);
  std_.fill(0.0);
  for (const auto& s : states)
    for (int k = 0; k < kStateDim; ++k) mean_[k] += s[k] / n;
  for (const auto& s : states)
    for (int k = 0; k < kStateDim; ++k) std_[k] += (s[k] - mean_[k]) * (s[k] - mean_[k]) / n;
  for (double& s : std_) s = s > 1e-16 ? std::sqrt(s) : 1.0;
  action_mean_ = 0.0;
  for (float a : actions) action_mean_ += a / n;
  double var = 0.0;
  for (float a : actions) var += (a - action_mean_) * (a - action_mean_) / n;
  action_std_ = var > 1e-16 ? std::sqrt(var) : 1.0;

  std::vector<std::array<float, kStateDim>> z(states.size());
  for (std::size_t i = 0; i < states.size(); ++i)
    for (int k = 0; k < kStateDim; ++k)
      z[i][k] = static_cast<float>((states[i][k] - mean_[k]) / std_[k]);

  AdamW<float> opt(store_, cfg_.optimizer);
  const std::uint64_t root = derive_seed(cfg_.seed, "bc-batches");
  const auto B = static_cast<std::size_t>(std::min<std::size_t>(cfg_.batch_size, states.size()));
  std::vector<float> xb(B * kStateDim);
  std::vector<float> yb(B);
  const std::vector<float> ones(B, 1.0f);
  double last = 0.0;
  for (std::int64_t step = 0; step < cfg_.steps; ++step) {
    Rng rng(derive_seed(root, static_cast<std::uint64_t>(step)));
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t i = B == states.size() ? b : rng.index(states.size());
      std::copy(z[i].begin(), z[i].end(), xb.begin() + static_cast<std::ptrdiff_t>(b * kStateDim));
      yb[b] = actions[i];
    }
    store_.zero_grad();
    const Tensor<float> pred = forward(Tensor<float>::from({static_cast<std::int64_t>(B), kStateDim}, xb));
    Tensor<float> loss = mse_loss(pred, std::span<const float>(yb), std::span<const float>(ones));
    last = loss.item();
    loss.backward();
    opt.step();
  }
  return last;
}

std::vector<double> BcPolicy::predict_batch(
    std::span<const std::array<float, kStateDim>> states) const {
  NoGradGuard guard;
  std::vector<float> x(states.size() * kStateDim);
  for (std::size_t i = 0; i < states.size(); ++i)
    for (int k = 0; k < kStateDim; ++k)
      x[i * kStateDim + k] = static_cast<float>((states[i][k] - mean_[k]) / std_[k]);
  const Tensor<float> y = forward(Tensor<float>::from({static_cast<std::int64_t>(states.size()), kStateDim}, x));
  return std::vector<double>(y.data().begin(), y.data().end());
}

double BcPolicy::predict(const std::array<double, kStateDim>& state) const {
  std::array<float, kStateDim> s{};
  for (int k = 0; k < kStateDim; ++k) s[k] = static_cast<float>(state[k]);
  return predict_batch(std::span<const std::array<float, kStateDim>>(&s, 1))[0];
}

double BcPolicy::act(const std::array<double, kStateDim>& state) const {
  return std::clamp(predict(state), 0.0, cfg_.lambda_max);
}

void BcPolicy::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_checkpoint(capture_checkpoint<float>(store_, nullptr), path);
  nlohmann::json side = {{"format", "sembid-bc"},
                         {"version", 1},
                         {"hidden", cfg_.hidden},
                         {"lambda_max", cfg_.lambda_max},
                         {"state_mean", mean_},
                         {"state_std", std_},
                         {"action_mean", action_mean_},
                         {"action_std", action_std_}};
  std::ofstream f(path.string() + ".json");
  if (!f) throw ConfigError("cannot write " + path.string() + ".json");
  f << side.dump(2) << '\n';
}

BcPolicy BcPolicy::load(const std::filesystem::path& path) {
  std::ifstream f(path.string() + ".json");
  if (!f) throw ConfigError("missing bc sidecar " + path.string() + ".json");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw DataIntegrityError(std::string("malformed bc sidecar: ") + e.what());
  }
  if (side.value("format", "") != "sembid-bc") throw DataIntegrityError("not a bc sidecar");
  BcConfig cfg;
  cfg.hidden = side.at("hidden").get<int>();
  cfg.lambda_max = side.at("lambda_max").get<double>();
  BcPolicy p(cfg);
  restore_checkpoint<float>(load_checkpoint(path), p.store_, nullptr);
  p.mean_ = side.at("state_mean").get<std::array<double, kStateDim>>();
  p.std_ = side.at("state_std").get<std::array<double, kStateDim>>();
  p.action_mean_ = side.at("action_mean").get<double>();
  p.action_std_ = side.at("action_std").get<double>();
  return p;
}

BcPolicy bc_train(const Dataset& ds, const BcConfig& cfg) {
  std::vector<std::array<float, kStateDim>> states;
  std::vector<float> actions;
  for (const Trajectory& tr : ds.trajectories) {
    for (int t = 0; t < tr.length(); ++t) {
      const auto i = static_cast<std::size_t>(t);
      if (tr.mask[i] == 0.0f) continue;
      states.push_back(tr.states[i]);
      actions.push_back(tr.actions[i]);
    }
  }
  BcConfig c = cfg;
  c.lambda_max = ds.market.lambda_max;
  BcPolicy policy(c);
  policy.fit(states, actions);
  return policy;
}

ModelConfig vanilla_dt_config(ModelConfig base) {
  base.tokens = TokenSet::none();
  return base;
}

}  // namespace sembid
