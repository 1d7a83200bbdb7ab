#ifndef SEMBID_BASELINES_HPP_
#define SEMBID_BASELINES_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sembid/auction_env.hpp"
#include "sembid/dataset.hpp"
#include "sembid/nn.hpp"
#include "sembid/pid.hpp"
#include "sembid/sembid_model.hpp"

namespace sembid {

struct BcConfig {
  int hidden = 128;
  std::int64_t steps = 5000;
  int batch_size = 64;
  AdamWConfig optimizer;
  double lambda_max = 145.47;
  std::uint64_t seed = 0;

  void validate() const;
};

// State -> lambda MLP (two ReLU hidden layers) fit by MSE on logged actions.
// Inputs are z-scored with statistics of the training states; the output is
// mapped back to raw multipliers by a fixed affine.
class BcPolicy {
 public:
  explicit BcPolicy(BcConfig cfg);

  // Sees only (state, action) pairs. Returns the final training loss.
  double fit(std::span<const std::array<float, kStateDim>> states, std::span<const float> actions);
  double predict(const std::array<double, kStateDim>& state) const;  // unclipped
  double act(const std::array<double, kStateDim>& state) const;      // clipped to [0, lambda_max]
  std::vector<double> predict_batch(std::span<const std::array<float, kStateDim>> states) const;

  const BcConfig& config() const { return cfg_; }
  std::int64_t parameter_count() const { return store_.count(); }
  std::uint64_t checksum() const { return store_.checksum(); }

  void save(const std::filesystem::path& path) const;
  static BcPolicy load(const std::filesystem::path& path);

 private:
  Tensor<float> forward(const Tensor<float>& x) const;

  BcConfig cfg_;
  ParamStore<float> store_;
  Linear<float> fc1_;
  Linear<float> fc2_;
  Linear<float> fc3_;
  std::array<double, kStateDim> mean_{};
  std::array<double, kStateDim> std_{};
  double action_mean_ = 0.0;
  double action_std_ = 1.0;
};

// Masked-in (state, action) pairs of a dataset; rewards and RTG stay behind.
BcPolicy bc_train(const Dataset& ds, const BcConfig& cfg);

// Vanilla Decision Transformer: the SemBid model with no semantic tokens.
ModelConfig vanilla_dt_config(ModelConfig base);

}  // namespace sembid

#endif  // SEMBID_BASELINES_HPP_
