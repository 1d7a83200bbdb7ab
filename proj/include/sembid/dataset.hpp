#ifndef SEMBID_DATASET_HPP_
#define SEMBID_DATASET_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "sembid/auction_env.hpp"

namespace sembid {

enum class BehaviorPolicy : int { kNoisyPid = 0, kRandomMultiplier = 1 };

// Mixture of logging policies used to populate the offline dataset.
struct BehaviorMix {
  double noisy_pid_weight = 0.6;
  double random_multiplier_weight = 0.4;
  double pid_noise_sigma = 0.25;    // multiplicative log-normal bid noise
  double random_low = 0.3;          // per-episode base lambda, in units of C_CPA
  double random_high = 2.5;
  double random_jitter_sigma = 0.3;
  double random_switch_prob = 0.1;  // chance per period of drawing a new base
  bool sample_target_cpa = true;    // draw C_CPA from the preset range per episode
};

struct Trajectory {
  std::uint64_t seed = 0;
  float target_cpa = 0.0f;
  float budget = 0.0f;
  int policy = 0;

  // One entry per period; states hold raw (unnormalized) features.
  std::vector<std::array<float, kStateDim>> states;
  std::vector<float> actions;
  std::vector<float> rewards;
  std::vector<float> rtg;
  std::vector<float> mask;  // 1 for real steps, 0 for padding
  // Period telemetry needed to verbalize history and strategy.
  std::vector<float> conversions;
  std::vector<float> spend;
  std::vector<float> wins;
  std::vector<float> items;
  std::vector<float> mean_pvalue;
  std::vector<float> budget_left;  // at period start

  int length() const { return static_cast<int>(actions.size()); }
};

struct NormalizationStats {
  std::array<double, kStateDim> state_mean{};
  std::array<double, kStateDim> state_std{};
  double action_mean = 0.0;
  double action_std = 1.0;
  double rtg_scale = 1.0;
  double max_return = 0.0;

  std::array<float, kStateDim> normalize(const std::array<float, kStateDim>& s) const;
  std::array<float, kStateDim> normalize(const std::array<double, kStateDim>& s) const;
};

struct Dataset {
  MarketConfig market;  // base config; per-trajectory seeds and CPA differ
  BehaviorMix mix;
  std::uint64_t seed = 0;
  std::vector<Trajectory> trajectories;
  NormalizationStats stats;

  int n_periods() const { return market.n_periods; }
};

Dataset generate_offline_dataset(const MarketConfig& cfg, const BehaviorMix& mix,
                                 int n_trajectories, std::uint64_t seed);

// Statistics over masked-in steps of the given trajectories.
NormalizationStats compute_normalization(const std::vector<Trajectory>& trajectories);

// Single episode under one behavior policy; market seed/CPA as given.
Trajectory collect_trajectory(const MarketConfig& market, BehaviorPolicy policy,
                              const BehaviorMix& mix, std::uint64_t policy_seed);

// Columnar binary container:
//   "SBDS" | u32 version | u32 n_traj | u32 n_periods | u32 state_dim |
//   u32 n_columns | per-trajectory header (u64 seed, f32 target_cpa,
//   f32 budget, i32 policy) | columns: u16 name_len, name, u32 width,
//   n_traj * n_periods * width little-endian f32 values.
void save_dataset_binary(const Dataset& ds, const std::filesystem::path& path);
// JSON sidecar with the market config, behavior mix and normalization stats.
void save_dataset_sidecar(const Dataset& ds, const std::filesystem::path& path);
void save_dataset_csv(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& binary_path,
                     const std::filesystem::path& sidecar_path);

nlohmann::json market_to_json(const MarketConfig& cfg);
MarketConfig market_from_json(const nlohmann::json& j);
nlohmann::json stats_to_json(const NormalizationStats& stats);
NormalizationStats stats_from_json(const nlohmann::json& j);

}  // namespace sembid

#endif  // SEMBID_DATASET_HPP_
