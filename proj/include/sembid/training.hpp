#ifndef SEMBID_TRAINING_HPP_
#define SEMBID_TRAINING_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sembid/checkpoint.hpp"
#include "sembid/dataset.hpp"
#include "sembid/nn.hpp"
#include "sembid/sembid_model.hpp"
#include "sembid/semantic_signals.hpp"

namespace sembid {

struct EncodedDataset {
  std::vector<EncodedTrajectory> trajectories;
  NormalizationStats stats;
  int n_periods = 0;
};

// Per-period telemetry for the periods before `t` (0-based).
std::vector<PeriodTelemetry> trajectory_telemetry(const Trajectory& tr, int t);

// Normalizes numeric channels and verbalizes every step. Template variants
// for a trajectory draw from derive_seed(sem.template_seed, trajectory seed).
// Passing texts == nullptr skips the semantic channels.
EncodedDataset encode_dataset(const Dataset& ds, const NormalizationStats& stats,
                              const SemanticConfig& sem, TextTable* texts);

// Model config with the output affine taken from the dataset statistics.
ModelConfig model_config_for(ModelConfig base, const NormalizationStats& stats);

enum class BatchMode {
  kRandomWindows,  // batch_size trajectories with replacement, random K-step windows
  kFullPass,       // every trajectory once from step 0
};

struct TrainConfig {
  std::int64_t steps = 5000;
  int batch_size = 64;
  AdamWConfig optimizer;
  BatchMode mode = BatchMode::kRandomWindows;
  bool cosine_decay = false;  // lr follows a half cosine down to min_lr_ratio * lr
  double min_lr_ratio = 0.0;
  double stop_below = 0.0;    // stop once the batch loss drops below; 0 disables
  int log_every = 50;
  std::int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::filesystem::path out_dir;      // empty writes nothing
  std::uint64_t seed = 0;
  nlohmann::json sidecar_extra;  // merged into every checkpoint sidecar

  void validate() const;
};

struct LossPoint {
  std::int64_t step = 0;  // optimizer steps completed, 1-based
  double loss = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<LossPoint> curve;  // every step
  std::int64_t steps_done = 0;
  std::int64_t skipped_batches = 0;
  double final_loss = 0.0;
  double seconds = 0.0;
  bool stopped_early = false;
  std::uint64_t checksum = 0;  // of the final checkpoint
};

// Algorithm-1 loop: sample, tokenize, masked MSE on raw multipliers, AdamW.
// Batches and dropout masks are derived from (seed, step), so resuming from a
// checkpoint continues the exact same run.
TrainResult train_model(SemBidModel<float>& model, const EncodedDataset& data, TextTable* texts,
                        const TrainConfig& cfg, const Checkpoint* resume = nullptr);

// Checkpoint plus "<path>.json" with the model config and step.
void save_model(const SemBidModel<float>& model, const AdamW<float>* optimizer,
                const std::filesystem::path& path, const nlohmann::json& extra = {});
// Loads the sidecar config, builds the model and restores its weights.
SemBidModel<float> load_model(const std::filesystem::path& path);

}  // namespace sembid

#endif  // SEMBID_TRAINING_HPP_
