#ifndef SEMBID_SEMBID_MODEL_HPP_
#define SEMBID_SEMBID_MODEL_HPP_

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "sembid/auction_env.hpp"
#include "sembid/embedding.hpp"
#include "sembid/nn.hpp"
#include "sembid/tensor.hpp"

namespace sembid {

enum class Role { kTask, kRtg, kHistory, kStrategy, kState, kAction };
std::string_view role_name(Role role);

// Semantic roles, indexable as 0 = task, 1 = history, 2 = strategy.
inline constexpr std::array<Role, 3> kSemanticRoles = {Role::kTask, Role::kHistory,
                                                       Role::kStrategy};
int semantic_slot(Role role);  // -1 for numeric roles

struct TokenSet {
  bool task = true;
  bool history = true;
  bool strategy = true;

  bool enabled(Role role) const;
  int count() const { return int(task) + int(history) + int(strategy); }
  std::string to_string() const;  // "all", "none" or e.g. "task,strategy"

  static TokenSet all() { return {}; }
  static TokenSet none() { return {false, false, false}; }
  // "all" | "none" | comma list of task, history, strategy.
  static TokenSet parse(std::string_view spec);
  // All tokens except those listed.
  static TokenSet ablate(std::string_view spec);
};

struct ModelConfig {
  int layers = 6;
  int heads = 4;
  int d_model = 128;
  int d_ff = 512;
  double dropout = 0.1;
  int semantic_input_dim = kSemanticDim;
  int max_episode_len = 48;
  int state_dim = kStateDim;
  TokenSet tokens;
  int context_window = 48;  // K steps

  // Fixed output affine: lambda_hat = action_mean + action_std * head(h).
  double action_mean = 0.0;
  double action_std = 1.0;

  void validate() const;
  int tokens_per_step() const { return 3 + tokens.count(); }
  // Per-step role order: [task, rtg, history, strategy, state, action] minus
  // disabled semantic roles.
  std::vector<Role> step_roles() const;

  // Closed form of the parameter count for this configuration.
  std::int64_t expected_parameter_count() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Model-ready inputs for B windows of L steps each, flattened step-major
// within each window (index b * L + s).
template <typename T>
struct ModelBatch {
  std::int64_t batch = 0;
  std::int64_t steps = 0;
  std::vector<std::int64_t> timesteps;  // absolute period index, 0-based
  std::vector<T> rtg;                   // scaled return-to-go
  std::vector<T> states;                // normalized, B * L * state_dim
  std::vector<T> actions;               // normalized previous-action inputs
  std::vector<T> targets;               // raw lambda targets
  std::vector<T> mask;                  // loss mask m_t
  // Unique semantic vectors of the batch and, per semantic slot, the row of
  // each step's text in that table.
  Tensor<T> semantic_table;
  std::array<std::vector<std::int64_t>, 3> semantic_index;
};

// Flattened token embeddings of a batch, [B * L * R, d] in (b, s, role) order.
template <typename T>
struct TokenSequence {
  Tensor<T> tokens;
  std::int64_t batch = 0;
  std::int64_t steps = 0;
  std::vector<Role> roles;                   // per position within one window
  std::vector<std::int64_t> state_positions;  // per step, within one window
  std::int64_t length() const { return static_cast<std::int64_t>(roles.size()); }
  // allowed[i * length + j] = 1 iff position i may attend to j.
  std::vector<std::uint8_t> causal_mask() const;
};

template <typename T>
struct TransformerBlock {
  LayerNorm<T> ln1;
  Linear<T> q;
  Linear<T> k;
  Linear<T> v;
  Linear<T> proj;
  LayerNorm<T> ln2;
  Linear<T> fc1;
  Linear<T> fc2;
};

template <typename T>
class SemBidModel {
 public:
  SemBidModel(const ModelConfig& cfg, std::uint64_t init_seed);

  // Role embeddings: W_k for semantic roles, two-layer MLPs for the numeric
  // ones, then learned timestep + role embeddings and a LayerNorm.
  TokenSequence<T> build_token_sequence(const ModelBatch<T>& batch) const;
  // Causal transformer over the sequence; returns the raw lambda predictions
  // read at STATE positions, [B * L, 1].
  Tensor<T> forward_tokens(const TokenSequence<T>& seq, bool training, Rng* dropout_rng) const;
  Tensor<T> forward(const ModelBatch<T>& batch, bool training, Rng* dropout_rng) const;
  // Unclipped lambda predictions, one per step, without recording a graph.
  std::vector<double> predict_actions(const ModelBatch<T>& batch) const;

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  std::int64_t parameter_count() const { return store_.count(); }

 private:
  Tensor<T> block_forward(const TransformerBlock<T>& blk, const Tensor<T>& x, std::int64_t batch,
                          bool training, Rng* rng) const;

  ModelConfig cfg_;
  ParamStore<T> store_;
  std::array<Linear<T>, 3> semantic_proj_;  // W_k, indexed by semantic slot
  Mlp2<T> phi_rtg_;
  Mlp2<T> phi_state_;
  Mlp2<T> phi_action_;
  Tensor<T> timestep_embedding_;  // [max_episode_len, d]
  Tensor<T> role_embedding_;      // [tokens_per_step, d]
  LayerNorm<T> embed_ln_;
  std::vector<TransformerBlock<T>> blocks_;
  LayerNorm<T> final_ln_;
  Linear<T> head_;
};

// Interned semantic texts and their cached embeddings.
class TextTable {
 public:
  explicit TextTable(std::shared_ptr<SemanticEmbedder> embedder);

  std::int64_t intern(const std::string& text);
  const std::string& text(std::int64_t id) const { return texts_.at(static_cast<std::size_t>(id)); }
  const std::vector<float>& vector(std::int64_t id);
  std::size_t size() const { return texts_.size(); }
  int dim() const { return embedder_->dim(); }
  SemanticEmbedder& embedder() { return *embedder_; }

 private:
  std::shared_ptr<SemanticEmbedder> embedder_;
  std::vector<std::string> texts_;
  std::unordered_map<std::string, std::int64_t> ids_;
};

// One trajectory in model units.
struct EncodedTrajectory {
  std::vector<std::int64_t> timesteps;
  std::vector<float> rtg;  // scaled
  std::vector<std::array<float, kStateDim>> states;  // normalized
  std::vector<float> actions;  // normalized, fed to ACTION tokens
  std::vector<float> targets;  // raw lambda
  std::vector<float> mask;
  std::array<std::vector<std::int64_t>, 3> text_ids;  // per semantic slot; may be empty

  int length() const { return static_cast<int>(timesteps.size()); }
};

// Window [start, start + len) of each listed trajectory, padded with mask 0
// up to `steps`. Builds the deduplicated semantic table for enabled roles;
// `texts` may be null when no semantic role is enabled.
template <typename T>
ModelBatch<T> assemble_batch(const std::vector<const EncodedTrajectory*>& trajectories,
                             const std::vector<int>& starts, int steps, const ModelConfig& cfg,
                             TextTable* texts);

}  // namespace sembid

#endif  // SEMBID_SEMBID_MODEL_HPP_
