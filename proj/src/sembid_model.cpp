#include "sembid/sembid_model.hpp"

#include <unordered_map>

#include "sembid/errors.hpp"

namespace sembid {

std::string_view role_name(Role role) {
  switch (role) {
    case Role::kTask: return "task";
    case Role::kRtg: return "rtg";
    case Role::kHistory: return "history";
    case Role::kStrategy: return "strategy";
    case Role::kState: return "state";
    case Role::kAction: return "action";
  }
  return "?";
}

int semantic_slot(Role role) {
  switch (role) {
    case Role::kTask: return 0;
    case Role::kHistory: return 1;
    case Role::kStrategy: return 2;
    default: return -1;
  }
}

bool TokenSet::enabled(Role role) const {
  switch (role) {
    case Role::kTask: return task;
    case Role::kHistory: return history;
    case Role::kStrategy: return strategy;
    default: return true;
  }
}

std::string TokenSet::to_string() const {
  if (task && history && strategy) return "all";
  if (!task && !history && !strategy) return "none";
  std::string out;
  const auto put = [&out](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  put(task, "task");
  put(history, "history");
  put(strategy, "strategy");
  return out;
}

namespace {

TokenSet parse_list(std::string_view spec) {
  TokenSet t = TokenSet::none();
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    std::size_t end = spec.find(',', pos);
    if (end == std::string_view::npos) end = spec.size();
    const std::string_view item = spec.substr(pos, end - pos);
    if (item == "task") {
      t.task = true;
    } else if (item == "history") {
      t.history = true;
    } else if (item == "strategy") {
      t.strategy = true;
    } else {
      throw ConfigError("unknown semantic token '" + std::string(item) +
                        "' (expected task, history or strategy)");
    }
    pos = end + 1;
  }
  return t;
}

}  // namespace

TokenSet TokenSet::parse(std::string_view spec) {
  if (spec == "all") return all();
  if (spec == "none" || spec.empty()) return none();
  return parse_list(spec);
}

TokenSet TokenSet::ablate(std::string_view spec) {
  if (spec == "none" || spec.empty()) return all();
  if (spec == "all") return none();
  const TokenSet drop = parse_list(spec);
  return {!drop.task, !drop.history, !drop.strategy};
}

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (heads < 1 || d_model < 1 || d_model % heads != 0) {
    throw ConfigError("d_model must be a positive multiple of heads");
  }
  if (d_ff < 1) throw ConfigError("d_ff must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (semantic_input_dim < 1) throw ConfigError("semantic_input_dim must be >= 1");
  if (state_dim < 1) throw ConfigError("state_dim must be >= 1");
  if (max_episode_len < 1) throw ConfigError("max_episode_len must be >= 1");
  if (context_window < 1 || context_window > max_episode_len) {
    throw ConfigError("context_window must lie in [1, max_episode_len]");
  }
  if (!(action_std > 0.0)) throw ConfigError("action_std must be positive");
}

std::vector<Role> ModelConfig::step_roles() const {
  std::vector<Role> roles;
  for (Role r : {Role::kTask, Role::kRtg, Role::kHistory, Role::kStrategy, Role::kState,
                 Role::kAction}) {
    if (tokens.enabled(r)) roles.push_back(r);
  }
  return roles;
}

std::int64_t ModelConfig::expected_parameter_count() const {
  const std::int64_t d = d_model;
  const std::int64_t f = d_ff;
  const auto mlp = [d](std::int64_t in) { return in * d + d + d * d + d; };
  std::int64_t n = tokens.count() * (std::int64_t{semantic_input_dim} * d + d);
  n += mlp(1) + mlp(state_dim) + mlp(1);
  n += std::int64_t{max_episode_len} * d + std::int64_t{tokens_per_step()} * d;
  n += 2 * d;  // embedding LayerNorm
  const std::int64_t block = 2 * d + 3 * (d * d + d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
  n += layers * block;
  n += 2 * d + d + 1;  // final LayerNorm and head
  return n;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"layers", layers},
          {"heads", heads},
          {"d_model", d_model},
          {"d_ff", d_ff},
          {"dropout", dropout},
          {"semantic_input_dim", semantic_input_dim},
          {"max_episode_len", max_episode_len},
          {"state_dim", state_dim},
          {"tokens", tokens.to_string()},
          {"context_window", context_window},
          {"action_mean", action_mean},
          {"action_std", action_std}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.semantic_input_dim = j.at("semantic_input_dim").get<int>();
  c.max_episode_len = j.at("max_episode_len").get<int>();
  c.state_dim = j.at("state_dim").get<int>();
  c.tokens = TokenSet::parse(j.at("tokens").get<std::string>());
  c.context_window = j.at("context_window").get<int>();
  c.action_mean = j.at("action_mean").get<double>();
  c.action_std = j.at("action_std").get<double>();
  c.validate();
  return c;
}

template <typename T>
std::vector<std::uint8_t> TokenSequence<T>::causal_mask() const {
  const std::int64_t n = length();
  std::vector<std::uint8_t> allowed(static_cast<std::size_t>(n * n), 0);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j <= i; ++j) allowed[static_cast<std::size_t>(i * n + j)] = 1;
  return allowed;
}

template <typename T>
SemBidModel<T>::SemBidModel(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(init_seed, "model-init"));
  const std::int64_t d = cfg_.d_model;
  for (Role r : kSemanticRoles) {
    if (!cfg_.tokens.enabled(r)) continue;
    semantic_proj_[static_cast<std::size_t>(semantic_slot(r))] =
        Linear<T>(store_, "embed." + std::string(role_name(r)), cfg_.semantic_input_dim, d, rng);
  }
  phi_rtg_ = Mlp2<T>(store_, "embed.rtg", 1, d, d, rng);
  phi_state_ = Mlp2<T>(store_, "embed.state", cfg_.state_dim, d, d, rng);
  phi_action_ = Mlp2<T>(store_, "embed.action", 1, d, d, rng);
  timestep_embedding_ =
      store_.add("embed.timestep", {cfg_.max_episode_len, d}, Init::kTruncatedNormal, rng, true);
  role_embedding_ =
      store_.add("embed.role", {cfg_.tokens_per_step(), d}, Init::kTruncatedNormal, rng, true);
  embed_ln_ = LayerNorm<T>(store_, "embed.ln", d, rng);
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "block" + std::to_string(l);
    TransformerBlock<T> blk;
    blk.ln1 = LayerNorm<T>(store_, p + ".ln1", d, rng);
    blk.q = Linear<T>(store_, p + ".attn.q", d, d, rng);
    blk.k = Linear<T>(store_, p + ".attn.k", d, d, rng);
    blk.v = Linear<T>(store_, p + ".attn.v", d, d, rng);
    blk.proj = Linear<T>(store_, p + ".attn.proj", d, d, rng);
    blk.ln2 = LayerNorm<T>(store_, p + ".ln2", d, rng);
    blk.fc1 = Linear<T>(store_, p + ".ffn.fc1", d, cfg_.d_ff, rng);
    blk.fc2 = Linear<T>(store_, p + ".ffn.fc2", cfg_.d_ff, d, rng);
    blocks_.push_back(std::move(blk));
  }
  final_ln_ = LayerNorm<T>(store_, "final.ln", d, rng);
  head_ = Linear<T>(store_, "head", d, 1, rng);
}

template <typename T>
TokenSequence<T> SemBidModel<T>::build_token_sequence(const ModelBatch<T>& batch) const {
  const std::int64_t B = batch.batch;
  const std::int64_t L = batch.steps;
  const std::int64_t BL = B * L;
  if (B < 1 || L < 1) throw DomainError("empty model batch");
  if (L > cfg_.context_window) {
    throw DomainError("batch has " + std::to_string(L) + " steps, context window is " +
                      std::to_string(cfg_.context_window));
  }
  const auto n = static_cast<std::size_t>(BL);
  if (batch.timesteps.size() != n || batch.rtg.size() != n || batch.actions.size() != n ||
      batch.states.size() != n * static_cast<std::size_t>(cfg_.state_dim)) {
    throw DomainError("model batch arrays do not match batch x steps");
  }

  const std::vector<Role> roles = cfg_.step_roles();
  const auto R = static_cast<std::int64_t>(roles.size());
  std::vector<Tensor<T>> parts;
  parts.reserve(roles.size());
  for (Role r : roles) {
    switch (r) {
      case Role::kRtg:
        parts.push_back(phi_rtg_(Tensor<T>::from({BL, 1}, batch.rtg)));
        break;
      case Role::kState:
        parts.push_back(phi_state_(Tensor<T>::from({BL, cfg_.state_dim}, batch.states)));
        break;
      case Role::kAction:
        parts.push_back(phi_action_(Tensor<T>::from({BL, 1}, batch.actions)));
        break;
      default: {
        const auto slot = static_cast<std::size_t>(semantic_slot(r));
        const auto& index = batch.semantic_index[slot];
        if (!batch.semantic_table.defined() || index.size() != n) {
          throw DomainError("missing semantic text for enabled role '" +
                            std::string(role_name(r)) + "'");
        }
        if (batch.semantic_table.cols() != cfg_.semantic_input_dim) {
          throw DomainError("semantic vectors have dimension " +
                            std::to_string(batch.semantic_table.cols()) + ", model expects " +
                            std::to_string(cfg_.semantic_input_dim));
        }
        parts.push_back(gather_rows(semantic_proj_[slot](batch.semantic_table), index));
      }
    }
  }
  const Tensor<T> stacked = concat_rows(parts);  // role-major, [R * BL, d]

  const std::int64_t N = L * R;
  std::vector<std::int64_t> order(static_cast<std::size_t>(B * N));
  std::vector<std::int64_t> times(order.size());
  std::vector<std::int64_t> role_ids(order.size());
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t s = 0; s < L; ++s) {
      const std::int64_t step = batch.timesteps[static_cast<std::size_t>(b * L + s)];
      if (step < 0 || step >= cfg_.max_episode_len) {
        throw DomainError("timestep " + std::to_string(step) + " outside [0, " +
                          std::to_string(cfg_.max_episode_len) + ")");
      }
      for (std::int64_t r = 0; r < R; ++r) {
        const auto pos = static_cast<std::size_t>(b * N + s * R + r);
        order[pos] = r * BL + b * L + s;
        times[pos] = step;
        role_ids[pos] = r;
      }
    }
  }
  Tensor<T> x = gather_rows(stacked, order);
  x = add(x, gather_rows(timestep_embedding_, times));
  x = add(x, gather_rows(role_embedding_, role_ids));

  TokenSequence<T> seq;
  seq.tokens = embed_ln_(x);
  seq.batch = B;
  seq.steps = L;
  for (std::int64_t s = 0; s < L; ++s) {
    for (std::int64_t r = 0; r < R; ++r) {
      seq.roles.push_back(roles[static_cast<std::size_t>(r)]);
      if (roles[static_cast<std::size_t>(r)] == Role::kState) seq.state_positions.push_back(s * R + r);
    }
  }
  return seq;
}

template <typename T>
Tensor<T> SemBidModel<T>::block_forward(const TransformerBlock<T>& blk, const Tensor<T>& x,
                                        std::int64_t batch, bool training, Rng* rng) const {
  const bool drop = training && cfg_.dropout > 0.0;
  if (drop && rng == nullptr) throw StateError("training with dropout needs an RNG");
  const Tensor<T> h = blk.ln1(x);
  Tensor<T> a = attention(blk.q(h), blk.k(h), blk.v(h), batch, cfg_.heads, AttentionMask::kCausal);
  if (drop) a = dropout(a, cfg_.dropout, *rng, true);
  const Tensor<T> x1 = add(x, blk.proj(a));
  Tensor<T> f = blk.fc2(gelu(blk.fc1(blk.ln2(x1))));
  if (drop) f = dropout(f, cfg_.dropout, *rng, true);
  return add(x1, f);
}

template <typename T>
Tensor<T> SemBidModel<T>::forward_tokens(const TokenSequence<T>& seq, bool training,
                                         Rng* dropout_rng) const {
  const std::int64_t N = seq.length();
  if (seq.tokens.rows() != seq.batch * N || seq.tokens.cols() != cfg_.d_model) {
    throw DomainError("token sequence shape " + shape_str(seq.tokens.shape()) +
                      " does not match its layout");
  }
  Tensor<T> x = seq.tokens;
  for (const auto& blk : blocks_) x = block_forward(blk, x, seq.batch, training, dropout_rng);
  x = final_ln_(x);
  std::vector<std::int64_t> at;
  at.reserve(static_cast<std::size_t>(seq.batch * seq.steps));
  for (std::int64_t b = 0; b < seq.batch; ++b)
    for (std::int64_t p : seq.state_positions) at.push_back(b * N + p);
  return affine(head_(gather_rows(x, at)), static_cast<T>(cfg_.action_std),
                static_cast<T>(cfg_.action_mean));
}

template <typename T>
Tensor<T> SemBidModel<T>::forward(const ModelBatch<T>& batch, bool training,
                                  Rng* dropout_rng) const {
  return forward_tokens(build_token_sequence(batch), training, dropout_rng);
}

template <typename T>
std::vector<double> SemBidModel<T>::predict_actions(const ModelBatch<T>& batch) const {
  NoGradGuard guard;
  const Tensor<T> a = forward(batch, false, nullptr);
  return std::vector<double>(a.data().begin(), a.data().end());
}

TextTable::TextTable(std::shared_ptr<SemanticEmbedder> embedder) : embedder_(std::move(embedder)) {
  if (!embedder_) throw ConfigError("text table needs an embedder");
}

std::int64_t TextTable::intern(const std::string& text) {
  const auto it = ids_.find(text);
  if (it != ids_.end()) return it->second;
  const auto id = static_cast<std::int64_t>(texts_.size());
  texts_.push_back(text);
  ids_.emplace(text, id);
  return id;
}

const std::vector<float>& TextTable::vector(std::int64_t id) {
  return embedder_->embed(texts_.at(static_cast<std::size_t>(id)));
}

template <typename T>
ModelBatch<T> assemble_batch(const std::vector<const EncodedTrajectory*>& trajectories,
                             const std::vector<int>& starts, int steps, const ModelConfig& cfg,
                             TextTable* texts) {
  if (trajectories.size() != starts.size()) throw DomainError("one window start per trajectory");
  if (trajectories.empty() || steps < 1) throw DomainError("empty batch request");
  const auto B = static_cast<std::int64_t>(trajectories.size());
  const std::int64_t L = steps;
  const auto sd = static_cast<std::size_t>(cfg.state_dim);
  ModelBatch<T> mb;
  mb.batch = B;
  mb.steps = L;
  const auto n = static_cast<std::size_t>(B * L);
  mb.timesteps.assign(n, 0);
  mb.rtg.assign(n, T(0));
  mb.states.assign(n * sd, T(0));
  mb.actions.assign(n, T(0));
  mb.targets.assign(n, T(0));
  mb.mask.assign(n, T(0));

  std::unordered_map<std::int64_t, std::int64_t> local;
  std::vector<std::int64_t> table_ids;  // -1 marks the zero padding row
  const auto row_of = [&](std::int64_t id) {
    const auto it = local.find(id);
    if (it != local.end()) return it->second;
    const auto row = static_cast<std::int64_t>(table_ids.size());
    table_ids.push_back(id);
    local.emplace(id, row);
    return row;
  };
  for (Role r : kSemanticRoles) {
    if (cfg.tokens.enabled(r)) mb.semantic_index[static_cast<std::size_t>(semantic_slot(r))].assign(n, 0);
  }

  for (std::int64_t b = 0; b < B; ++b) {
    const EncodedTrajectory& tr = *trajectories[static_cast<std::size_t>(b)];
    const int start = starts[static_cast<std::size_t>(b)];
    if (start < 0 || start >= tr.length()) throw DomainError("window start outside trajectory");
    if (static_cast<int>(tr.states[0].size()) != cfg.state_dim) {
      throw DomainError("trajectory state width does not match model");
    }
    for (Role r : kSemanticRoles) {
      const auto slot = static_cast<std::size_t>(semantic_slot(r));
      if (cfg.tokens.enabled(r) && static_cast<int>(tr.text_ids[slot].size()) < tr.length()) {
        throw DomainError("trajectory is missing semantic text for enabled role '" +
                          std::string(role_name(r)) + "'");
      }
    }
    for (std::int64_t s = 0; s < L; ++s) {
      const auto o = static_cast<std::size_t>(b * L + s);
      const int t = start + static_cast<int>(s);
      if (t >= tr.length()) {
        for (auto& idx : mb.semantic_index)
          if (!idx.empty()) idx[o] = row_of(-1);
        continue;
      }
      const auto ti = static_cast<std::size_t>(t);
      mb.timesteps[o] = tr.timesteps[ti];
      mb.rtg[o] = static_cast<T>(tr.rtg[ti]);
      for (std::size_t k = 0; k < sd; ++k) mb.states[o * sd + k] = static_cast<T>(tr.states[ti][k]);
      mb.actions[o] = static_cast<T>(tr.actions[ti]);
      mb.targets[o] = static_cast<T>(tr.targets[ti]);
      mb.mask[o] = static_cast<T>(tr.mask[ti]);
      for (std::size_t slot = 0; slot < 3; ++slot) {
        if (!mb.semantic_index[slot].empty()) mb.semantic_index[slot][o] = row_of(tr.text_ids[slot][ti]);
      }
    }
  }

  if (!table_ids.empty()) {
    if (!texts) throw ConfigError("semantic roles enabled but no text table given");
    const auto dim = static_cast<std::size_t>(cfg.semantic_input_dim);
    std::vector<T> table(table_ids.size() * dim, T(0));
    for (std::size_t row = 0; row < table_ids.size(); ++row) {
      if (table_ids[row] < 0) continue;
      const auto& v = texts->vector(table_ids[row]);
      if (v.size() != dim) {
        throw DomainError("semantic vector dimension " + std::to_string(v.size()) +
                          " does not match model input " + std::to_string(dim));
      }
      for (std::size_t k = 0; k < dim; ++k) table[row * dim + k] = static_cast<T>(v[k]);
    }
    mb.semantic_table =
        Tensor<T>::from({static_cast<std::int64_t>(table_ids.size()), cfg.semantic_input_dim},
                        std::move(table));
  }
  return mb;
}

template struct TokenSequence<float>;
template struct TokenSequence<double>;
template class SemBidModel<float>;
template class SemBidModel<double>;
template ModelBatch<float> assemble_batch(const std::vector<const EncodedTrajectory*>&,
                                          const std::vector<int>&, int, const ModelConfig&,
                                          TextTable*);
template ModelBatch<double> assemble_batch(const std::vector<const EncodedTrajectory*>&,
                                           const std::vector<int>&, int, const ModelConfig&,
                                           TextTable*);

}  // namespace sembid
