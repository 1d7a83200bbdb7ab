#include "sembid/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>

#include <fmt/format.h>

#include "sembid/errors.hpp"

namespace sembid {

namespace {

nlohmann::json with_extra(const nlohmann::json& base, const nlohmann::json& fields) {
  nlohmann::json out = base.is_object() ? base : nlohmann::json::object();
  for (const auto& [k, v] : fields.items()) out[k] = v;
  return out;
}

}  // namespace

std::vector<PeriodTelemetry> trajectory_telemetry(const Trajectory& tr, int t) {
  std::vector<PeriodTelemetry> out;
  out.reserve(static_cast<std::size_t>(t));
  for (int k = 0; k < t; ++k) {
    const auto i = static_cast<std::size_t>(k);
    out.push_back({tr.conversions[i], tr.spend[i], tr.wins[i], tr.actions[i]});
  }
  return out;
}

EncodedDataset encode_dataset(const Dataset& ds, const NormalizationStats& stats,
                              const SemanticConfig& sem, TextTable* texts) {
  if (ds.trajectories.empty()) throw ConfigError("dataset has no trajectories");
  if (texts) sem.validate();
  EncodedDataset out;
  out.stats = stats;
  out.n_periods = ds.n_periods();
  const double rtg_scale = stats.rtg_scale > 0.0 ? stats.rtg_scale : 1.0;
  for (const Trajectory& tr : ds.trajectories) {
    EncodedTrajectory e;
    const int T = tr.length();
    for (int t = 0; t < T; ++t) {
      const auto i = static_cast<std::size_t>(t);
      e.timesteps.push_back(t);
      e.rtg.push_back(static_cast<float>(tr.rtg[i] / rtg_scale));
      e.states.push_back(stats.normalize(tr.states[i]));
      e.actions.push_back(static_cast<float>((tr.actions[i] - stats.action_mean) / stats.action_std));
      e.targets.push_back(tr.actions[i]);
      e.mask.push_back(tr.mask[i]);
    }
    if (texts) {
      Rng rng(derive_seed(sem.template_seed, tr.seed));
      VariantSelector selector(rng);
      const std::vector<PeriodTelemetry> history = trajectory_telemetry(tr, T);
      for (int t = 0; t < T; ++t) {
        const auto i = static_cast<std::size_t>(t);
        StepContext ctx;
        ctx.target_cpa = tr.target_cpa;
        ctx.mean_pvalue = tr.mean_pvalue[i];
        ctx.budget_ratio = tr.budget > 0.0f ? tr.budget_left[i] / tr.budget : 0.0;
        ctx.history = std::span<const PeriodTelemetry>(history.data(), i);
        const SemanticTokenSet tok = generate_semantic_tokens(ctx, sem, selector);
        e.text_ids[0].push_back(texts->intern(tok.task.text));
        e.text_ids[1].push_back(texts->intern(tok.history.text));
        e.text_ids[2].push_back(texts->intern(tok.strategy.text));
      }
    }
    out.trajectories.push_back(std::move(e));
  }
  return out;
}

ModelConfig model_config_for(ModelConfig base, const NormalizationStats& stats) {
  base.action_mean = stats.action_mean;
  base.action_std = stats.action_std > 0.0 ? stats.action_std : 1.0;
  return base;
}

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("steps must be nonnegative");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  optimizer.validate();
  if (!(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0)) throw ConfigError("min_lr_ratio must lie in [0, 1]");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be nonnegative");
}

void save_model(const SemBidModel<float>& model, const AdamW<float>* optimizer,
                const std::filesystem::path& path, const nlohmann::json& extra) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const Checkpoint ckpt = capture_checkpoint(model.params(), optimizer);
  save_checkpoint(ckpt, path);
  nlohmann::json side = {{"format", "sembid-checkpoint"},
                         {"version", 1},
                         {"step", ckpt.step},
                         {"checksum", fmt::format("{:016x}", ckpt.checksum())},
                         {"parameters", model.parameter_count()},
                         {"model", model.config().to_json()}};
  if (!extra.is_null()) side["extra"] = extra;
  std::ofstream f(path.string() + ".json");
  if (!f) throw ConfigError("cannot write " + path.string() + ".json");
  f << side.dump(2) << '\n';
}

SemBidModel<float> load_model(const std::filesystem::path& path) {
  const std::string side_path = path.string() + ".json";
  std::ifstream f(side_path);
  if (!f) throw ConfigError("missing checkpoint sidecar " + side_path);
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw DataIntegrityError("malformed checkpoint sidecar " + side_path + ": " + e.what());
  }
  if (side.value("format", "") != "sembid-checkpoint") {
    throw DataIntegrityError(side_path + " is not a checkpoint sidecar");
  }
  SemBidModel<float> model(ModelConfig::from_json(side.at("model")), 0);
  restore_checkpoint<float>(load_checkpoint(path), model.params(), nullptr);
  return model;
}

TrainResult train_model(SemBidModel<float>& model, const EncodedDataset& data, TextTable* texts,
                        const TrainConfig& cfg, const Checkpoint* resume) {
  cfg.validate();
  if (data.trajectories.empty()) throw ConfigError("training dataset is empty");
  const ModelConfig& mc = model.config();
  AdamW<float> opt(model.params(), cfg.optimizer);
  if (resume) restore_checkpoint<float>(*resume, model.params(), &opt);

  const int T = data.n_periods;
  const int L = std::min(mc.context_window, T);
  const std::uint64_t batch_root = derive_seed(cfg.seed, "batches");
  const std::uint64_t dropout_root = derive_seed(cfg.seed, "dropout");
  const double base_lr = cfg.optimizer.lr;

  std::ofstream loss_csv;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    const auto path = cfg.out_dir / "loss.csv";
    const bool append = resume != nullptr && std::filesystem::exists(path);
    loss_csv.open(path, append ? std::ios::app : std::ios::trunc);
    if (!loss_csv) throw ConfigError("cannot write " + path.string());
    if (!append) loss_csv << "step,loss,wall_clock_s\n";
  }

  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<const EncodedTrajectory*> picks;
  std::vector<int> starts;
  while (opt.steps() < cfg.steps) {
    const std::int64_t step = opt.steps();
    Rng batch_rng(derive_seed(batch_root, static_cast<std::uint64_t>(step)));
    picks.clear();
    starts.clear();
    if (cfg.mode == BatchMode::kFullPass) {
      for (const auto& tr : data.trajectories) {
        picks.push_back(&tr);
        starts.push_back(0);
      }
    } else {
      for (int b = 0; b < cfg.batch_size; ++b) {
        const auto& tr = data.trajectories[batch_rng.index(data.trajectories.size())];
        picks.push_back(&tr);
        const int span = std::max(tr.length() - L, 0);
        starts.push_back(static_cast<int>(batch_rng.index(static_cast<std::size_t>(span) + 1)));
      }
    }
    const ModelBatch<float> mb = assemble_batch<float>(picks, starts, L, mc, texts);
    double msum = 0.0;
    for (float m : mb.mask) msum += m;
    if (msum == 0.0) {
      std::cerr << "warning: skipping all-masked batch at step " << step << '\n';
      ++result.skipped_batches;
      opt.set_steps(step + 1);
      continue;
    }

    if (cfg.cosine_decay && cfg.steps > 0) {
      const double frac = static_cast<double>(step) / static_cast<double>(cfg.steps);
      const double floor = cfg.min_lr_ratio * base_lr;
      opt.set_lr(floor + (base_lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac)));
    }
    model.params().zero_grad();
    Rng dropout_rng(derive_seed(dropout_root, static_cast<std::uint64_t>(step)));
    const Tensor<float> pred = model.forward(mb, true, &dropout_rng);
    Tensor<float> loss = mse_loss(pred, std::span<const float>(mb.targets), std::span<const float>(mb.mask));
    const double value = loss.item();
    if (!std::isfinite(value)) throw StateError(fmt::format("non-finite loss at step {}", step + 1));
    loss.backward();
    opt.step();

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.curve.push_back({opt.steps(), value, secs});
    result.final_loss = value;
    if (loss_csv.is_open()) loss_csv << fmt::format("{},{:.9g},{:.3f}\n", opt.steps(), value, secs);
    if (cfg.checkpoint_every > 0 && !cfg.out_dir.empty() && opt.steps() % cfg.checkpoint_every == 0) {
      save_model(model, &opt, cfg.out_dir / "checkpoints" / fmt::format("step_{:06d}.sbck", opt.steps()),
                 with_extra(cfg.sidecar_extra, {{"loss", value}}));
    }
    if (cfg.stop_below > 0.0 && value < cfg.stop_below) {
      result.stopped_early = true;
      break;
    }
  }
  result.steps_done = opt.steps();
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.checksum = capture_checkpoint(model.params(), &opt).checksum();
  if (!cfg.out_dir.empty()) {
    save_model(model, &opt, cfg.out_dir / "model.sbck",
               with_extra(cfg.sidecar_extra, {{"final_loss", result.final_loss},
                                              {"skipped_batches", result.skipped_batches}}));
  }
  return result;
}

}  // namespace sembid
