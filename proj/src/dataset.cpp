#include "sembid/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "sembid/binary_io.hpp"
#include "sembid/errors.hpp"
#include "sembid/pid.hpp"

namespace sembid {

namespace {

constexpr std::uint32_t kDatasetVersion = 1;

struct ColumnRef {
  const char* name;
  std::uint32_t width;
};

constexpr ColumnRef kColumns[] = {
    {"state", kStateDim},   {"action", 1}, {"reward", 1},      {"rtg", 1},
    {"mask", 1},            {"conversions", 1}, {"spend", 1},  {"wins", 1},
    {"items", 1},           {"mean_pvalue", 1}, {"budget_left", 1},
};

std::vector<float>* scalar_column(Trajectory& tr, std::string_view name) {
  if (name == "action") return &tr.actions;
  if (name == "reward") return &tr.rewards;
  if (name == "rtg") return &tr.rtg;
  if (name == "mask") return &tr.mask;
  if (name == "conversions") return &tr.conversions;
  if (name == "spend") return &tr.spend;
  if (name == "wins") return &tr.wins;
  if (name == "items") return &tr.items;
  if (name == "mean_pvalue") return &tr.mean_pvalue;
  if (name == "budget_left") return &tr.budget_left;
  return nullptr;
}

const std::vector<float>& scalar_column(const Trajectory& tr, std::string_view name) {
  return *scalar_column(const_cast<Trajectory&>(tr), name);
}

double round_to_cents(double x) { return std::round(x * 100.0) / 100.0; }

}  // namespace

std::array<float, kStateDim> NormalizationStats::normalize(
    const std::array<float, kStateDim>& s) const {
  std::array<float, kStateDim> out{};
  for (int i = 0; i < kStateDim; ++i) {
    out[i] = static_cast<float>((s[i] - state_mean[i]) / state_std[i]);
  }
  return out;
}

std::array<float, kStateDim> NormalizationStats::normalize(
    const std::array<double, kStateDim>& s) const {
  std::array<float, kStateDim> out{};
  for (int i = 0; i < kStateDim; ++i) {
    out[i] = static_cast<float>((static_cast<double>(static_cast<float>(s[i])) -
                                 state_mean[i]) /
                                state_std[i]);
  }
  return out;
}

Trajectory collect_trajectory(const MarketConfig& market, BehaviorPolicy policy,
                              const BehaviorMix& mix, std::uint64_t policy_seed) {
  AuctionEnv env(market);
  Rng rng(policy_seed);
  Trajectory tr;
  tr.seed = market.seed;
  tr.target_cpa = static_cast<float>(market.target_cpa);
  tr.budget = static_cast<float>(market.budget());
  tr.policy = static_cast<int>(policy);

  PidConfig pid_cfg = PidConfig::for_market(market);
  // Each logged PID agent has its own gains and pacing aggressiveness.
  const double gain_scale = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
  pid_cfg.kp *= gain_scale;
  pid_cfg.ki *= gain_scale;
  const double pace = rng.uniform(0.8, 1.3);
  pid_cfg.spend_schedule.resize(static_cast<std::size_t>(market.n_periods));
  for (int t = 1; t <= market.n_periods; ++t) {
    pid_cfg.spend_schedule[t - 1] =
        pace * static_cast<double>(t) / market.n_periods;
  }
  PidController pid(pid_cfg);
  double base = market.target_cpa * rng.uniform(mix.random_low, mix.random_high);

  while (!env.done()) {
    const CampaignState state = env.state();
    double lambda = 0.0;
    if (policy == BehaviorPolicy::kNoisyPid) {
      lambda = pid.act(env) * std::exp(mix.pid_noise_sigma * rng.normal());
    } else {
      if (rng.bernoulli(mix.random_switch_prob)) {
        base = market.target_cpa * rng.uniform(mix.random_low, mix.random_high);
      }
      lambda = base * std::exp(mix.random_jitter_sigma * rng.normal());
    }
    lambda = std::clamp(lambda, 0.0, market.lambda_max);

    std::array<float, kStateDim> s{};
    for (int i = 0; i < kStateDim; ++i) s[i] = static_cast<float>(state.features[i]);
    tr.states.push_back(s);
    tr.mean_pvalue.push_back(static_cast<float>(state.mean_pvalue));
    tr.budget_left.push_back(static_cast<float>(state.budget_left));

    const StepResult step = env.step(lambda);
    tr.actions.push_back(static_cast<float>(lambda));
    tr.rewards.push_back(static_cast<float>(step.reward));
    tr.mask.push_back(1.0f);
    tr.conversions.push_back(static_cast<float>(step.outcome.conversions));
    tr.spend.push_back(static_cast<float>(step.outcome.spend));
    tr.wins.push_back(static_cast<float>(step.outcome.wins));
    tr.items.push_back(static_cast<float>(step.outcome.items));
  }
  std::vector<double> rewards(tr.rewards.begin(), tr.rewards.end());
  const std::vector<double> rtg = compute_rtg(rewards);
  tr.rtg.resize(rtg.size());
  for (std::size_t i = 0; i < rtg.size(); ++i) tr.rtg[i] = static_cast<float>(rtg[i]);
  return tr;
}

NormalizationStats compute_normalization(const std::vector<Trajectory>& trajectories) {
  NormalizationStats stats;
  double count = 0.0;
  std::array<double, kStateDim> sum{}, sq{};
  double a_sum = 0.0, a_sq = 0.0;
  for (const auto& tr : trajectories) {
    if (!tr.rtg.empty()) stats.max_return = std::max(stats.max_return, double(tr.rtg[0]));
    for (int t = 0; t < tr.length(); ++t) {
      if (tr.mask[t] == 0.0f) continue;
      count += 1.0;
      for (int i = 0; i < kStateDim; ++i) sum[i] += tr.states[t][i];
      a_sum += tr.actions[t];
    }
  }
  if (count == 0.0) {
    stats.state_std.fill(1.0);
    return stats;
  }
  for (int i = 0; i < kStateDim; ++i) stats.state_mean[i] = sum[i] / count;
  stats.action_mean = a_sum / count;
  for (const auto& tr : trajectories) {
    for (int t = 0; t < tr.length(); ++t) {
      if (tr.mask[t] == 0.0f) continue;
      for (int i = 0; i < kStateDim; ++i) {
        const double d = tr.states[t][i] - stats.state_mean[i];
        sq[i] += d * d;
      }
      const double da = tr.actions[t] - stats.action_mean;
      a_sq += da * da;
    }
  }
  for (int i = 0; i < kStateDim; ++i) {
    const double sd = std::sqrt(sq[i] / count);
    stats.state_std[i] = sd > 1e-8 ? sd : 1.0;
  }
  const double asd = std::sqrt(a_sq / count);
  stats.action_std = asd > 1e-8 ? asd : 1.0;
  stats.rtg_scale = stats.max_return > 1e-8 ? stats.max_return : 1.0;
  return stats;
}

Dataset generate_offline_dataset(const MarketConfig& cfg, const BehaviorMix& mix,
                                 int n_trajectories, std::uint64_t seed) {
  cfg.validate();
  if (n_trajectories < 1) throw ConfigError("n_trajectories must be >= 1");
  const double total_weight = mix.noisy_pid_weight + mix.random_multiplier_weight;
  if (!(total_weight > 0.0) || mix.noisy_pid_weight < 0.0 ||
      mix.random_multiplier_weight < 0.0) {
    throw ConfigError("behavior mix weights must be nonnegative and not all zero");
  }
  Dataset ds;
  ds.market = cfg;
  ds.mix = mix;
  ds.seed = seed;
  ds.trajectories.reserve(static_cast<std::size_t>(n_trajectories));
  for (int i = 0; i < n_trajectories; ++i) {
    const std::uint64_t traj_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    Rng rng(derive_seed(traj_seed, "episode-setup"));
    MarketConfig market = cfg;
    market.seed = derive_seed(traj_seed, "market");
    if (mix.sample_target_cpa) {
      market.target_cpa = round_to_cents(rng.uniform(cfg.cpa_min, cfg.cpa_max));
    }
    const BehaviorPolicy policy = rng.uniform() * total_weight < mix.noisy_pid_weight
                                      ? BehaviorPolicy::kNoisyPid
                                      : BehaviorPolicy::kRandomMultiplier;
    ds.trajectories.push_back(
        collect_trajectory(market, policy, mix, derive_seed(traj_seed, "policy")));
  }
  ds.stats = compute_normalization(ds.trajectories);
  return ds;
}

nlohmann::json market_to_json(const MarketConfig& c) {
  return {
      {"scenario", std::string(scenario_name(c.scenario))},
      {"n_periods", c.n_periods},
      {"impressions_per_period", c.impressions_per_period},
      {"volume_amplitude", c.volume_amplitude},
      {"pvalue_mean", c.pvalue_mean},
      {"pvalue_log_sigma", c.pvalue_log_sigma},
      {"pvalue_amplitude", c.pvalue_amplitude},
      {"price_scale", c.price_scale},
      {"price_pvalue_mix", c.price_pvalue_mix},
      {"price_log_sigma", c.price_log_sigma},
      {"base_budget", c.base_budget},
      {"target_cpa", c.target_cpa},
      {"cpa_min", c.cpa_min},
      {"cpa_max", c.cpa_max},
      {"budget_scale", c.budget_scale},
      {"lambda_max", c.lambda_max},
      {"epsilon", c.epsilon},
      {"beta", c.beta},
      {"conversion_weight", c.conversion_weight},
      {"stationary", c.stationary},
      {"seed", c.seed},
  };
}

MarketConfig market_from_json(const nlohmann::json& j) {
  try {
    MarketConfig c;
    c.scenario = parse_scenario(j.at("scenario").get<std::string>());
    c.n_periods = j.at("n_periods").get<int>();
    c.impressions_per_period = j.at("impressions_per_period").get<int>();
    c.volume_amplitude = j.at("volume_amplitude").get<double>();
    c.pvalue_mean = j.at("pvalue_mean").get<double>();
    c.pvalue_log_sigma = j.at("pvalue_log_sigma").get<double>();
    c.pvalue_amplitude = j.at("pvalue_amplitude").get<double>();
    c.price_scale = j.at("price_scale").get<double>();
    c.price_pvalue_mix = j.at("price_pvalue_mix").get<double>();
    c.price_log_sigma = j.at("price_log_sigma").get<double>();
    c.base_budget = j.at("base_budget").get<double>();
    c.target_cpa = j.at("target_cpa").get<double>();
    c.cpa_min = j.at("cpa_min").get<double>();
    c.cpa_max = j.at("cpa_max").get<double>();
    c.budget_scale = j.at("budget_scale").get<double>();
    c.lambda_max = j.at("lambda_max").get<double>();
    c.epsilon = j.at("epsilon").get<double>();
    c.beta = j.at("beta").get<double>();
    c.conversion_weight = j.at("conversion_weight").get<double>();
    c.stationary = j.at("stationary").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataIntegrityError(std::string("market config sidecar: ") + e.what());
  }
}

nlohmann::json stats_to_json(const NormalizationStats& s) {
  return {
      {"state_mean", s.state_mean}, {"state_std", s.state_std},
      {"action_mean", s.action_mean}, {"action_std", s.action_std},
      {"rtg_scale", s.rtg_scale},   {"max_return", s.max_return},
  };
}

NormalizationStats stats_from_json(const nlohmann::json& j) {
  try {
    NormalizationStats s;
    s.state_mean = j.at("state_mean").get<std::array<double, kStateDim>>();
    s.state_std = j.at("state_std").get<std::array<double, kStateDim>>();
    s.action_mean = j.at("action_mean").get<double>();
    s.action_std = j.at("action_std").get<double>();
    s.rtg_scale = j.at("rtg_scale").get<double>();
    s.max_return = j.at("max_return").get<double>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataIntegrityError(std::string("normalization stats: ") + e.what());
  }
}

void save_dataset_binary(const Dataset& ds, const std::filesystem::path& path) {
  const int T = ds.n_periods();
  for (const auto& tr : ds.trajectories) {
    if (tr.length() != T) throw DataIntegrityError("trajectory length differs from n_periods");
  }
  ByteWriter w;
  w.bytes("SBDS");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.trajectories.size()));
  w.u32(static_cast<std::uint32_t>(T));
  w.u32(kStateDim);
  w.u32(static_cast<std::uint32_t>(std::size(kColumns)));
  for (const auto& tr : ds.trajectories) {
    w.u64(tr.seed);
    w.f32(tr.target_cpa);
    w.f32(tr.budget);
    w.i32(tr.policy);
  }
  for (const auto& col : kColumns) {
    const std::string_view name = col.name;
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u32(col.width);
    for (const auto& tr : ds.trajectories) {
      if (name == "state") {
        for (const auto& s : tr.states)
          for (float v : s) w.f32(v);
      } else {
        for (float v : scalar_column(tr, name)) w.f32(v);
      }
    }
  }
  w.write_file(path);
}

void save_dataset_sidecar(const Dataset& ds, const std::filesystem::path& path) {
  nlohmann::json j = {
      {"format", "sembid-dataset"},
      {"version", kDatasetVersion},
      {"seed", ds.seed},
      {"n_trajectories", ds.trajectories.size()},
      {"market", market_to_json(ds.market)},
      {"behavior_mix",
       {{"noisy_pid_weight", ds.mix.noisy_pid_weight},
        {"random_multiplier_weight", ds.mix.random_multiplier_weight},
        {"pid_noise_sigma", ds.mix.pid_noise_sigma},
        {"random_low", ds.mix.random_low},
        {"random_high", ds.mix.random_high},
        {"random_jitter_sigma", ds.mix.random_jitter_sigma},
        {"random_switch_prob", ds.mix.random_switch_prob},
        {"sample_target_cpa", ds.mix.sample_target_cpa}}},
      {"normalization", stats_to_json(ds.stats)},
  };
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

void save_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "trajectory,t";
  for (int i = 0; i < kStateDim; ++i) out << ",state_" << i;
  out << ",action,reward,rtg,mask,conversions,spend,wins,items,mean_pvalue,budget_left\n";
  for (std::size_t k = 0; k < ds.trajectories.size(); ++k) {
    const auto& tr = ds.trajectories[k];
    for (int t = 0; t < tr.length(); ++t) {
      out << k << ',' << (t + 1);
      for (float v : tr.states[t]) out << ',' << fmt::format("{}", v);
      for (const auto* name : {"action", "reward", "rtg", "mask", "conversions", "spend",
                               "wins", "items", "mean_pvalue", "budget_left"}) {
        out << ',' << fmt::format("{}", scalar_column(tr, name)[t]);
      }
      out << '\n';
    }
  }
}

Dataset load_dataset(const std::filesystem::path& binary_path,
                     const std::filesystem::path& sidecar_path) {
  Dataset ds;
  {
    std::ifstream in(sidecar_path);
    if (!in) throw std::runtime_error("cannot open dataset sidecar: " + sidecar_path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataIntegrityError(std::string("dataset sidecar is not valid JSON: ") + e.what());
    }
    if (j.value("format", "") != "sembid-dataset" ||
        j.value("version", 0u) != kDatasetVersion) {
      throw DataIntegrityError("dataset sidecar has unexpected format/version");
    }
    ds.market = market_from_json(j.at("market"));
    ds.seed = j.at("seed").get<std::uint64_t>();
    const auto& m = j.at("behavior_mix");
    ds.mix.noisy_pid_weight = m.at("noisy_pid_weight").get<double>();
    ds.mix.random_multiplier_weight = m.at("random_multiplier_weight").get<double>();
    ds.mix.pid_noise_sigma = m.at("pid_noise_sigma").get<double>();
    ds.mix.random_low = m.at("random_low").get<double>();
    ds.mix.random_high = m.at("random_high").get<double>();
    ds.mix.random_jitter_sigma = m.at("random_jitter_sigma").get<double>();
    ds.mix.random_switch_prob = m.at("random_switch_prob").get<double>();
    ds.mix.sample_target_cpa = m.at("sample_target_cpa").get<bool>();
    ds.stats = stats_from_json(j.at("normalization"));
    if (j.at("n_trajectories").get<std::size_t>() == 0) {
      throw DataIntegrityError("dataset sidecar lists zero trajectories");
    }
  }

  ByteReader r = ByteReader::from_file(binary_path);
  r.expect_magic("SBDS");
  if (r.u32() != kDatasetVersion) r.fail("unsupported dataset version");
  const std::uint32_t n = r.u32();
  const std::uint32_t T = r.u32();
  if (r.u32() != kStateDim) r.fail("state dimension mismatch");
  const std::uint32_t n_columns = r.u32();
  if (static_cast<int>(T) != ds.market.n_periods) {
    throw DataIntegrityError("dataset n_periods disagrees with sidecar");
  }
  ds.trajectories.resize(n);
  for (auto& tr : ds.trajectories) {
    tr.seed = r.u64();
    tr.target_cpa = r.f32();
    tr.budget = r.f32();
    tr.policy = r.i32();
  }
  std::size_t seen = 0;
  for (std::uint32_t c = 0; c < n_columns; ++c) {
    const std::string name = r.bytes(r.u16());
    const std::uint32_t width = r.u32();
    if (name == "state") {
      if (width != kStateDim) r.fail("state column width mismatch");
      for (auto& tr : ds.trajectories) {
        tr.states.resize(T);
        for (auto& s : tr.states)
          for (float& v : s) v = r.f32();
      }
      ++seen;
      continue;
    }
    if (width != 1) r.fail("scalar column '" + name + "' has width != 1");
    Trajectory probe;
    if (scalar_column(probe, name) == nullptr) {
      // Unknown columns are skipped so newer writers stay readable.
      r.bytes(static_cast<std::size_t>(n) * T * width * 4);
      continue;
    }
    for (auto& tr : ds.trajectories) {
      auto* col = scalar_column(tr, name);
      col->resize(T);
      for (float& v : *col) v = r.f32();
    }
    ++seen;
  }
  if (!r.at_end()) r.fail("trailing bytes after last column");
  if (seen != std::size(kColumns)) {
    throw DataIntegrityError("dataset is missing required columns");
  }
  return ds;
}

}  // namespace sembid
