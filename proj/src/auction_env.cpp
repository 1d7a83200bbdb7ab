#include "sembid/auction_env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sembid/errors.hpp"

namespace sembid {

namespace {

// Mean-one correction for a log-mean modulated by amp * cos(theta) with theta
// uniform over the cycle: E[exp(amp cos theta)] = I0(amp).
double cycle_mean_correction(double amp) {
  return amp == 0.0 ? 0.0 : std::log(std::cyl_bessel_i(0.0, amp));
}

double episode_phase(const MarketConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "episode-phase"));
  return 2.0 * std::numbers::pi * rng.uniform();
}

}  // namespace

Scenario parse_scenario(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "high") return Scenario::kHigh;
  if (lower == "medium") return Scenario::kMedium;
  if (lower == "low") return Scenario::kLow;
  throw ConfigError("unknown scenario preset '" + std::string(name) +
                    "' (expected high, medium or low)");
}

std::string_view scenario_name(Scenario scenario) {
  switch (scenario) {
    case Scenario::kHigh:
      return "high";
    case Scenario::kMedium:
      return "medium";
    case Scenario::kLow:
      return "low";
  }
  throw ConfigError("invalid scenario value");
}

MarketConfig MarketConfig::preset(Scenario scenario, std::uint64_t seed) {
  MarketConfig cfg;
  cfg.scenario = scenario;
  cfg.seed = seed;
  switch (scenario) {
    case Scenario::kHigh:
      cfg.impressions_per_period = 300;
      cfg.pvalue_mean = 0.1121;
      cfg.price_scale = 18.0;
      cfg.base_budget = 5000.0;
      cfg.cpa_min = 6.0;
      cfg.cpa_max = 12.0;
      cfg.target_cpa = 8.27;
      cfg.lambda_max = 145.47;
      break;
    case Scenario::kMedium:
      cfg.impressions_per_period = 500;
      cfg.pvalue_mean = 0.0385;
      cfg.price_scale = 65.0;
      cfg.base_budget = 7000.0;
      cfg.cpa_min = 15.0;
      cfg.cpa_max = 50.0;
      cfg.target_cpa = 32.5;
      cfg.lambda_max = 145.47;
      break;
    case Scenario::kLow:
      cfg.impressions_per_period = 150;
      cfg.pvalue_mean = 0.0145;
      cfg.price_scale = 190.0;
      cfg.base_budget = 4000.0;
      cfg.cpa_min = 60.0;
      cfg.cpa_max = 130.0;
      cfg.target_cpa = 95.0;
      cfg.lambda_max = 2960.53;
      break;
    default:
      throw ConfigError("invalid scenario value");
  }
  return cfg;
}

void MarketConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("market config: ") + what);
  };
  require(scenario == Scenario::kHigh || scenario == Scenario::kMedium ||
              scenario == Scenario::kLow,
          "invalid scenario preset");
  require(n_periods >= 1, "n_periods must be positive");
  require(impressions_per_period >= 1, "impressions_per_period must be positive");
  require(volume_amplitude >= 0.0 && volume_amplitude < 1.0,
          "volume_amplitude must be in [0, 1)");
  require(pvalue_mean > 0.0 && pvalue_mean < 1.0, "pvalue_mean must be in (0, 1)");
  require(pvalue_log_sigma >= 0.0 && pvalue_amplitude >= 0.0,
          "pvalue spread parameters must be nonnegative");
  require(price_scale > 0.0 && price_log_sigma >= 0.0, "invalid price parameters");
  require(price_pvalue_mix >= 0.0 && price_pvalue_mix <= 1.0,
          "price_pvalue_mix must be in [0, 1]");
  require(base_budget >= 0.0, "base_budget must be nonnegative");
  require(target_cpa > 0.0, "target_cpa must be positive");
  require(cpa_min > 0.0 && cpa_min <= cpa_max, "invalid CPA range");
  require(std::find(kBudgetScales.begin(), kBudgetScales.end(), budget_scale) !=
              kBudgetScales.end(),
          "budget_scale must be one of 0.5, 0.75, 1.0, 1.25, 1.5");
  require(lambda_max > 0.0, "lambda_max must be positive");
  require(epsilon > 0.0, "epsilon must be positive");
  require(beta == 2.0, "beta must be 2");
}

double ImpressionBatch::mean_pvalue() const {
  if (items.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& item : items) sum += item.pvalue;
  return sum / static_cast<double>(items.size());
}

double EpisodeLedger::total_spend() const {
  double sum = 0.0;
  for (const auto& o : outcomes) sum += o.spend;
  return sum;
}

double EpisodeLedger::total_value() const {
  double sum = 0.0;
  for (const auto& o : outcomes) sum += o.value;
  return sum;
}

double EpisodeLedger::total_conversions() const {
  double sum = 0.0;
  for (const auto& o : outcomes) sum += o.conversions;
  return sum;
}

int EpisodeLedger::total_wins() const {
  int sum = 0;
  for (const auto& o : outcomes) sum += o.wins;
  return sum;
}

ImpressionBatch sample_impressions(const MarketConfig& cfg, int t) {
  cfg.validate();
  if (t < 1 || t > cfg.n_periods) {
    throw DomainError("period index out of range");
  }
  const double phase = cfg.stationary ? 0.0 : episode_phase(cfg);
  const double theta =
      2.0 * std::numbers::pi * static_cast<double>(t - 1) / cfg.n_periods + phase;
  const double vol_amp = cfg.stationary ? 0.0 : cfg.volume_amplitude;
  const double pv_amp = cfg.stationary ? 0.0 : cfg.pvalue_amplitude;

  const int n = std::max(
      1, static_cast<int>(std::lround(cfg.impressions_per_period *
                                      (1.0 + vol_amp * std::sin(theta)))));
  const double sigma = cfg.pvalue_log_sigma;
  const double log_mean = std::log(cfg.pvalue_mean) - 0.5 * sigma * sigma +
                          pv_amp * std::cos(theta) - cycle_mean_correction(pv_amp);
  const double price_sigma = cfg.price_log_sigma;

  Rng rng(derive_seed(derive_seed(cfg.seed, "impressions"),
                      static_cast<std::uint64_t>(t)));
  ImpressionBatch batch;
  batch.period = t;
  batch.items.resize(static_cast<std::size_t>(n));
  for (auto& item : batch.items) {
    item.pvalue = std::clamp(std::exp(log_mean + sigma * rng.normal()), 0.0, 1.0);
    const double base = cfg.price_pvalue_mix * item.pvalue +
                        (1.0 - cfg.price_pvalue_mix) * cfg.pvalue_mean;
    item.competitor_price =
        cfg.price_scale * base *
        std::exp(price_sigma * rng.normal() - 0.5 * price_sigma * price_sigma);
    item.conversion_draw = rng.uniform();
  }
  return batch;
}

PeriodOutcome run_auction(const ImpressionBatch& batch, double lambda,
                          double budget_remaining, double lambda_max) {
  if (!(lambda >= 0.0 && lambda <= lambda_max)) {
    throw DomainError("bid multiplier outside [0, lambda_max]");
  }
  if (!(budget_remaining >= 0.0)) {
    throw DomainError("remaining budget must be nonnegative");
  }
  PeriodOutcome out;
  out.items = static_cast<int>(batch.items.size());
  for (const auto& item : batch.items) {
    const double bid = lambda * item.pvalue;
    if (!(bid > item.competitor_price)) continue;
    if (out.spend + item.competitor_price > budget_remaining) {
      ++out.bids_dropped_for_budget;
      continue;
    }
    ++out.wins;
    out.spend += item.competitor_price;
    out.value += item.pvalue;
    if (item.conversion_draw < item.pvalue) out.conversions += 1.0;
  }
  return out;
}

std::array<double, kStateDim> compute_state_features(const EpisodeLedger& ledger,
                                                     const MarketConfig& cfg,
                                                     int t) {
  const int T = cfg.n_periods;
  if (t < 1 || t > T + 1) throw DomainError("feature period out of range");
  const int k = t - 1;  // completed periods
  if (ledger.periods() < k) {
    throw DomainError("ledger shorter than requested period");
  }
  const double budget = ledger.budget;
  double spent = 0.0, conversions = 0.0, value = 0.0;
  int wins = 0;
  for (int i = 0; i < k; ++i) {
    const auto& o = ledger.outcomes[i];
    spent += o.spend;
    conversions += o.conversions;
    value += o.value;
    wins += o.wins;
  }
  const double budget_left = std::max(0.0, budget - spent);
  const double elapsed = static_cast<double>(k) / T;
  const double spent_fraction = budget > 0.0 ? spent / budget : 0.0;

  std::array<double, kStateDim> f{};
  f[0] = 1.0 - elapsed;
  f[1] = elapsed;
  f[2] = budget > 0.0 ? budget_left / budget : 0.0;
  f[3] = (k > 0 && budget > 0.0) ? ledger.outcomes[k - 1].spend / budget : 0.0;
  f[4] = spent_fraction - elapsed;
  if (k > 0) {
    const double burn = spent / k;
    const double projected = burn * (T - k);
    if (projected <= 0.0) {
      f[5] = 0.0;
    } else {
      f[5] = budget_left > 0.0 ? std::min(projected / budget_left, 10.0) : 10.0;
    }
  }
  const double current_cpa = spent / std::max(conversions, 1.0);
  f[6] = current_cpa;
  f[7] = ledger.target_cpa;
  f[8] = std::max(0.0, current_cpa / ledger.target_cpa - 1.0);
  f[9] = conversions / std::max(wins, 1);

  const int window = std::min(3, k);
  if (window > 0) {
    double bid_sum = 0.0, win_sum = 0.0, item_sum = 0.0, cost_sum = 0.0;
    for (int i = k - window; i < k; ++i) {
      bid_sum += ledger.actions[i];
      win_sum += ledger.outcomes[i].wins;
      item_sum += ledger.outcomes[i].items;
      cost_sum += ledger.outcomes[i].spend;
    }
    const double mean_bid = bid_sum / window;
    double var = 0.0;
    for (int i = k - window; i < k; ++i) {
      const double d = ledger.actions[i] - mean_bid;
      var += d * d;
    }
    f[10] = mean_bid;
    f[11] = item_sum > 0.0 ? win_sum / item_sum : 0.0;
    f[12] = cost_sum / std::max(win_sum, 1.0);
    f[13] = std::sqrt(var / window);
    f[14] = ledger.outcomes[k - 1].value;
  }
  f[15] = value;
  return f;
}

ScoreBreakdown compute_score(double value, double cost, double target_cpa,
                             double beta, double epsilon) {
  ScoreBreakdown s;
  s.value = value;
  s.cost = cost;
  s.cpa = cost / (value + epsilon);
  const double ratio = target_cpa / s.cpa;
  s.penalty = std::min(beta == 2.0 ? ratio * ratio : std::pow(ratio, beta), 1.0);
  s.score = value * s.penalty;
  return s;
}

ScoreBreakdown compute_score(const EpisodeLedger& ledger, double target_cpa) {
  return compute_score(ledger.total_conversions(), ledger.total_spend(),
                       target_cpa);
}

std::vector<double> compute_rtg(std::span<const double> rewards) {
  std::vector<double> rtg(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + acc;
    rtg[i] = acc;
  }
  return rtg;
}

AuctionEnv::AuctionEnv(const MarketConfig& cfg, bool terminate_on_exhaustion)
    : cfg_(cfg), terminate_on_exhaustion_(terminate_on_exhaustion) {
  cfg_.validate();
  ledger_.budget = cfg_.budget();
  ledger_.target_cpa = cfg_.target_cpa;
  budget_left_ = ledger_.budget;
  batch_ = sample_impressions(cfg_, 1);
  refresh_state();
}

StepResult AuctionEnv::step(double lambda) {
  if (done_) throw StateError("step() called on a finished episode");
  const double remaining = std::max(0.0, ledger_.budget - ledger_.total_spend());
  PeriodOutcome outcome = run_auction(batch_, lambda, remaining, cfg_.lambda_max);
  ledger_.outcomes.push_back(outcome);
  ledger_.actions.push_back(lambda);
  ledger_.budget_remaining.push_back(remaining);
  ledger_.mean_pvalues.push_back(batch_.mean_pvalue());

  ++period_;
  budget_left_ = std::max(0.0, ledger_.budget - ledger_.total_spend());
  done_ = period_ > cfg_.n_periods ||
          (terminate_on_exhaustion_ && budget_left_ <= 0.0);
  if (!done_) {
    batch_ = sample_impressions(cfg_, period_);
  } else {
    batch_ = ImpressionBatch{period_, {}};
  }
  refresh_state();

  StepResult result;
  result.next = state_;
  result.reward = outcome.value;
  result.done = done_;
  result.outcome = outcome;
  return result;
}

void AuctionEnv::refresh_state() {
  state_.period = period_;
  state_.n_periods = cfg_.n_periods;
  state_.budget = ledger_.budget;
  state_.budget_left = budget_left_;
  state_.target_cpa = cfg_.target_cpa;
  state_.mean_pvalue = batch_.mean_pvalue();
  state_.features = compute_state_features(
      ledger_, cfg_, std::min(period_, cfg_.n_periods + 1));
}

}  // namespace sembid
