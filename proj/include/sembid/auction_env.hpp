#ifndef SEMBID_AUCTION_ENV_HPP_
#define SEMBID_AUCTION_ENV_HPP_

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sembid/rng.hpp"

namespace sembid {

enum class Scenario { kHigh, kMedium, kLow };

Scenario parse_scenario(std::string_view name);
std::string_view scenario_name(Scenario scenario);

inline constexpr std::array<double, 5> kBudgetScales = {0.5, 0.75, 1.0, 1.25,
                                                        1.5};
inline constexpr int kStateDim = 16;

// Synthetic single-slot GSP market. Presets reproduce the three conversion
// regimes (dense/tight-CPA, typical, sparse) at desk scale.
struct MarketConfig {
  Scenario scenario = Scenario::kHigh;
  int n_periods = 48;

  // Impression volume per period; modulated by a daily cycle unless stationary.
  int impressions_per_period = 300;
  double volume_amplitude = 0.3;

  // pValue ~ LogNormal clipped to [0, 1]; pvalue_mean is the unclipped mean.
  double pvalue_mean = 0.1121;
  double pvalue_log_sigma = 0.9;
  double pvalue_amplitude = 0.5;

  // Highest competing bid: price_scale * (mix * v + (1 - mix) * pvalue_mean)
  // times a mean-one log-normal factor.
  double price_scale = 18.0;
  double price_pvalue_mix = 0.5;
  double price_log_sigma = 0.6;

  double base_budget = 5000.0;  // B0
  double target_cpa = 9.0;      // C_CPA
  double cpa_min = 6.0;         // preset CPA range the dataset samples from
  double cpa_max = 12.0;
  double budget_scale = 1.0;    // rho
  double lambda_max = 145.47;
  double epsilon = 1e-10;
  double beta = 2.0;
  double conversion_weight = 10.0;  // omega, consumed by semantic signals
  bool stationary = false;
  std::uint64_t seed = 0;

  double budget() const { return budget_scale * base_budget; }
  // Throws ConfigError on any violated invariant.
  void validate() const;

  static MarketConfig preset(Scenario scenario, std::uint64_t seed = 0);
};

struct Impression {
  double pvalue = 0.0;
  double competitor_price = 0.0;
  double conversion_draw = 0.0;
};

struct ImpressionBatch {
  int period = 1;  // 1-based
  std::vector<Impression> items;

  double mean_pvalue() const;
};

struct PeriodOutcome {
  double value = 0.0;        // r_t
  double conversions = 0.0;  // cv_t
  double spend = 0.0;        // sp_t
  int wins = 0;
  int bids_dropped_for_budget = 0;
  int items = 0;
};

struct ScoreBreakdown {
  double value = 0.0;  // V (conversions, one unit of value per conversion)
  double cost = 0.0;   // C
  double cpa = 0.0;
  double penalty = 0.0;
  double score = 0.0;
};

struct EpisodeLedger {
  double budget = 0.0;
  double target_cpa = 0.0;
  std::vector<PeriodOutcome> outcomes;
  std::vector<double> actions;           // lambda per period
  std::vector<double> budget_remaining;  // at the start of each period
  std::vector<double> mean_pvalues;      // of the batch offered each period

  double total_spend() const;
  double total_value() const;        // sum r_t
  double total_conversions() const;  // sum cv_t
  int total_wins() const;
  int periods() const { return static_cast<int>(outcomes.size()); }
};

// Raw campaign telemetry at the start of a period plus the 16-dim feature
// vector derived from it.
struct CampaignState {
  int period = 1;  // 1-based index of the period about to be bid on
  int n_periods = 48;
  double budget = 0.0;
  double budget_left = 0.0;
  double target_cpa = 0.0;
  double mean_pvalue = 0.0;  // of the upcoming batch
  std::array<double, kStateDim> features{};

  double budget_ratio() const { return budget > 0.0 ? budget_left / budget : 0.0; }
};

// Deterministic in (cfg.seed, t); t is 1-based.
ImpressionBatch sample_impressions(const MarketConfig& cfg, int t);

// Runs one GSP period. Items are processed in stored order; a win requires
// bid > price (ties lose) and price <= budget still available in the period.
PeriodOutcome run_auction(const ImpressionBatch& batch, double lambda,
                          double budget_remaining, double lambda_max);

// Feature layout (raw, before z-scoring):
//  0 time remaining ratio      1 time elapsed
//  2 budget remaining ratio    3 consumption rate (last period spend / B)
//  4 budget pacing (spent fraction - time elapsed)
//  5 exhaustion risk (projected spend at current burn / budget left, <= 10)
//  6 current CPA               7 target CPA
//  8 CPA violation degree      9 historical CVR
// 10 avg bid, last 3 periods  11 win rate, last 3 periods
// 12 avg cost per win, last 3 13 bid volatility (std of last 3 bids)
// 14 last period value        15 cumulative value
// History features average over the periods available and are 0 at t = 1.
std::array<double, kStateDim> compute_state_features(const EpisodeLedger& ledger,
                                                     const MarketConfig& cfg,
                                                     int t);

ScoreBreakdown compute_score(double value, double cost, double target_cpa,
                             double beta = 2.0, double epsilon = 1e-10);
ScoreBreakdown compute_score(const EpisodeLedger& ledger, double target_cpa);

std::vector<double> compute_rtg(std::span<const double> rewards);

struct StepResult {
  CampaignState next;
  double reward = 0.0;
  bool done = false;
  PeriodOutcome outcome;
};

class AuctionEnv {
 public:
  // With terminate_on_exhaustion the episode also ends once the remaining
  // budget reaches zero; otherwise it always runs for n_periods.
  explicit AuctionEnv(const MarketConfig& cfg,
                      bool terminate_on_exhaustion = false);

  const CampaignState& state() const { return state_; }
  const ImpressionBatch& current_batch() const { return batch_; }
  const EpisodeLedger& ledger() const { return ledger_; }
  const MarketConfig& config() const { return cfg_; }
  bool done() const { return done_; }

  StepResult step(double lambda);

 private:
  void refresh_state();

  MarketConfig cfg_;
  bool terminate_on_exhaustion_;
  EpisodeLedger ledger_;
  ImpressionBatch batch_;
  CampaignState state_;
  double budget_left_ = 0.0;
  int period_ = 1;
  bool done_ = false;
};

}  // namespace sembid

#endif  // SEMBID_AUCTION_ENV_HPP_
