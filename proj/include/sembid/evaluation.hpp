#ifndef SEMBID_EVALUATION_HPP_
#define SEMBID_EVALUATION_HPP_

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "sembid/auction_env.hpp"
#include "sembid/baselines.hpp"
#include "sembid/dataset.hpp"
#include "sembid/pid.hpp"
#include "sembid/sembid_model.hpp"
#include "sembid/semantic_signals.hpp"

namespace sembid {

class BiddingPolicy {
 public:
  virtual ~BiddingPolicy() = default;
  virtual std::string name() const = 0;
  virtual void begin_episode(const AuctionEnv& env, std::uint64_t episode_seed) = 0;
  // Bid multiplier for the env's current period, within [0, lambda_max].
  virtual double act(const AuctionEnv& env) = 0;
};

class PidPolicy : public BiddingPolicy {
 public:
  // Without a config the gains come from PidConfig::for_market per episode.
  explicit PidPolicy(std::string name = "PID", std::optional<PidConfig> cfg = std::nullopt);
  std::string name() const override { return name_; }
  void begin_episode(const AuctionEnv& env, std::uint64_t episode_seed) override;
  double act(const AuctionEnv& env) override;

 private:
  std::string name_;
  std::optional<PidConfig> fixed_;
  std::unique_ptr<PidController> ctl_;
};

class BcBiddingPolicy : public BiddingPolicy {
 public:
  BcBiddingPolicy(std::shared_ptr<const BcPolicy> bc, std::string name = "BC");
  std::string name() const override { return name_; }
  void begin_episode(const AuctionEnv&, std::uint64_t) override {}
  double act(const AuctionEnv& env) override;

 private:
  std::shared_ptr<const BcPolicy> bc_;
  std::string name_;
};

// Autoregressive rollout of a SemBid or vanilla-DT model. The episode starts
// conditioned on target_rtg_scale * max dataset return; the RTG drops by each
// realized reward (floored at 0). Semantic texts are regenerated from live
// telemetry every period; the context keeps the most recent K steps.
class TransformerPolicy : public BiddingPolicy {
 public:
  TransformerPolicy(std::shared_ptr<const SemBidModel<float>> model, NormalizationStats stats,
                    SemanticConfig semantics, std::shared_ptr<TextTable> texts,
                    std::string name, double target_rtg_scale = 1.0);
  std::string name() const override { return name_; }
  void begin_episode(const AuctionEnv& env, std::uint64_t episode_seed) override;
  double act(const AuctionEnv& env) override;

  // Conditioning RTG (raw units) used at each period so far.
  const std::vector<double>& rtg_history() const { return rtg_history_; }
  const EncodedTrajectory& context() const { return ctx_; }

 private:
  std::shared_ptr<const SemBidModel<float>> model_;
  NormalizationStats stats_;
  SemanticConfig semantics_;
  std::shared_ptr<TextTable> texts_;
  std::string name_;
  double target_rtg_scale_;
  EncodedTrajectory ctx_;
  std::vector<double> rtg_history_;
  std::unique_ptr<Rng> template_rng_;
  std::unique_ptr<VariantSelector> selector_;
};

EpisodeLedger run_episode(BiddingPolicy& policy, const MarketConfig& market,
                          std::uint64_t episode_seed);

struct EvalConfig {
  Scenario scenario = Scenario::kHigh;
  std::vector<double> rhos{kBudgetScales.begin(), kBudgetScales.end()};
  int n_seeds = 5;
  std::uint64_t seed = 0;  // root of the per-seed market streams
  bool stationary = false;
  std::string reference = "PID";  // method the improvement columns compare against

  void validate() const;
};

struct EvalRow {
  std::string method;
  double rho = 1.0;
  int seed_index = 0;
  std::uint64_t market_seed = 0;
  ScoreBreakdown score;
  double budget = 0.0;
};

struct EvalSummary {
  std::string method;
  double rho = 1.0;
  int n = 0;
  double mean_score = 0.0;
  double mean_cpa = 0.0;
  double mean_spend_ratio = 0.0;
  double relative_improvement = 0.0;  // (mean - reference mean) / |reference mean|
};

struct EvalReport {
  Scenario scenario = Scenario::kHigh;
  std::string reference;
  std::vector<EvalRow> rows;
  std::vector<EvalSummary> summary;  // one per (method, rho), method order preserved
  std::vector<std::string> methods;

  // Mean over every rho and seed for one method.
  double overall_mean(const std::string& method) const;
  std::string rows_csv() const;
  std::string summary_csv() const;
  nlohmann::json to_json() const;
};

// Every method plays the same market seeds at every rho.
EvalReport evaluate(const std::vector<BiddingPolicy*>& policies, const EvalConfig& cfg);

// Fills summary rows and improvement columns from the per-seed rows.
void summarize(EvalReport& report);

}  // namespace sembid

#endif  // SEMBID_EVALUATION_HPP_
