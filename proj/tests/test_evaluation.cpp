#include <cmath>
#include <map>

#include "doctest.h"
#include "fixtures.hpp"
#include "sembid/errors.hpp"
#include "sembid/evaluation.hpp"

using namespace sembid;

namespace {

// Records every action it is asked for; bids a constant.
class ConstantPolicy : public BiddingPolicy {
 public:
  explicit ConstantPolicy(double lambda) : lambda_(lambda) {}
  std::string name() const override { return "Const"; }
  void begin_episode(const AuctionEnv&, std::uint64_t) override {}
  double act(const AuctionEnv&) override { return lambda_; }

 private:
  double lambda_;
};

}  // namespace

TEST_CASE("PID evaluation needs no checkpoint and covers every rho") {
  PidPolicy pid;
  EvalConfig cfg;
  cfg.scenario = Scenario::kHigh;
  cfg.n_seeds = 2;
  const EvalReport r = evaluate({&pid}, cfg);
  CHECK(r.rows.size() == 10);
  REQUIRE(r.summary.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(r.summary[i].rho == kBudgetScales[i]);
  for (const EvalSummary& s : r.summary) {
    double sum = 0.0;
    int n = 0;
    for (const EvalRow& row : r.rows)
      if (row.rho == s.rho) {
        sum += row.score.score;
        ++n;
      }
    CHECK(s.n == n);
    CHECK(s.mean_score == doctest::Approx(sum / n).epsilon(1e-12));
    CHECK(s.relative_improvement == 0.0);
  }
  for (const EvalRow& row : r.rows) {
    CHECK(row.score.cost <= row.budget);
    CHECK(row.score.score <= row.score.value);
    CHECK(row.score.penalty <= 1.0);
  }
}

TEST_CASE("methods share market seeds and relative improvement is against the reference") {
  PidPolicy pid;
  ConstantPolicy c(5.0);
  EvalConfig cfg;
  cfg.n_seeds = 2;
  cfg.rhos = {1.0};
  const EvalReport r = evaluate({&pid, &c}, cfg);
  std::map<int, std::uint64_t> seeds;
  for (const EvalRow& row : r.rows) {
    if (row.method == "PID") seeds[row.seed_index] = row.market_seed;
  }
  for (const EvalRow& row : r.rows) CHECK(seeds.at(row.seed_index) == row.market_seed);
  const double ref = r.overall_mean("PID"), other = r.overall_mean("Const");
  CHECK(r.summary.back().relative_improvement == doctest::Approx((other - ref) / std::abs(ref)));
  CHECK(r.rows_csv().find("method") == 0);
  CHECK(r.to_json().at("rows").size() == 4);

  EvalConfig bad = cfg;
  bad.rhos = {0.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("transformer rollouts clip actions and keep a non-increasing RTG") {
  const auto e = fixture::encoded(Scenario::kHigh, 3, 4);
  ModelConfig mc = fixture::tiny_config(e.data.stats);
  mc.context_window = 8;
  auto model = std::make_shared<SemBidModel<float>>(mc, 1);
  SemanticConfig sem = SemanticConfig::for_scenario(Scenario::kHigh);
  TransformerPolicy policy(model, e.data.stats, sem, e.texts, "SemBid");
  const MarketConfig m = MarketConfig::preset(Scenario::kHigh, 77);

  AuctionEnv env(m);
  policy.begin_episode(env, 5);
  while (!env.done()) {
    const double a = policy.act(env);
    CHECK(a >= 0.0);
    CHECK(a <= m.lambda_max);
    env.step(a);
  }
  const auto& g = policy.rtg_history();
  REQUIRE(g.size() == 48);
  CHECK(g.front() == doctest::Approx(e.data.stats.max_return));
  for (std::size_t t = 0; t + 1 < g.size(); ++t) CHECK(g[t + 1] <= g[t]);
  for (double v : g) CHECK(v >= 0.0);
  CHECK(policy.context().length() == 48);

  const EpisodeLedger a = run_episode(policy, m, 5);
  const EpisodeLedger b = run_episode(policy, m, 5);
  CHECK(a.actions == b.actions);
  CHECK(a.total_spend() == b.total_spend());
}
