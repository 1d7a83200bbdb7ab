#include <cmath>

#include "doctest.h"
#include "sembid/baselines.hpp"
#include "sembid/errors.hpp"
#include "sembid/pid.hpp"

using namespace sembid;

namespace {

PidConfig integral_only() {
  PidConfig c;
  c.ki = 2.0;
  c.lambda_max = 100.0;
  return c;
}

}  // namespace

TEST_CASE("zero error history gives zero bid") {
  const PidConfig c = PidConfig::for_market(MarketConfig::preset(Scenario::kHigh));
  CHECK(pid_step(c, {}, 0.5) == 0.0);
  const std::vector<double> zeros(10, 0.0);
  CHECK(pid_step(c, zeros, 0.5) == 0.0);
}

TEST_CASE("constant error grows the output linearly until the clamp") {
  const PidConfig c = integral_only();
  PidController pid(c);
  for (int n = 1; n <= 20; ++n) {
    const double lambda = pid.update(1.5, 0.5);
    CHECK(lambda == doctest::Approx(std::min(2.0 * 1.5 * n, 100.0)));
  }
  std::vector<double> errs(7, 1.5);
  CHECK(pid_step(c, errs, 0.5) == doctest::Approx(21.0));
}

TEST_CASE("gain schedule follows the budget ratio") {
  const PidConfig c = integral_only();
  const std::vector<double> e = {1.0};
  CHECK(pid_step(c, e, 0.8) == doctest::Approx(3.0));
  CHECK(pid_step(c, e, 0.5) == doctest::Approx(2.0));
  CHECK(pid_step(c, e, 0.1) == doctest::Approx(1.0));
}

TEST_CASE("integral is frozen while saturated") {
  PidConfig c = integral_only();
  c.kp = 1.0;
  PidController pid(c);
  double last = 0.0;
  for (int i = 0; i < 200; ++i) last = pid.update(10.0, 0.5);
  CHECK(last == 100.0);
  CHECK(pid.integral() <= 100.0 / 2.0);
  // Once the error reverses, the controller leaves the clamp immediately.
  const double after = pid.update(-10.0, 0.5);
  CHECK(after < 100.0);

  PidController neg(c);
  for (int i = 0; i < 50; ++i) CHECK(neg.update(-5.0, 0.5) == 0.0);
  CHECK(neg.integral() >= -5.0);
  CHECK(neg.update(5.0, 0.5) > 0.0);
}

TEST_CASE("PID output is always in range") {
  const MarketConfig m = MarketConfig::preset(Scenario::kMedium, 3);
  PidController pid(PidConfig::for_market(m));
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const double u = pid.update(rng.normal(0.0, 2.0), rng.uniform());
    CHECK(u >= 0.0);
    CHECK(u <= m.lambda_max);
  }
  PidConfig bad;
  bad.kp = std::nan("");
  CHECK_THROWS_AS(PidController{bad}, ConfigError);
}

TEST_CASE("PID paces a stationary market") {
  MarketConfig m = MarketConfig::preset(Scenario::kMedium, 11);
  m.stationary = true;
  AuctionEnv env(m);
  PidController pid(PidConfig::for_market(m));
  while (!env.done()) env.step(pid.act(env));
  CHECK(env.ledger().total_spend() / m.budget() == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("BC recovers a deterministic linear policy") {
  Rng rng(3);
  std::array<double, kStateDim> w{};
  for (double& x : w) x = rng.normal(0.0, 0.2);
  auto make = [&](int n, std::vector<std::array<float, kStateDim>>& s, std::vector<float>& a) {
    for (int i = 0; i < n; ++i) {
      std::array<float, kStateDim> x{};
      double y = 20.0;
      for (int d = 0; d < kStateDim; ++d) {
        x[d] = static_cast<float>(rng.uniform());
        y += w[d] * x[d];
      }
      s.push_back(x);
      a.push_back(static_cast<float>(y));
    }
  };
  std::vector<std::array<float, kStateDim>> train_s, test_s;
  std::vector<float> train_a, test_a;
  make(2000, train_s, train_a);
  make(500, test_s, test_a);
  BcConfig cfg;
  cfg.steps = 3000;
  cfg.optimizer.lr = 1e-3;
  cfg.optimizer.weight_decay = 0.0;
  cfg.seed = 5;
  BcPolicy bc(cfg);
  bc.fit(train_s, train_a);
  const std::vector<double> pred = bc.predict_batch(test_s);
  double mse = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) mse += (pred[i] - test_a[i]) * (pred[i] - test_a[i]);
  mse /= static_cast<double>(pred.size());
  INFO("BC test MSE " << mse);
  CHECK(mse < 1e-3);
  CHECK(bc.parameter_count() == 16 * 128 + 128 + 128 * 128 + 128 + 128 + 1);
}

TEST_CASE("BC clips, is deterministic and ignores rewards") {
  Dataset ds = generate_offline_dataset(MarketConfig::preset(Scenario::kHigh, 2), BehaviorMix{}, 6, 3);
  BcConfig cfg;
  cfg.steps = 30;
  cfg.seed = 1;
  const BcPolicy a = bc_train(ds, cfg);
  const BcPolicy b = bc_train(ds, cfg);
  CHECK(a.checksum() == b.checksum());
  for (auto& t : ds.trajectories) {
    for (float& r : t.rewards) r = 1e3f;
    for (float& g : t.rtg) g = -7.0f;
  }
  CHECK(bc_train(ds, cfg).checksum() == a.checksum());

  std::array<double, kStateDim> huge{};
  huge.fill(1e6);
  const double act = a.act(huge);
  CHECK(act >= 0.0);
  CHECK(act <= cfg.lambda_max);
  huge.fill(-1e6);
  CHECK(a.act(huge) >= 0.0);

  const auto path = std::filesystem::temp_directory_path() / "sembid_test_bc.sbck";
  a.save(path);
  CHECK(BcPolicy::load(path).checksum() == a.checksum());
}

TEST_CASE("vanilla DT config has the triplet layout") {
  ModelConfig base;
  const ModelConfig dt = vanilla_dt_config(base);
  CHECK(dt.tokens.count() == 0);
  CHECK(dt.tokens_per_step() == 3);
  CHECK(dt.step_roles() == std::vector<Role>{Role::kRtg, Role::kState, Role::kAction});
  CHECK(dt.layers == base.layers);
}
