#include "sembid/pid.hpp"

#include <algorithm>
#include <cmath>

#include "sembid/errors.hpp"

namespace sembid {

void PidConfig::validate() const {
  if (!std::isfinite(kp) || !std::isfinite(ki) || !std::isfinite(kd)) {
    throw ConfigError("PID gains must be finite");
  }
  if (!(lambda_max > 0.0)) throw ConfigError("PID clamp must be positive");
  if (!(low_ratio < high_ratio)) throw ConfigError("PID ratio bands inverted");
}

double PidConfig::gain_multiplier(double budget_ratio) const {
  if (budget_ratio > high_ratio) return high_gain;
  if (budget_ratio < low_ratio) return low_gain;
  return 1.0;
}

double PidConfig::scheduled_fraction(int period, int n_periods) const {
  if (!spend_schedule.empty()) {
    const int i = std::clamp(period, 1, static_cast<int>(spend_schedule.size()));
    return spend_schedule[i - 1];
  }
  return static_cast<double>(period) / n_periods;
}

PidConfig PidConfig::for_market(const MarketConfig& market) {
  PidConfig cfg;
  const double scale = market.target_cpa * market.n_periods;
  cfg.kp = 1.0 * scale;
  cfg.ki = 0.35 * scale;
  cfg.kd = 0.0;
  cfg.lambda_max = market.lambda_max;
  return cfg;
}

PidController::PidController(PidConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
}

void PidController::reset() {
  integral_ = 0.0;
  prev_error_ = 0.0;
  has_prev_ = false;
}

double PidController::update(double error, double budget_ratio) {
  const double g = cfg_.gain_multiplier(budget_ratio);
  const double derivative = has_prev_ ? error - prev_error_ : 0.0;
  const double candidate = integral_ + error;
  const double u = g * (cfg_.kp * error + cfg_.ki * candidate + cfg_.kd * derivative);
  const bool saturating = (u > cfg_.lambda_max && error > 0.0) ||
                          (u < 0.0 && error < 0.0);
  if (!saturating) integral_ = candidate;
  prev_error_ = error;
  has_prev_ = true;
  return std::clamp(u, 0.0, cfg_.lambda_max);
}

double pacing_error(const PidConfig& cfg, const AuctionEnv& env) {
  const auto& ledger = env.ledger();
  if (!(ledger.budget > 0.0)) return 0.0;
  const int t = env.state().period;
  const double scheduled =
      cfg.scheduled_fraction(t, env.config().n_periods) * ledger.budget;
  return (scheduled - ledger.total_spend()) / ledger.budget;
}

double PidController::act(const AuctionEnv& env) {
  return update(pacing_error(cfg_, env), env.state().budget_ratio());
}

double pid_step(const PidConfig& cfg, std::span<const double> errors,
                double budget_ratio) {
  PidController controller(cfg);
  double lambda = 0.0;
  for (double e : errors) lambda = controller.update(e, budget_ratio);
  return lambda;
}

}  // namespace sembid
