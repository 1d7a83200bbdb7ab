#ifndef SEMBID_PID_HPP_
#define SEMBID_PID_HPP_

#include <span>
#include <vector>

#include "sembid/auction_env.hpp"

namespace sembid {

// Budget-pacing PID controller over the bid multiplier. The error signal is
// (scheduled cumulative spend - actual cumulative spend) / B, where the
// schedule gives the fraction of budget that should be spent by the end of
// each period (linear when empty).
struct PidConfig {
  double kp = 0.0;
  double ki = 0.0;
  double kd = 0.0;
  double lambda_max = 145.47;
  std::vector<double> spend_schedule;

  // Gain adjustment keyed on the remaining budget ratio.
  double high_ratio = 0.7;
  double low_ratio = 0.2;
  double high_gain = 1.5;
  double low_gain = 0.5;

  void validate() const;
  double gain_multiplier(double budget_ratio) const;
  double scheduled_fraction(int period, int n_periods) const;

  // Gains scaled by the market's target CPA, tuned on the stationary presets.
  static PidConfig for_market(const MarketConfig& market);
};

class PidController {
 public:
  explicit PidController(PidConfig cfg);

  // One control update. The integral is frozen while the output saturates in
  // the direction of the error (conditional-integration anti-windup).
  double update(double error, double budget_ratio);
  // Computes the pacing error from live telemetry and updates.
  double act(const AuctionEnv& env);
  void reset();

  const PidConfig& config() const { return cfg_; }
  double integral() const { return integral_; }

 private:
  PidConfig cfg_;
  double integral_ = 0.0;
  double prev_error_ = 0.0;
  bool has_prev_ = false;
};

// lambda after feeding the whole error history through a fresh controller at
// the given budget ratio. Empty or all-zero history gives 0.
double pid_step(const PidConfig& cfg, std::span<const double> errors,
                double budget_ratio);

double pacing_error(const PidConfig& cfg, const AuctionEnv& env);

}  // namespace sembid

#endif  // SEMBID_PID_HPP_
