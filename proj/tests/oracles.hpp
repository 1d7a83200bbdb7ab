#ifndef SEMBID_TESTS_ORACLES_HPP_
#define SEMBID_TESTS_ORACLES_HPP_

// Independent reference computations used by the unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "sembid/auction_env.hpp"

namespace sembid::oracle {

// Enumerates every subset of items and keeps the one that is self-consistent
// with the auction rule: item i is won iff its bid beats the price and the
// price still fits next to the earlier wins of the same subset. Exactly one
// subset qualifies for any batch.
inline PeriodOutcome brute_force_auction(const ImpressionBatch& batch, double lambda,
                                         double budget) {
  const int n = static_cast<int>(batch.items.size());
  if (n > 16) throw std::invalid_argument("brute force limited to 16 items");
  int found = -1;
  for (int mask = 0; mask < (1 << n); ++mask) {
    double prefix = 0.0;
    bool consistent = true;
    for (int i = 0; i < n && consistent; ++i) {
      const Impression& it = batch.items[static_cast<std::size_t>(i)];
      const bool eligible = lambda * it.pvalue > it.competitor_price;
      const bool fits = prefix + it.competitor_price <= budget;
      const bool in_set = (mask >> i) & 1;
      if (in_set != (eligible && fits)) consistent = false;
      if (in_set) prefix += it.competitor_price;
    }
    if (consistent) {
      if (found >= 0) throw std::logic_error("two consistent win sets");
      found = mask;
    }
  }
  if (found < 0) throw std::logic_error("no consistent win set");
  PeriodOutcome out;
  out.items = n;
  for (int i = 0; i < n; ++i) {
    const Impression& it = batch.items[static_cast<std::size_t>(i)];
    if ((found >> i) & 1) {
      ++out.wins;
      out.spend += it.competitor_price;
      out.value += it.pvalue;
      if (it.conversion_draw < it.pvalue) out.conversions += 1.0;
    } else if (lambda * it.pvalue > it.competitor_price) {
      ++out.bids_dropped_for_budget;
    }
  }
  return out;
}

struct ScoreOracle {
  double cpa;
  double penalty;
  double score;
};

// Score = V * min((C_CPA / CPA)^2, 1), CPA = C / (V + 1e-10).
inline ScoreOracle score(double value, double cost, double target_cpa) {
  ScoreOracle s{};
  s.cpa = cost / (value + 1e-10);
  const double r = target_cpa / s.cpa;
  s.penalty = r * r < 1.0 ? r * r : 1.0;
  s.score = value * s.penalty;
  return s;
}

// Central finite-difference derivative.
template <typename F>
double central_difference(F&& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace sembid::oracle

#endif  // SEMBID_TESTS_ORACLES_HPP_
