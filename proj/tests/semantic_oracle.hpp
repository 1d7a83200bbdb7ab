#ifndef SEMBID_TESTS_SEMANTIC_ORACLE_HPP_
#define SEMBID_TESTS_SEMANTIC_ORACLE_HPP_

// Independent placeholder expansion and pool-membership checks used by the
// semantic unit tests and the acceptance binary.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "sembid/semantic_signals.hpp"

namespace sembid::oracle {

inline std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
  return s;
}

inline std::string expand(const std::string& tmpl, double cpa, double pvalue, double budget_ratio) {
  char one[64], four[64], shortest[64];
  std::snprintf(one, sizeof one, "%.1f", cpa);
  std::snprintf(four, sizeof four, "%.4f", pvalue);
  auto res = std::to_chars(shortest, shortest + sizeof shortest, cpa);
  std::string py(shortest, res.ptr);
  if (py.find_first_of(".e") == std::string::npos) py += ".0";
  const double b = std::clamp(budget_ratio, 0.0, 1.0);
  const double s = std::clamp(1.0 - budget_ratio, 0.0, 1.0);
  std::string out = tmpl;
  out = replace_all(out, "{cpa:.1f}", one);
  out = replace_all(out, "{cpa}", py);
  out = replace_all(out, "{pvalue}", four);
  out = replace_all(out, "{budget}", std::to_string(std::lround(b * 100.0)) + "%");
  out = replace_all(out, "{spent}", std::to_string(std::lround(s * 100.0)) + "%");
  if (out.empty() || out.back() != '.') out += '.';
  return out;
}

// Every clause must be the expansion of a variant of its category, and the
// text must be the clauses joined by single spaces. Returns an empty string
// on success, otherwise a description of the first mismatch.
inline std::string check_membership(const SemanticText& t,
                                    const std::map<std::string, std::vector<std::string>>& section,
                                    double cpa, double pvalue, double budget_ratio) {
  if (t.clauses.size() != t.categories.size()) return "clause/category count mismatch";
  std::string joined;
  for (std::size_t i = 0; i < t.clauses.size(); ++i) {
    auto it = section.find(t.categories[i]);
    if (it == section.end()) return "unknown category " + t.categories[i];
    bool found = false;
    for (const std::string& v : it->second) found |= expand(v, cpa, pvalue, budget_ratio) == t.clauses[i];
    if (!found) return "clause not in pool: " + t.clauses[i];
    if (i) joined += ' ';
    joined += t.clauses[i];
  }
  if (joined != t.text) return "text is not the joined clauses";
  return {};
}

inline std::string check_task_membership(const SemanticText& t, const TemplatePool& pool, double cpa) {
  return check_membership(t, {{"task", pool.task}}, cpa, 0.0, 0.0);
}

// Probes every classifier threshold at boundary +- 1e-9 (and at the boundary
// itself where it is exactly representable). Returns descriptions of every
// disagreement with the band rules.
inline std::vector<std::string> boundary_failures() {
  std::vector<std::string> fails;
  const double d = 1e-9;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) fails.push_back(what);
  };
  // ROI = (10 dconv - dcost) / (dcost + eps). Solve for dconv at dcost = 1.
  const double eps = 1e-10;
  auto dconv_for = [&](double roi) { return (roi * (1.0 + eps) + 1.0) / 10.0; };
  auto roi_class = [&](double roi) { return classify_roi(dconv_for(roi), 1.0, 10.0, eps); };
  expect(roi_class(0.5 - d) == RoiClass::kLow, "roi 0.5-d");
  expect(roi_class(0.5 + d) == RoiClass::kModerate, "roi 0.5+d");
  expect(roi_class(1.5 - d) == RoiClass::kModerate, "roi 1.5-d");
  expect(roi_class(1.5 + d) == RoiClass::kGood, "roi 1.5+d");
  // Exactly representable ROI values with eps = 0.
  expect(classify_roi(1.5, 10.0, 10.0, 0.0) == RoiClass::kModerate, "roi == 0.5");
  expect(classify_roi(1.0, 4.0, 10.0, 0.0) == RoiClass::kGood, "roi == 1.5");

  expect(classify_cvr_trend(0.001 + d) == CvrTrend::kIncrease, "cvr +0.001+d");
  expect(classify_cvr_trend(0.001 - d) == CvrTrend::kFlat, "cvr +0.001-d");
  expect(classify_cvr_trend(0.001) == CvrTrend::kFlat, "cvr == 0.001");
  expect(classify_cvr_trend(-0.001 - d) == CvrTrend::kDecrease, "cvr -0.001-d");
  expect(classify_cvr_trend(-0.001 + d) == CvrTrend::kFlat, "cvr -0.001+d");
  expect(classify_cvr_trend(-0.001) == CvrTrend::kFlat, "cvr == -0.001");

  const double tau = 0.5;
  expect(classify_cpa_trend(tau + d, tau) == CpaTrend::kRose, "cpa +tau+d");
  expect(classify_cpa_trend(tau - d, tau) == CpaTrend::kFlat, "cpa +tau-d");
  expect(classify_cpa_trend(-tau - d, tau) == CpaTrend::kDropped, "cpa -tau-d");
  expect(classify_cpa_trend(-tau + d, tau) == CpaTrend::kFlat, "cpa -tau+d");

  const SemanticConfig c;
  expect(classify_pvalue(0.01 + d, c) == PValueClass::kHigh, "pvalue 0.01+d");
  expect(classify_pvalue(0.01 - d, c) == PValueClass::kMid, "pvalue 0.01-d");
  expect(classify_pvalue(0.01, c) == PValueClass::kMid, "pvalue == 0.01");
  expect(classify_pvalue(0.001 - d, c) == PValueClass::kLow, "pvalue 0.001-d");
  expect(classify_pvalue(0.001 + d, c) == PValueClass::kMid, "pvalue 0.001+d");
  expect(classify_pvalue(0.001, c) == PValueClass::kMid, "pvalue == 0.001");

  expect(classify_budget(0.2 - d, c) == BudgetClass::kLow, "budget 0.2-d");
  expect(classify_budget(0.2 + d, c) == BudgetClass::kMid, "budget 0.2+d");
  expect(classify_budget(0.2, c) == BudgetClass::kMid, "budget == 0.2");
  expect(classify_budget(0.7 + d, c) == BudgetClass::kHigh, "budget 0.7+d");
  expect(classify_budget(0.7 - d, c) == BudgetClass::kMid, "budget 0.7-d");
  expect(classify_budget(0.7, c) == BudgetClass::kMid, "budget == 0.7");

  expect(classify_bid(50.0 + d, c) == BidClass::kAggressive, "bid 50+d");
  expect(classify_bid(50.0 - d, c) == BidClass::kModerate, "bid 50-d");
  expect(classify_bid(50.0, c) == BidClass::kModerate, "bid == 50");
  expect(classify_bid(10.0 - d, c) == BidClass::kConservative, "bid 10-d");
  expect(classify_bid(10.0 + d, c) == BidClass::kModerate, "bid 10+d");
  expect(classify_bid(10.0, c) == BidClass::kModerate, "bid == 10");
  return fails;
}

}  // namespace sembid::oracle

#endif  // SEMBID_TESTS_SEMANTIC_ORACLE_HPP_
