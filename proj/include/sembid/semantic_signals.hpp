#ifndef SEMBID_SEMANTIC_SIGNALS_HPP_
#define SEMBID_SEMANTIC_SIGNALS_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sembid/auction_env.hpp"
#include "sembid/rng.hpp"

namespace sembid {

enum class Regime { kHighConv, kLowConv };
enum class PromptStyle { kStandard, kConcise, kDirective, kVerbose, kStructured };

Regime parse_regime(std::string_view name);  // "high" | "low"
PromptStyle parse_style(std::string_view name);
std::string_view regime_name(Regime regime);
std::string_view style_name(PromptStyle style);
// Medium shares the high-conversion pool.
Regime regime_for(Scenario scenario);

struct SemanticConfig {
  double conversion_weight = 10.0;  // omega
  double roi_epsilon = 1e-10;
  double roi_low_threshold = 0.5;
  double roi_high_threshold = 1.5;
  double cvr_epsilon = 0.001;
  double cpa_threshold = 0.5;  // tau_cpa
  double pvalue_high = 0.01;
  double pvalue_low = 0.001;
  double budget_low = 0.2;
  double budget_high = 0.7;
  double bid_high = 50.0;
  double bid_low = 10.0;
  Regime regime = Regime::kHighConv;
  PromptStyle style = PromptStyle::kStandard;
  std::uint64_t template_seed = 0;

  void validate() const;

  // Regime, tau_cpa and bid thresholds matched to a market preset. tau_cpa is
  // 0.5 scaled by the preset's mid-range CPA relative to the High preset.
  static SemanticConfig for_scenario(Scenario scenario);
};

// One style/regime template pool. Category keys follow the resource files,
// e.g. "roi_low", "cvr_increase", "budget_mid".
struct TemplatePool {
  int version = 0;
  Regime regime = Regime::kHighConv;
  PromptStyle style = PromptStyle::kStandard;
  std::vector<std::string> task;
  std::map<std::string, std::vector<std::string>> history;
  std::map<std::string, std::vector<std::string>> strategy;

  const std::vector<std::string>& history_variants(const std::string& category) const;
  const std::vector<std::string>& strategy_variants(const std::string& category) const;
};

TemplatePool load_template_pool(const std::filesystem::path& path);
// Bundled pool; the resource directory can be overridden by the
// SEMBID_RESOURCE_DIR environment variable. Loaded once and cached.
const TemplatePool& template_pool(Regime regime, PromptStyle style);
std::filesystem::path resource_dir();

// Picks a template variant, either uniformly from an RNG or a fixed index.
class VariantSelector {
 public:
  explicit VariantSelector(Rng& rng) : rng_(&rng) {}
  explicit VariantSelector(int forced_index) : forced_(forced_index) {}

  std::size_t pick(std::size_t n_variants);

 private:
  Rng* rng_ = nullptr;
  std::optional<int> forced_;
};

enum class RoiClass { kLow, kModerate, kGood };
enum class CvrTrend { kIncrease, kDecrease, kFlat };
enum class CpaTrend { kRose, kDropped, kFlat };
enum class PValueClass { kHigh, kMid, kLow };
enum class BudgetClass { kHigh, kMid, kLow };
enum class BidClass { kAggressive, kModerate, kConservative };

RoiClass classify_roi(double delta_conv, double delta_cost, double omega = 10.0,
                      double epsilon = 1e-10, double low = 0.5, double high = 1.5);
CvrTrend classify_cvr_trend(double delta_cvr, double epsilon = 0.001);
CpaTrend classify_cpa_trend(double delta_cpa, double tau);
PValueClass classify_pvalue(double p, const SemanticConfig& cfg);
BudgetClass classify_budget(double budget_ratio, const SemanticConfig& cfg);
BidClass classify_bid(double reference_bid, const SemanticConfig& cfg);

std::string_view category_key(RoiClass c);
std::string_view category_key(CvrTrend c);  // empty for kFlat
std::string_view category_key(CpaTrend c);  // empty for kFlat
std::string_view category_key(PValueClass c);
std::string_view category_key(BudgetClass c);
std::string_view category_key(BidClass c);

// Values available to template placeholders: {cpa:.1f}, {cpa}, {pvalue},
// {budget} and {spent} (the last two as integer percentages).
struct TemplateValues {
  double cpa = 0.0;
  double pvalue = 0.0;
  double budget_ratio = 0.0;
};

std::string format_template(std::string_view tmpl, const TemplateValues& values);
// Appends a full stop unless the clause already ends with one.
std::string finish_clause(std::string clause);

struct SemanticText {
  std::string text;
  std::vector<std::string> clauses;     // as joined into text
  std::vector<std::string> categories;  // pool keys, one per clause
};

struct SemanticTokenSet {
  SemanticText task;
  SemanticText history;
  SemanticText strategy;
};

struct TransitionSummary {
  double delta_conv = 0.0;
  double delta_cost = 0.0;
  double delta_cvr = 0.0;
  double delta_cpa = 0.0;
  bool conversion_happened = false;
};

SemanticText generate_task_text(double target_cpa, const SemanticConfig& cfg,
                                VariantSelector& selector);
SemanticText generate_history_text(const TransitionSummary& summary,
                                   const SemanticConfig& cfg, VariantSelector& selector);
SemanticText generate_strategy_text(double pvalue, double budget_ratio, double reference_bid,
                                    const SemanticConfig& cfg, VariantSelector& selector);

// Per-period record of the periods already played.
struct PeriodTelemetry {
  double conversions = 0.0;
  double spend = 0.0;
  double wins = 0.0;
  double action = 0.0;
};

// Changes since the previous period. CVR is per-period conversions per win;
// CPA is cumulative spend over max(cumulative conversions, 1). Trends need
// two periods of history and are 0 before that.
TransitionSummary summarize_transition(std::span<const PeriodTelemetry> history);

struct StepContext {
  double target_cpa = 0.0;
  double mean_pvalue = 0.0;   // of the batch about to be bid on
  double budget_ratio = 1.0;  // B_left / B
  std::span<const PeriodTelemetry> history;
};

// Reference bid for strategy advice: the previous action, or C_CPA at t = 1.
double reference_bid(const StepContext& ctx);

SemanticTokenSet generate_semantic_tokens(const StepContext& ctx, const SemanticConfig& cfg,
                                          VariantSelector& selector);

// "Budget: 80%. pValue: High. Time remaining: 12.5 hours." with 30-minute periods.
std::string render_state_text(const CampaignState& state, const SemanticConfig& cfg = {});

}  // namespace sembid

#endif  // SEMBID_SEMANTIC_SIGNALS_HPP_
