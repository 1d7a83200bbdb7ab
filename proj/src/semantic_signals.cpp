#include "sembid/semantic_signals.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>

#include <fmt/format.h>

#include "json.hpp"
#include "sembid/errors.hpp"

#ifndef SEMBID_RESOURCE_DIR
#define SEMBID_RESOURCE_DIR "resources"
#endif

namespace sembid {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

constexpr std::array<std::string_view, 5> kPlaceholders = {"{cpa:.1f}", "{cpa}", "{pvalue}",
                                                           "{budget}", "{spent}"};

void check_placeholders(const std::string& tmpl, const std::string& where) {
  std::size_t pos = 0;
  while ((pos = tmpl.find('{', pos)) != std::string::npos) {
    const bool known = std::any_of(kPlaceholders.begin(), kPlaceholders.end(),
                                   [&](std::string_view p) { return tmpl.compare(pos, p.size(), p) == 0; });
    if (!known) throw ConfigError("unknown placeholder in " + where + ": " + tmpl);
    ++pos;
  }
}

// Python str(float): shortest round-trip digits, always with a decimal part.
std::string python_float(double x) {
  std::string s = fmt::format("{}", x);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string percent(double ratio) {
  return fmt::format("{}%", static_cast<long>(std::lround(std::clamp(ratio, 0.0, 1.0) * 100.0)));
}

void add_clause(SemanticText& out, std::string category, const std::vector<std::string>& variants,
                VariantSelector& selector, const TemplateValues& values) {
  const std::string& tmpl = variants[selector.pick(variants.size())];
  out.clauses.push_back(finish_clause(format_template(tmpl, values)));
  out.categories.push_back(std::move(category));
}

void join_clauses(SemanticText& out) {
  out.text.clear();
  for (std::size_t i = 0; i < out.clauses.size(); ++i) {
    if (i) out.text += ' ';
    out.text += out.clauses[i];
  }
}

const std::vector<std::string>& lookup(const std::map<std::string, std::vector<std::string>>& m,
                                       const std::string& key, std::string_view section) {
  auto it = m.find(key);
  if (it == m.end()) {
    throw LookupError(fmt::format("template pool has no {} category '{}'", section, key));
  }
  return it->second;
}

}  // namespace

Regime parse_regime(std::string_view name) {
  const std::string n = lower(name);
  if (n == "high" || n == "highconv" || n == "medium") return Regime::kHighConv;
  if (n == "low" || n == "lowconv") return Regime::kLowConv;
  throw ConfigError("unknown regime: " + std::string(name));
}

PromptStyle parse_style(std::string_view name) {
  const std::string n = lower(name);
  if (n == "standard") return PromptStyle::kStandard;
  if (n == "concise") return PromptStyle::kConcise;
  if (n == "directive") return PromptStyle::kDirective;
  if (n == "verbose") return PromptStyle::kVerbose;
  if (n == "structured") return PromptStyle::kStructured;
  throw ConfigError("unknown prompt style: " + std::string(name));
}

std::string_view regime_name(Regime regime) {
  return regime == Regime::kHighConv ? "high" : "low";
}

std::string_view style_name(PromptStyle style) {
  switch (style) {
    case PromptStyle::kStandard: return "standard";
    case PromptStyle::kConcise: return "concise";
    case PromptStyle::kDirective: return "directive";
    case PromptStyle::kVerbose: return "verbose";
    case PromptStyle::kStructured: return "structured";
  }
  return "standard";
}

Regime regime_for(Scenario scenario) {
  return scenario == Scenario::kLow ? Regime::kLowConv : Regime::kHighConv;
}

void SemanticConfig::validate() const {
  if (!(roi_low_threshold < roi_high_threshold)) throw ConfigError("roi thresholds out of order");
  if (!(pvalue_low < pvalue_high)) throw ConfigError("pvalue thresholds out of order");
  if (!(budget_low < budget_high)) throw ConfigError("budget thresholds out of order");
  if (!(bid_low < bid_high)) throw ConfigError("bid thresholds out of order");
  if (!(cpa_threshold > 0.0)) throw ConfigError("cpa_threshold must be positive");
  if (!(cvr_epsilon >= 0.0) || !(roi_epsilon > 0.0)) throw ConfigError("epsilons must be positive");
  if (regime == Regime::kLowConv && style != PromptStyle::kStandard) {
    throw ConfigError("prompt style variants exist only for the high-conversion regime");
  }
}

SemanticConfig SemanticConfig::for_scenario(Scenario scenario) {
  SemanticConfig cfg;
  cfg.regime = regime_for(scenario);
  const MarketConfig m = MarketConfig::preset(scenario);
  const MarketConfig high = MarketConfig::preset(Scenario::kHigh);
  cfg.cpa_threshold = 0.5 * (0.5 * (m.cpa_min + m.cpa_max)) / (0.5 * (high.cpa_min + high.cpa_max));
  if (cfg.regime == Regime::kLowConv) {
    cfg.bid_low = 100.0;
    cfg.bid_high = 500.0;
  }
  return cfg;
}

const std::vector<std::string>& TemplatePool::history_variants(const std::string& category) const {
  return lookup(history, category, "history");
}

const std::vector<std::string>& TemplatePool::strategy_variants(const std::string& category) const {
  return lookup(strategy, category, "strategy");
}

TemplatePool load_template_pool(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open template pool: " + path.string());
  TemplatePool pool;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    pool.version = j.at("version").get<int>();
    pool.regime = parse_regime(j.at("regime").get<std::string>());
    pool.style = parse_style(j.at("style").get<std::string>());
    pool.task = j.at("task").get<std::vector<std::string>>();
    pool.history = j.at("history").get<std::map<std::string, std::vector<std::string>>>();
    pool.strategy = j.at("strategy").get<std::map<std::string, std::vector<std::string>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed template pool " + path.string() + ": " + e.what());
  }
  if (pool.version != 1) throw ConfigError("unsupported template pool version in " + path.string());
  if (pool.task.empty()) throw ConfigError("template pool has no task variants: " + path.string());
  for (const auto& t : pool.task) check_placeholders(t, path.string());
  for (const auto* section : {&pool.history, &pool.strategy}) {
    for (const auto& [key, variants] : *section) {
      if (variants.empty()) throw ConfigError("empty category '" + key + "' in " + path.string());
      for (const auto& v : variants) check_placeholders(v, path.string());
    }
  }
  return pool;
}

std::filesystem::path resource_dir() {
  if (const char* env = std::getenv("SEMBID_RESOURCE_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return SEMBID_RESOURCE_DIR;
}

const TemplatePool& template_pool(Regime regime, PromptStyle style) {
  static std::mutex mu;
  static std::map<std::pair<Regime, PromptStyle>, TemplatePool> cache;
  std::lock_guard<std::mutex> lock(mu);
  const auto key = std::make_pair(regime, style);
  auto it = cache.find(key);
  if (it == cache.end()) {
    const auto path = resource_dir() / "templates" /
                      fmt::format("{}_{}.json", regime_name(regime), style_name(style));
    if (!std::filesystem::exists(path)) {
      throw ConfigError(fmt::format("no template pool for regime '{}' with style '{}' ({})",
                                    regime_name(regime), style_name(style), path.string()));
    }
    TemplatePool pool = load_template_pool(path);
    if (pool.regime != regime || pool.style != style) {
      throw ConfigError("template pool header disagrees with its file name: " + path.string());
    }
    it = cache.emplace(key, std::move(pool)).first;
  }
  return it->second;
}

std::size_t VariantSelector::pick(std::size_t n_variants) {
  if (n_variants == 0) throw DomainError("no variants to pick from");
  if (forced_) {
    if (*forced_ < 0) throw DomainError("forced variant index must be nonnegative");
    // Categories with fewer variants (single-example styles) use their last.
    return std::min(static_cast<std::size_t>(*forced_), n_variants - 1);
  }
  return static_cast<std::size_t>(rng_->index(n_variants));
}

RoiClass classify_roi(double delta_conv, double delta_cost, double omega, double epsilon,
                      double low, double high) {
  const double roi = (omega * delta_conv - delta_cost) / (delta_cost + epsilon);
  if (roi < low) return RoiClass::kLow;
  if (roi < high) return RoiClass::kModerate;
  return RoiClass::kGood;
}

CvrTrend classify_cvr_trend(double delta_cvr, double epsilon) {
  if (delta_cvr > epsilon) return CvrTrend::kIncrease;
  if (delta_cvr < -epsilon) return CvrTrend::kDecrease;
  return CvrTrend::kFlat;
}

CpaTrend classify_cpa_trend(double delta_cpa, double tau) {
  if (!(tau > 0.0)) throw DomainError("tau_cpa must be positive");
  if (delta_cpa > tau) return CpaTrend::kRose;
  if (delta_cpa < -tau) return CpaTrend::kDropped;
  return CpaTrend::kFlat;
}

PValueClass classify_pvalue(double p, const SemanticConfig& cfg) {
  if (p > cfg.pvalue_high) return PValueClass::kHigh;
  if (p < cfg.pvalue_low) return PValueClass::kLow;
  return PValueClass::kMid;
}

BudgetClass classify_budget(double budget_ratio, const SemanticConfig& cfg) {
  if (budget_ratio < cfg.budget_low) return BudgetClass::kLow;
  if (budget_ratio > cfg.budget_high) return BudgetClass::kHigh;
  return BudgetClass::kMid;
}

BidClass classify_bid(double reference_bid, const SemanticConfig& cfg) {
  if (reference_bid > cfg.bid_high) return BidClass::kAggressive;
  if (reference_bid < cfg.bid_low) return BidClass::kConservative;
  return BidClass::kModerate;
}

std::string_view category_key(RoiClass c) {
  switch (c) {
    case RoiClass::kLow: return "roi_low";
    case RoiClass::kModerate: return "roi_moderate";
    case RoiClass::kGood: return "roi_good";
  }
  return "";
}

std::string_view category_key(CvrTrend c) {
  switch (c) {
    case CvrTrend::kIncrease: return "cvr_increase";
    case CvrTrend::kDecrease: return "cvr_decrease";
    case CvrTrend::kFlat: return "";
  }
  return "";
}

std::string_view category_key(CpaTrend c) {
  switch (c) {
    case CpaTrend::kRose: return "cpa_increase";
    case CpaTrend::kDropped: return "cpa_decrease";
    case CpaTrend::kFlat: return "";
  }
  return "";
}

std::string_view category_key(PValueClass c) {
  switch (c) {
    case PValueClass::kHigh: return "high_pvalue";
    case PValueClass::kMid: return "mid_pvalue";
    case PValueClass::kLow: return "low_pvalue";
  }
  return "";
}

std::string_view category_key(BudgetClass c) {
  switch (c) {
    case BudgetClass::kHigh: return "budget_high";
    case BudgetClass::kMid: return "budget_mid";
    case BudgetClass::kLow: return "budget_low";
  }
  return "";
}

std::string_view category_key(BidClass c) {
  switch (c) {
    case BidClass::kAggressive: return "aggressive";
    case BidClass::kModerate: return "moderate";
    case BidClass::kConservative: return "conservative";
  }
  return "";
}

std::string format_template(std::string_view tmpl, const TemplateValues& values) {
  std::string out;
  out.reserve(tmpl.size() + 16);
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      if (tmpl.substr(i, 9) == "{cpa:.1f}") {
        // printf rounds the exact binary value, halves to even.
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.1f", values.cpa);
        out += buf;
        i += 9;
        continue;
      }
      if (tmpl.substr(i, 5) == "{cpa}") {
        out += python_float(values.cpa);
        i += 5;
        continue;
      }
      if (tmpl.substr(i, 8) == "{pvalue}") {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.4f", values.pvalue);
        out += buf;
        i += 8;
        continue;
      }
      if (tmpl.substr(i, 8) == "{budget}") {
        out += percent(values.budget_ratio);
        i += 8;
        continue;
      }
      if (tmpl.substr(i, 7) == "{spent}") {
        out += percent(1.0 - values.budget_ratio);
        i += 7;
        continue;
      }
      throw ConfigError("unknown placeholder in template: " + std::string(tmpl));
    }
    out += tmpl[i++];
  }
  return out;
}

std::string finish_clause(std::string clause) {
  if (clause.empty() || clause.back() != '.') clause += '.';
  return clause;
}

SemanticText generate_task_text(double target_cpa, const SemanticConfig& cfg,
                                VariantSelector& selector) {
  if (!(target_cpa > 0.0)) throw DomainError("target CPA must be positive");
  const TemplatePool& pool = template_pool(cfg.regime, cfg.style);
  SemanticText out;
  add_clause(out, "task", pool.task, selector, {target_cpa, 0.0, 0.0});
  join_clauses(out);
  return out;
}

SemanticText generate_history_text(const TransitionSummary& s, const SemanticConfig& cfg,
                                   VariantSelector& selector) {
  const TemplatePool& pool = template_pool(cfg.regime, cfg.style);
  SemanticText out;
  const TemplateValues none{};
  const std::string roi(category_key(classify_roi(s.delta_conv, s.delta_cost, cfg.conversion_weight,
                                                  cfg.roi_epsilon, cfg.roi_low_threshold,
                                                  cfg.roi_high_threshold)));
  add_clause(out, roi, pool.history_variants(roi), selector, none);
  if (cfg.regime == Regime::kLowConv) {
    const std::string key = s.conversion_happened ? "conversion_happened" : "no_conversion";
    add_clause(out, key, pool.history_variants(key), selector, none);
  } else {
    const std::string key(category_key(classify_cvr_trend(s.delta_cvr, cfg.cvr_epsilon)));
    if (!key.empty()) add_clause(out, key, pool.history_variants(key), selector, none);
  }
  const std::string cpa(category_key(classify_cpa_trend(s.delta_cpa, cfg.cpa_threshold)));
  if (!cpa.empty()) add_clause(out, cpa, pool.history_variants(cpa), selector, none);
  join_clauses(out);
  return out;
}

SemanticText generate_strategy_text(double pvalue, double budget_ratio, double reference_bid,
                                    const SemanticConfig& cfg, VariantSelector& selector) {
  if (!(pvalue >= 0.0 && pvalue <= 1.0)) throw DomainError("pvalue must lie in [0, 1]");
  if (!(budget_ratio >= 0.0 && budget_ratio <= 1.0)) {
    throw DomainError("budget ratio must lie in [0, 1]");
  }
  if (!(reference_bid >= 0.0)) throw DomainError("reference bid must be nonnegative");
  const TemplatePool& pool = template_pool(cfg.regime, cfg.style);
  const bool mid_bands = cfg.regime == Regime::kLowConv;
  const TemplateValues values{0.0, pvalue, budget_ratio};
  SemanticText out;

  const PValueClass pc = classify_pvalue(pvalue, cfg);
  if (pc != PValueClass::kMid || mid_bands) {
    const std::string key(category_key(pc));
    add_clause(out, key, pool.strategy_variants(key), selector, values);
  }
  const BudgetClass bc = classify_budget(budget_ratio, cfg);
  if (bc != BudgetClass::kMid || mid_bands) {
    const std::string key(category_key(bc));
    add_clause(out, key, pool.strategy_variants(key), selector, values);
  }
  const std::string bid(category_key(classify_bid(reference_bid, cfg)));
  add_clause(out, bid, pool.strategy_variants(bid), selector, values);
  join_clauses(out);
  return out;
}

TransitionSummary summarize_transition(std::span<const PeriodTelemetry> history) {
  TransitionSummary s;
  const std::size_t h = history.size();
  if (h == 0) return s;
  const PeriodTelemetry& last = history[h - 1];
  s.delta_conv = last.conversions;
  s.delta_cost = last.spend;
  s.conversion_happened = last.conversions > 0.0;
  if (h >= 2) {
    const PeriodTelemetry& prev = history[h - 2];
    const auto cvr = [](const PeriodTelemetry& p) { return p.conversions / std::max(p.wins, 1.0); };
    s.delta_cvr = cvr(last) - cvr(prev);
    double spend = 0.0, conv = 0.0;
    for (std::size_t i = 0; i + 1 < h; ++i) {
      spend += history[i].spend;
      conv += history[i].conversions;
    }
    const double cpa_prev = spend / std::max(conv, 1.0);
    spend += last.spend;
    conv += last.conversions;
    s.delta_cpa = spend / std::max(conv, 1.0) - cpa_prev;
  }
  return s;
}

double reference_bid(const StepContext& ctx) {
  return ctx.history.empty() ? ctx.target_cpa : ctx.history.back().action;
}

SemanticTokenSet generate_semantic_tokens(const StepContext& ctx, const SemanticConfig& cfg,
                                          VariantSelector& selector) {
  SemanticTokenSet out;
  out.task = generate_task_text(ctx.target_cpa, cfg, selector);
  out.history = generate_history_text(summarize_transition(ctx.history), cfg, selector);
  out.strategy = generate_strategy_text(std::clamp(ctx.mean_pvalue, 0.0, 1.0),
                                        std::clamp(ctx.budget_ratio, 0.0, 1.0),
                                        std::max(reference_bid(ctx), 0.0), cfg, selector);
  return out;
}

std::string render_state_text(const CampaignState& state, const SemanticConfig& cfg) {
  const char* pv = "Medium";
  switch (classify_pvalue(state.mean_pvalue, cfg)) {
    case PValueClass::kHigh: pv = "High"; break;
    case PValueClass::kLow: pv = "Low"; break;
    case PValueClass::kMid: break;
  }
  const double hours = 0.5 * std::max(state.n_periods - state.period, 0);
  return fmt::format("Budget: {}. pValue: {}. Time remaining: {:g} hours.",
                     percent(state.budget_ratio()), pv, hours);
}

}  // namespace sembid
