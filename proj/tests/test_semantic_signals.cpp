#include <map>
#include <string>

#include "doctest.h"
#include "semantic_oracle.hpp"
#include "sembid/errors.hpp"
#include "sembid/semantic_signals.hpp"

using namespace sembid;

namespace {

SemanticConfig low_config() { return SemanticConfig::for_scenario(Scenario::kLow); }

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("classifier boundaries at +-1e-9") {
  const auto fails = oracle::boundary_failures();
  for (const auto& f : fails) INFO(f);
  CHECK(fails.empty());
}

TEST_CASE("classifier examples") {
  CHECK(classify_roi(1.0, 5.0) == RoiClass::kModerate);
  CHECK(classify_roi(1.0, 2.0) == RoiClass::kGood);
  CHECK(classify_roi(0.0, 3.0) == RoiClass::kLow);
  CHECK(classify_cvr_trend(0.002) == CvrTrend::kIncrease);
  CHECK(classify_cvr_trend(-0.002) == CvrTrend::kDecrease);
  CHECK(classify_cvr_trend(0.0005) == CvrTrend::kFlat);
  CHECK(classify_cpa_trend(2.0, 0.5) == CpaTrend::kRose);
  CHECK(classify_cpa_trend(-2.0, 0.5) == CpaTrend::kDropped);
  CHECK(classify_cpa_trend(0.1, 0.5) == CpaTrend::kFlat);
  CHECK_THROWS_AS(classify_cpa_trend(0.1, 0.0), DomainError);
}

TEST_CASE("config invariants and presets") {
  SemanticConfig c;
  CHECK_NOTHROW(c.validate());
  c.budget_low = 0.8;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(SemanticConfig::for_scenario(Scenario::kMedium).regime == Regime::kHighConv);
  const SemanticConfig low = low_config();
  CHECK(low.regime == Regime::kLowConv);
  CHECK(low.bid_low == 100.0);
  CHECK(low.bid_high == 500.0);
  CHECK(SemanticConfig::for_scenario(Scenario::kHigh).cpa_threshold == doctest::Approx(0.5));
  CHECK_THROWS_AS(parse_style("shouty"), ConfigError);
}

TEST_CASE("task text") {
  const SemanticConfig c;
  VariantSelector second(1);
  CHECK(generate_task_text(8.3, c, second).text == "Maximize conversions while maintaining CPA below 8.3.");
  VariantSelector any(0);
  const std::string t = generate_task_text(8.25, c, any).text;
  CHECK(contains(t, "8.2"));  // 8.25 is exact in binary and rounds half to even
  CHECK(format_template("{cpa:.1f}", {0.35, 0, 0}) == "0.3");  // 0.35 is stored below the half
  CHECK_THROWS_AS(generate_task_text(0.0, c, any), DomainError);

  Rng a(5), b(5);
  VariantSelector sa(a), sb(b);
  for (int i = 0; i < 20; ++i) CHECK(generate_task_text(9.1, c, sa).text == generate_task_text(9.1, c, sb).text);
}

TEST_CASE("history text") {
  const SemanticConfig c;
  VariantSelector first(0);
  TransitionSummary s;
  s.delta_conv = 1.0;
  s.delta_cost = 2.0;
  s.delta_cvr = 0.01;
  s.delta_cpa = -3.0;
  CHECK(generate_history_text(s, c, first).text ==
        "The ROI was good after the last bid. Conversion rate increased after the bid. "
        "Cost per acquisition decreased.");

  TransitionSummary flat;
  flat.delta_conv = 0.0;
  flat.delta_cost = 3.0;
  const SemanticText only_roi = generate_history_text(flat, c, first);
  CHECK(only_roi.clauses.size() == 1);
  CHECK(only_roi.categories.front() == "roi_low");

  const SemanticText low = generate_history_text(flat, low_config(), first);
  REQUIRE(low.categories.size() == 2);
  CHECK(low.categories[1] == "no_conversion");
  CHECK(contains(low.text, "No conversion was observed"));
}

TEST_CASE("strategy text") {
  const SemanticConfig c;
  VariantSelector first(0);
  const SemanticText a = generate_strategy_text(0.02, 0.8, 60.0, c, first);
  CHECK(a.categories == std::vector<std::string>{"high_pvalue", "budget_high", "aggressive"});
  CHECK(contains(a.text, "Remaining budget is sufficient"));

  const SemanticText b = generate_strategy_text(0.0005, 0.1, 5.0, c, first);
  CHECK(b.categories == std::vector<std::string>{"low_pvalue", "budget_low", "conservative"});

  const SemanticText m = generate_strategy_text(0.005, 0.5, 20.0, c, first);
  CHECK(m.categories == std::vector<std::string>{"moderate"});

  const SemanticText l = generate_strategy_text(0.005, 0.5, 200.0, low_config(), first);
  CHECK(l.categories == std::vector<std::string>{"mid_pvalue", "budget_mid", "moderate"});

  CHECK_THROWS_AS(generate_strategy_text(1.5, 0.5, 1.0, c, first), DomainError);
  CHECK_THROWS_AS(generate_strategy_text(0.5, 0.5, -1.0, c, first), DomainError);
}

TEST_CASE("every generated sentence belongs to its pool") {
  for (PromptStyle style : {PromptStyle::kStandard, PromptStyle::kConcise, PromptStyle::kDirective,
                            PromptStyle::kVerbose, PromptStyle::kStructured}) {
    for (Regime regime : {Regime::kHighConv, Regime::kLowConv}) {
      if (regime == Regime::kLowConv && style != PromptStyle::kStandard) continue;
      SemanticConfig c = regime == Regime::kLowConv ? low_config() : SemanticConfig{};
      c.style = style;
      const TemplatePool& pool = template_pool(regime, style);
      Rng rng(derive_seed(17, static_cast<std::uint64_t>(style)));
      VariantSelector sel(rng);
      for (int i = 0; i < 400; ++i) {
        const double cpa = rng.uniform(5.0, 130.0);
        TransitionSummary s;
        s.delta_conv = rng.index(3);
        s.delta_cost = rng.uniform(0.0, 40.0);
        s.delta_cvr = rng.normal(0.0, 0.003);
        s.delta_cpa = rng.normal(0.0, 1.0);
        s.conversion_happened = s.delta_conv > 0.0;
        const double p = std::exp(rng.uniform(-9.0, -2.0));
        const double rb = rng.uniform();
        const double bid = rng.uniform(0.0, 700.0);
        const SemanticText task = generate_task_text(cpa, c, sel);
        const SemanticText hist = generate_history_text(s, c, sel);
        const SemanticText strat = generate_strategy_text(p, rb, bid, c, sel);
        CHECK(oracle::check_task_membership(task, pool, cpa) == "");
        CHECK(oracle::check_membership(hist, pool.history, 0.0, 0.0, 0.0) == "");
        CHECK(oracle::check_membership(strat, pool.strategy, 0.0, p, rb) == "");
        CHECK_FALSE(task.text.empty());
        CHECK_FALSE(hist.text.empty());
        CHECK_FALSE(strat.text.empty());
        for (const std::string& cat : hist.categories) {
          if (regime == Regime::kHighConv) {
            CHECK(cat != "conversion_happened");
            CHECK(cat != "no_conversion");
          } else {
            CHECK(cat.rfind("cvr_", 0) != 0);
          }
        }
      }
    }
  }
}

TEST_CASE("variant frequencies are uniform within 5pp") {
  const SemanticConfig c;
  Rng rng(99);
  VariantSelector sel(rng);
  const TemplatePool& pool = template_pool(Regime::kHighConv, PromptStyle::kStandard);
  std::map<std::string, int> counts;
  const int n = 10000;
  TransitionSummary s;
  s.delta_conv = 1.0;
  s.delta_cost = 2.0;
  for (int i = 0; i < n; ++i) counts[generate_history_text(s, c, sel).clauses.front()]++;
  const auto& variants = pool.history_variants("roi_good");
  CHECK(counts.size() == variants.size());
  for (const auto& [clause, k] : counts) {
    INFO(clause);
    CHECK(std::abs(static_cast<double>(k) / n - 1.0 / variants.size()) < 0.05);
  }
}

TEST_CASE("forced index clamps to the last variant of short categories") {
  SemanticConfig c;
  c.style = PromptStyle::kVerbose;
  VariantSelector third(3);
  const SemanticText t = generate_strategy_text(0.02, 0.8, 60.0, c, third);
  CHECK(t.clauses.size() == 3);
  CHECK_THROWS_AS(VariantSelector(-1).pick(3), DomainError);
}

TEST_CASE("summarize_transition") {
  std::vector<PeriodTelemetry> h = {{1.0, 10.0, 20.0, 30.0}, {3.0, 12.0, 30.0, 35.0}};
  const TransitionSummary s = summarize_transition(h);
  CHECK(s.delta_conv == 3.0);
  CHECK(s.delta_cost == 12.0);
  CHECK(s.delta_cvr == doctest::Approx(3.0 / 30.0 - 1.0 / 20.0));
  CHECK(s.delta_cpa == doctest::Approx(22.0 / 4.0 - 10.0));
  CHECK(s.conversion_happened);
  const TransitionSummary empty = summarize_transition({});
  CHECK(empty.delta_cost == 0.0);

  StepContext ctx;
  ctx.target_cpa = 8.0;
  CHECK(reference_bid(ctx) == 8.0);
  ctx.history = h;
  CHECK(reference_bid(ctx) == 35.0);
}

TEST_CASE("render_state_text") {
  CampaignState st;
  st.period = 9;
  st.n_periods = 48;
  st.budget = 100.0;
  st.budget_left = 80.0;
  st.mean_pvalue = 0.05;
  const std::string text = render_state_text(st);
  CHECK(text == "Budget: 80%. pValue: High. Time remaining: 19.5 hours.");
  CHECK(render_state_text(st) == text);
  st.period = 48;
  st.mean_pvalue = 0.005;
  CHECK(contains(render_state_text(st), "Time remaining: 0 hours"));
  CHECK(contains(render_state_text(st), "pValue: Medium"));
}
