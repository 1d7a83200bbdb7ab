// Acceptance runner: one PASS/FAIL line per criterion, each with its own
// pinned tolerance and time limit. Exit code 0 iff every hard gate passes.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "semantic_oracle.hpp"
#include "sembid/dataset.hpp"
#include "sembid/embedding.hpp"
#include "sembid/evaluation.hpp"
#include "sembid/probing.hpp"
#include "sembid/sembid_model.hpp"
#include "sembid/training.hpp"

namespace fs = std::filesystem;
using namespace sembid;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  bool soft_fail = false;  // reported, never gating
};

struct Criterion {
  int id;
  std::string title;
  double limit_s;
  std::function<Outcome(const fs::path&)> run;
};

bool same(const PeriodOutcome& a, const PeriodOutcome& b) {
  return a.value == b.value && a.conversions == b.conversions && a.spend == b.spend &&
         a.wins == b.wins && a.bids_dropped_for_budget == b.bids_dropped_for_budget &&
         a.items == b.items;
}

// ---------------------------------------------------------------- 1
Outcome score_oracle(const fs::path&) {
  struct Spec {
    std::vector<std::pair<double, double>> periods;  // (conversions, spend)
    double target;
  };
  std::vector<Spec> specs = {
      {{}, 8.27},                                  // empty ledger: V = 0, C = 0
      {{{0, 0}}, 8.27},
      {{{0, 120.5}}, 8.27},                        // V = 0 with spend
      {{{0, 40}, {0, 2.5}}, 32.5},
      {{{4, 32}}, 8.0},                            // C / V equals the target
      {{{2, 65}, {2, 65}}, 32.5},                  // at the target, split over periods
      {{{10, 950}}, 95.0},
      {{{1, 8.26}}, 8.27},                         // just under target
      {{{1, 8.28}}, 8.27},                         // just over target
      {{{3, 60}}, 8.27},                           // far over target
      {{{25, 100}}, 8.27},                         // far under target
      {{{1, 1e-12}}, 95.0},
      {{{7, 227.5}, {0, 0}, {1, 32.5}}, 32.5},
      {{{1, 0.5}, {1, 0.25}, {1, 0.125}}, 0.5},
  };
  Rng rng(20);
  while (specs.size() < 20) {
    Spec s;
    s.target = rng.uniform(6.0, 130.0);
    const int n = 1 + static_cast<int>(rng.index(48));
    for (int t = 0; t < n; ++t) s.periods.emplace_back(static_cast<double>(rng.index(4)), rng.uniform(0.0, 90.0));
    specs.push_back(s);
  }
  int ok = 0;
  std::string first_bad;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    EpisodeLedger ledger;
    ledger.target_cpa = specs[i].target;
    double v = 0.0, c = 0.0;
    for (auto [cv, sp] : specs[i].periods) {
      PeriodOutcome o;
      o.conversions = cv;
      o.value = 0.1 * cv;
      o.spend = sp;
      ledger.outcomes.push_back(o);
      v += cv;
      c += sp;
    }
    const ScoreBreakdown got = compute_score(ledger, specs[i].target);
    const oracle::ScoreOracle want = oracle::score(v, c, specs[i].target);
    const bool match = got.value == v && got.cost == c && got.cpa == want.cpa &&
                       got.penalty == want.penalty && got.score == want.score;
    if (match) {
      ++ok;
    } else if (first_bad.empty()) {
      first_bad = fmt::format(" first mismatch ledger {}: score {} vs {}", i, got.score, want.score);
    }
  }
  return {ok == 20, fmt::format("{}/20 ledgers bit-exact{}", ok, first_bad)};
}

// ---------------------------------------------------------------- 2
Outcome auction_oracle(const fs::path&) {
  Rng rng(2);
  int ok = 0, with_drops = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    ImpressionBatch batch;
    const int n = static_cast<int>(rng.index(9));
    for (int i = 0; i < n; ++i) {
      Impression it;
      it.pvalue = rng.uniform(0.0, 0.3);
      it.competitor_price = rng.uniform(0.0, 20.0);
      it.conversion_draw = rng.uniform();
      batch.items.push_back(it);
    }
    if (n > 1 && trial % 10 == 0) {
      // Exact ties between bid and price must lose.
      batch.items[0].pvalue = 0.25;
      batch.items[0].competitor_price = 5.0;
    }
    const double lambda = trial % 10 == 0 ? 20.0 : rng.uniform(0.0, 145.47);
    const double budget = rng.uniform(0.0, 60.0);
    const PeriodOutcome got = run_auction(batch, lambda, budget, 145.47);
    const PeriodOutcome want = oracle::brute_force_auction(batch, lambda, budget);
    ok += same(got, want);
    with_drops += want.bids_dropped_for_budget > 0;
  }
  return {ok == 1000 && with_drops > 50,
          fmt::format("{}/1000 batches equal brute force ({} exercise budget drops)", ok, with_drops)};
}

// ---------------------------------------------------------------- 3
Outcome causality(const fs::path&) {
  const Dataset ds = generate_offline_dataset(MarketConfig::preset(Scenario::kHigh, 31), BehaviorMix{}, 2, 32);
  TextTable texts(std::make_shared<SemanticEmbedder>(std::make_shared<HashEncoder>(), 33));
  SemanticConfig sem = SemanticConfig::for_scenario(Scenario::kHigh);
  sem.template_seed = 34;
  const EncodedDataset data = encode_dataset(ds, ds.stats, sem, &texts);
  ModelConfig mc;
  mc.dropout = 0.0;
  mc = model_config_for(mc, ds.stats);
  if (mc.layers != 6 || mc.heads != 4 || mc.d_model != 128 || mc.context_window != 48) {
    return {false, "default model is not 6L/4H/d128 with a 48-step window"};
  }
  const SemBidModel<float> model(mc, 35);
  const auto mb = assemble_batch<float>({&data.trajectories[0]}, {0}, 48, mc, &texts);
  const auto seq = model.build_token_sequence(mb);
  const Tensor<float> base = model.forward_tokens(seq, false, nullptr);
  const std::int64_t len = seq.length(), d = mc.d_model;

  Rng rng(36);
  auto perturbed = [&](std::int64_t from, std::int64_t to) {
    auto p = seq;
    p.tokens = Tensor<float>::from(seq.tokens.shape(),
                                   std::vector<float>(seq.tokens.data().begin(), seq.tokens.data().end()));
    auto x = p.tokens.mutable_data();
    for (std::int64_t pos = from; pos < to; ++pos)
      for (std::int64_t c = 0; c < d; ++c) x[static_cast<std::size_t>(pos * d + c)] += static_cast<float>(rng.normal(0.0, 3.0));
    return model.forward_tokens(p, false, nullptr);
  };
  auto prefix_equal = [&](const Tensor<float>& out, std::int64_t t) {
    for (std::int64_t s = 0; s <= t; ++s)
      if (out.data()[static_cast<std::size_t>(s)] != base.data()[static_cast<std::size_t>(s)]) return false;
    return true;
  };
  int future_ok = 0, action_ok = 0, later_moved = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto t = static_cast<std::int64_t>(rng.index(47));
    const std::int64_t first = seq.state_positions[static_cast<std::size_t>(t)] + 1;
    const std::int64_t start = first + static_cast<std::int64_t>(rng.index(static_cast<std::size_t>(len - first)));
    future_ok += prefix_equal(perturbed(start, len), t);
  }
  for (int trial = 0; trial < 24; ++trial) {
    const auto t = static_cast<std::int64_t>(rng.index(47));
    const std::int64_t action_pos = seq.state_positions[static_cast<std::size_t>(t)] + 1;
    if (seq.roles[static_cast<std::size_t>(action_pos)] != Role::kAction) return {false, "token after STATE is not ACTION"};
    const Tensor<float> out = perturbed(action_pos, action_pos + 1);
    action_ok += prefix_equal(out, t);
    later_moved += out.data()[static_cast<std::size_t>(t + 1)] != base.data()[static_cast<std::size_t>(t + 1)];
  }
  // The perturbation must actually reach later predictions, or the test is vacuous.
  return {future_ok == 100 && action_ok == 24 && later_moved == 24,
          fmt::format("{}/100 future perturbations and {}/24 same-step ACTION perturbations leave earlier "
                      "predictions bit-identical; {}/24 moved the next step",
                      future_ok, action_ok, later_moved)};
}

// ---------------------------------------------------------------- 4
Outcome gradient_check(const fs::path&) {
  const Dataset ds = generate_offline_dataset(MarketConfig::preset(Scenario::kHigh, 41), BehaviorMix{}, 2, 42);
  TextTable texts(std::make_shared<SemanticEmbedder>(std::make_shared<HashEncoder>(), 43));
  SemanticConfig sem = SemanticConfig::for_scenario(Scenario::kHigh);
  const EncodedDataset data = encode_dataset(ds, ds.stats, sem, &texts);
  ModelConfig mc;
  mc.layers = 2;
  mc.heads = 2;
  mc.d_model = 16;
  mc.d_ff = 32;
  mc.dropout = 0.0;
  mc.context_window = 3;
  mc = model_config_for(mc, ds.stats);
  // Unit action scale keeps the loss O(1), so finite-difference roundoff
  // stays well below the gradients being checked.
  mc.action_mean = 0.0;
  mc.action_std = 1.0;
  SemBidModel<double> model(mc, 44);
  auto mb = assemble_batch<double>({&data.trajectories[0]}, {20}, 3, mc, &texts);
  for (double& y : mb.targets) y = (y - ds.stats.action_mean) / ds.stats.action_std;
  std::vector<Tensor<double>> leaves;
  for (const auto& p : model.params().params()) leaves.push_back(p.tensor);
  const auto r = oracle::gradcheck(leaves, [&] {
    return mse_loss(model.forward(mb, false, nullptr), std::span<const double>(mb.targets),
                    std::span<const double>(mb.mask));
  }, 1e-5, 1e-6);
  const auto n = model.parameter_count();
  return {r.max_rel_err < 1e-4 && r.checked == n,
          fmt::format("{} of {} parameters checked, max rel err {:.3g} (max abs {:.3g})", r.checked, n,
                      r.max_rel_err, r.max_abs_err)};
}

// ---------------------------------------------------------------- 5
Outcome overfit(const fs::path&) {
  const MarketConfig m = MarketConfig::preset(Scenario::kHigh, 7);
  const Dataset ds = generate_offline_dataset(m, BehaviorMix{}, 8, 11);
  const SemanticConfig sem = SemanticConfig::for_scenario(Scenario::kHigh);
  std::string detail;
  bool pass = true;
  for (bool semantic : {true, false}) {
    std::shared_ptr<TextTable> texts;
    if (semantic) texts = std::make_shared<TextTable>(std::make_shared<SemanticEmbedder>(std::make_shared<HashEncoder>(), 5));
    const EncodedDataset enc = encode_dataset(ds, ds.stats, sem, texts.get());
    ModelConfig mc;
    mc.layers = 2;
    mc.heads = 2;
    mc.d_model = 32;
    mc.d_ff = 128;
    mc.dropout = 0.0;
    if (!semantic) mc.tokens = TokenSet::none();
    mc = model_config_for(mc, ds.stats);
    SemBidModel<float> model(mc, 3);
    TrainConfig tc;
    tc.steps = 20000;
    tc.mode = BatchMode::kFullPass;
    tc.optimizer.lr = 3e-3;
    tc.optimizer.weight_decay = 0.0;
    tc.cosine_decay = true;
    tc.min_lr_ratio = 0.01;
    tc.stop_below = 5e-4;
    const TrainResult r = train_model(model, enc, texts.get(), tc);
    // Independent check: full-dataset MSE with the trained weights in eval mode.
    double se = 0.0;
    int count = 0;
    for (const auto& tr : enc.trajectories) {
      const auto mb = assemble_batch<float>({&tr}, {0}, tr.length(), mc, texts.get());
      const std::vector<double> pred = model.predict_actions(mb);
      for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mb.mask[i] == 0.0f) continue;
        const double e = pred[i] - static_cast<double>(mb.targets[i]);
        se += e * e;
        ++count;
      }
    }
    const double mse = se / count;
    pass = pass && mse < 1e-3 && r.steps_done <= 20000;
    detail += fmt::format("{}{}: mse {:.3g} after {} steps", detail.empty() ? "" : "; ",
                          semantic ? "SemBid" : "DT", mse, r.steps_done);
  }
  return {pass, detail};
}

// ---------------------------------------------------------------- 6
Outcome semantic_rules(const fs::path&) {
  const std::vector<std::string> fails = oracle::boundary_failures();
  int sentences = 0, bad = 0;
  std::string first;
  auto note = [&](const std::string& err) {
    ++sentences;
    if (!err.empty()) {
      ++bad;
      if (first.empty()) first = err;
    }
  };
  for (PromptStyle style : {PromptStyle::kStandard, PromptStyle::kConcise, PromptStyle::kDirective,
                            PromptStyle::kVerbose, PromptStyle::kStructured}) {
    for (Regime regime : {Regime::kHighConv, Regime::kLowConv}) {
      if (regime == Regime::kLowConv && style != PromptStyle::kStandard) continue;
      SemanticConfig c = SemanticConfig::for_scenario(regime == Regime::kLowConv ? Scenario::kLow : Scenario::kHigh);
      c.style = style;
      const TemplatePool& pool = template_pool(regime, style);
      Rng rng(derive_seed(60, static_cast<std::uint64_t>(style)));
      VariantSelector sel(rng);
      for (int i = 0; i < 500; ++i) {
        const double cpa = rng.uniform(5.0, 130.0);
        TransitionSummary s;
        s.delta_conv = static_cast<double>(rng.index(3));
        s.delta_cost = rng.uniform(0.0, 40.0);
        s.delta_cvr = rng.normal(0.0, 0.003);
        s.delta_cpa = rng.normal(0.0, 1.0);
        s.conversion_happened = s.delta_conv > 0.0;
        const double p = std::exp(rng.uniform(-9.0, -2.0));
        const double rb = rng.uniform();
        const double bid = rng.uniform(0.0, 700.0);
        note(oracle::check_task_membership(generate_task_text(cpa, c, sel), pool, cpa));
        note(oracle::check_membership(generate_history_text(s, c, sel), pool.history, 0.0, 0.0, 0.0));
        note(oracle::check_membership(generate_strategy_text(p, rb, bid, c, sel), pool.strategy, 0.0, p, rb));
      }
    }
  }
  return {fails.empty() && bad == 0,
          fmt::format("{} boundary disagreements{}; {}/{} sentences match their pools{}", fails.size(),
                      fails.empty() ? "" : " (" + fails.front() + ")", sentences - bad, sentences,
                      first.empty() ? "" : " (" + first + ")")};
}

// ---------------------------------------------------------------- 7
Outcome probing(const fs::path&) {
  ProbeStudyConfig pc;
  pc.n_seeds = 10;
  pc.run_fusion = false;
  pc.seed = derive_seed(0, "probe");
  const HashEncoder enc;
  const ProbeStudy st = run_probe_study(pc, enc);
  double aligned = NAN, shuffled = NAN;
  for (const ProbeReport& r : st.probes) {
    if (r.label == "text_embedding:aligned") aligned = r.r2;
    if (r.label == "text_embedding:shuffled") shuffled = r.r2;
  }
  return {aligned - shuffled >= 0.1 && std::abs(shuffled) < 0.05,
          fmt::format("mean over 10 seeds: aligned R2 {:.4f}, shuffled R2 {:.4f}, gap {:.4f}", aligned,
                      shuffled, aligned - shuffled)};
}

// ---------------------------------------------------------------- 8
Outcome fusion(const fs::path&) {
  int wins = 0;
  double worst_gap = 0.0, mean_gap = 0.0;
  for (int s = 0; s < 10; ++s) {
    FusionTaskConfig tc;
    FusionConfig fc;
    fc.seed = derive_seed(80, static_cast<std::uint64_t>(s));
    const FusionData data = make_fusion_task(tc, derive_seed(81, static_cast<std::uint64_t>(s)));
    const double cross = fusion_eval(data, FusionMechanism::kCrossAttention, fc).r2;
    const double concat = fusion_eval(data, FusionMechanism::kConcat, fc).r2;
    wins += cross >= concat;
    tc.informative = false;
    const FusionData noise = make_fusion_task(tc, derive_seed(82, static_cast<std::uint64_t>(s)));
    const double gap = std::abs(fusion_eval(noise, FusionMechanism::kCrossAttention, fc).r2 -
                                fusion_eval(noise, FusionMechanism::kNumericOnly, fc).r2);
    worst_gap = std::max(worst_gap, gap);
    mean_gap += gap / 10.0;
  }
  return {wins >= 8 && worst_gap <= 0.02,
          fmt::format("cross >= concat in {}/10 seeds; noise channel |cross - numeric_only| worst {:.4f}, "
                      "mean {:.4f}",
                      wins, worst_gap, mean_gap)};
}

// ---------------------------------------------------------------- 9
Outcome pid_calibration(const fs::path&) {
  PidPolicy pid;
  EvalConfig ec;
  ec.scenario = Scenario::kMedium;
  ec.rhos = {1.0};
  ec.n_seeds = 20;
  ec.stationary = true;
  ec.seed = derive_seed(0, "eval");
  const EvalReport rep = evaluate({&pid}, ec);
  int ok = 0;
  double lo = 1e9, hi = 0.0;
  for (const EvalRow& r : rep.rows) {
    const double ratio = r.score.cost / r.budget;
    ok += std::abs(ratio - 1.0) <= 0.1;
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  return {ok >= 18 && rep.rows.size() == 20,
          fmt::format("{}/20 seeds spend within 10% of budget (spend/budget in [{:.3f}, {:.3f}])", ok, lo, hi)};
}

// ---------------------------------------------------------------- 10
int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome end_to_end(const fs::path& work) {
  const fs::path run = work / "e2e";
  fs::remove_all(run);
  fs::create_directories(run);
  const fs::path cfg = run / "desk.cfg";
  {
    std::ofstream f(cfg);
    f << "# desk-scale pipeline\n"
         "scenario=high\nseed=0\nn_trajectories=200\n"
         "layers=2\nheads=4\nd_model=32\nd_ff=128\ncontext=16\n"
         "steps=5000\nbatch=16\nlr=1e-3\ncheckpoint_every=1000\nbc_steps=5000\n"
         "seeds=5\nrho=0.5,0.75,1,1.25,1.5\nmethods=pid,bc,dt,sembid\n";
  }
  const std::string base = fmt::format("\"{}\" {{}} --config \"{}\" --out \"{}\" >> \"{}\" 2>&1", SEMBID_CLI_PATH,
                                       cfg.string(), run.string(), (run / "pipeline.log").string());
  for (const std::string sub : {"gen-data", "train --tokens all", "train --tokens none", "train --set model=bc", "eval"}) {
    const std::string cmd = fmt::format(fmt::runtime(base), sub);
    const int code = shell(cmd);
    if (code != 0) return {false, fmt::format("'{}' exited with {} (see {})", sub, code, (run / "pipeline.log").string())};
  }
  std::ifstream f(run / "eval" / "report.json");
  const nlohmann::json j = nlohmann::json::parse(f);
  const std::vector<std::string> methods = {"PID", "BC", "DT", "SemBid"};
  int cells = 0;
  std::map<std::string, double> mean;
  for (const auto& s : j.at("summary")) {
    const std::string m = s.at("method");
    const double v = s.at("mean_score");
    if (std::find(methods.begin(), methods.end(), m) != methods.end() && s.at("n") == 5 && std::isfinite(v)) {
      ++cells;
      mean[m] += v / 5.0;
    }
  }
  const bool complete = cells == 20 && j.at("rows").size() == 100;
  const bool soft = mean["SemBid"] >= mean["DT"];
  Outcome o;
  o.pass = complete;
  o.soft_fail = !soft;
  o.detail = fmt::format("{}/20 cells, {} rows; mean score PID {:.2f} BC {:.2f} DT {:.2f} SemBid {:.2f}; "
                         "soft check SemBid >= DT: {}",
                         cells, j.at("rows").size(), mean["PID"], mean["BC"], mean["DT"], mean["SemBid"],
                         soft ? "holds" : "does not hold");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work-dir", work, "scratch directory");
  app.add_option("--only", only, "criterion ids to run");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const std::vector<Criterion> criteria = {
      {1, "score formula oracle", 1.0, score_oracle},
      {2, "auction brute-force equivalence", 10.0, auction_oracle},
      {3, "causality of the full model", 60.0, causality},
      {4, "gradient check of the micro model", 120.0, gradient_check},
      {5, "overfit 8 trajectories (SemBid and DT)", 600.0, overfit},
      {6, "semantic rule boundaries and pools", 5.0, semantic_rules},
      {7, "probing: aligned vs shuffled", 120.0, probing},
      {8, "fusion ordering", 300.0, fusion},
      {9, "PID calibration", 60.0, pid_calibration},
      {10, "end-to-end pipeline", 1800.0, end_to_end},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(work);
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.limit_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::cout << fmt::format("{} {:>2} {}: {} [{:.2f}s, limit {:g}s{}]{}\n", pass ? "PASS" : "FAIL", c.id, c.title,
                             o.detail, secs, c.limit_s, in_time ? "" : ", too slow",
                             o.soft_fail ? " (soft check failed, not gating)" : "");
    std::cout.flush();
  }
  return failed == 0 ? 0 : 1;
}
