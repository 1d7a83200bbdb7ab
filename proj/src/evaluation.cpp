#include "sembid/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "sembid/errors.hpp"
#include "sembid/training.hpp"

namespace sembid {

PidPolicy::PidPolicy(std::string name, std::optional<PidConfig> cfg)
    : name_(std::move(name)), fixed_(std::move(cfg)) {
  if (fixed_) fixed_->validate();
}

void PidPolicy::begin_episode(const AuctionEnv& env, std::uint64_t) {
  ctl_ = std::make_unique<PidController>(fixed_ ? *fixed_ : PidConfig::for_market(env.config()));
}

double PidPolicy::act(const AuctionEnv& env) {
  if (!ctl_) throw StateError("PID policy used before begin_episode");
  return ctl_->act(env);
}

BcBiddingPolicy::BcBiddingPolicy(std::shared_ptr<const BcPolicy> bc, std::string name)
    : bc_(std::move(bc)), name_(std::move(name)) {
  if (!bc_) throw ConfigError("BC policy is null");
}

double BcBiddingPolicy::act(const AuctionEnv& env) {
  return std::clamp(bc_->predict(env.state().features), 0.0, env.config().lambda_max);
}

TransformerPolicy::TransformerPolicy(std::shared_ptr<const SemBidModel<float>> model,
                                     NormalizationStats stats, SemanticConfig semantics,
                                     std::shared_ptr<TextTable> texts, std::string name,
                                     double target_rtg_scale)
    : model_(std::move(model)),
      stats_(stats),
      semantics_(semantics),
      texts_(std::move(texts)),
      name_(std::move(name)),
      target_rtg_scale_(target_rtg_scale) {
  if (!model_) throw ConfigError("transformer policy needs a model");
  if (model_->config().tokens.count() > 0 && !texts_) {
    throw ConfigError("semantic model needs a text table");
  }
  if (!(target_rtg_scale_ >= 0.0)) throw ConfigError("target_rtg_scale must be nonnegative");
}

void TransformerPolicy::begin_episode(const AuctionEnv& env, std::uint64_t episode_seed) {
  if (env.config().n_periods > model_->config().max_episode_len) {
    throw ConfigError("episode is longer than the model's max_episode_len");
  }
  ctx_ = EncodedTrajectory{};
  rtg_history_.clear();
  template_rng_ = std::make_unique<Rng>(derive_seed(semantics_.template_seed, episode_seed));
  selector_ = std::make_unique<VariantSelector>(*template_rng_);
}

double TransformerPolicy::act(const AuctionEnv& env) {
  if (!selector_) throw StateError("transformer policy used before begin_episode");
  const ModelConfig& mc = model_->config();
  const EpisodeLedger& ledger = env.ledger();
  const CampaignState& state = env.state();

  double rtg = target_rtg_scale_ * stats_.max_return;
  if (!rtg_history_.empty()) {
    rtg = std::max(rtg_history_.back() - ledger.outcomes.back().value, 0.0);
  }
  rtg_history_.push_back(rtg);
  const double rtg_scale = stats_.rtg_scale > 0.0 ? stats_.rtg_scale : 1.0;

  ctx_.timesteps.push_back(state.period - 1);
  ctx_.rtg.push_back(static_cast<float>(rtg / rtg_scale));
  ctx_.states.push_back(stats_.normalize(state.features));
  ctx_.actions.push_back(0.0f);  // placeholder; never visible to this step's STATE
  ctx_.targets.push_back(0.0f);
  ctx_.mask.push_back(1.0f);

  if (mc.tokens.count() > 0) {
    std::vector<PeriodTelemetry> history;
    history.reserve(ledger.outcomes.size());
    for (std::size_t k = 0; k < ledger.outcomes.size(); ++k) {
      const PeriodOutcome& o = ledger.outcomes[k];
      history.push_back({o.conversions, o.spend, static_cast<double>(o.wins), ledger.actions[k]});
    }
    StepContext sc;
    sc.target_cpa = state.target_cpa;
    sc.mean_pvalue = state.mean_pvalue;
    sc.budget_ratio = state.budget_ratio();
    sc.history = history;
    const SemanticTokenSet tok = generate_semantic_tokens(sc, semantics_, *selector_);
    ctx_.text_ids[0].push_back(texts_->intern(tok.task.text));
    ctx_.text_ids[1].push_back(texts_->intern(tok.history.text));
    ctx_.text_ids[2].push_back(texts_->intern(tok.strategy.text));
  }

  const int len = ctx_.length();
  const int start = std::max(0, len - mc.context_window);
  const ModelBatch<float> mb =
      assemble_batch<float>({&ctx_}, {start}, len - start, mc, texts_.get());
  const double raw = model_->predict_actions(mb).back();
  const double lambda = std::clamp(std::isfinite(raw) ? raw : 0.0, 0.0, env.config().lambda_max);
  ctx_.actions.back() = static_cast<float>((lambda - stats_.action_mean) / stats_.action_std);
  return lambda;
}

EpisodeLedger run_episode(BiddingPolicy& policy, const MarketConfig& market,
                          std::uint64_t episode_seed) {
  AuctionEnv env(market);
  policy.begin_episode(env, episode_seed);
  while (!env.done()) env.step(policy.act(env));
  return env.ledger();
}

void EvalConfig::validate() const {
  if (rhos.empty()) throw ConfigError("evaluation needs at least one rho");
  for (double r : rhos)
    if (!(r > 0.0)) throw ConfigError("rho must be positive");
  if (n_seeds < 1) throw ConfigError("evaluation needs at least one seed");
}

EvalReport evaluate(const std::vector<BiddingPolicy*>& policies, const EvalConfig& cfg) {
  cfg.validate();
  if (policies.empty()) throw ConfigError("no methods to evaluate");
  EvalReport report;
  report.scenario = cfg.scenario;
  report.reference = cfg.reference;
  const std::uint64_t root = derive_seed(cfg.seed, "eval-market");
  for (BiddingPolicy* p : policies) {
    const std::string name = p->name();
    if (std::find(report.methods.begin(), report.methods.end(), name) != report.methods.end()) {
      throw ConfigError("duplicate method name '" + name + "'");
    }
    report.methods.push_back(name);
    for (double rho : cfg.rhos) {
      for (int s = 0; s < cfg.n_seeds; ++s) {
        MarketConfig market = MarketConfig::preset(cfg.scenario, derive_seed(root, static_cast<std::uint64_t>(s)));
        market.budget_scale = rho;
        market.stationary = cfg.stationary;
        const EpisodeLedger ledger = run_episode(*p, market, market.seed);
        EvalRow row;
        row.method = name;
        row.rho = rho;
        row.seed_index = s;
        row.market_seed = market.seed;
        row.score = compute_score(ledger, market.target_cpa);
        row.budget = market.budget();
        report.rows.push_back(row);
      }
    }
  }
  summarize(report);
  return report;
}

void summarize(EvalReport& report) {
  report.summary.clear();
  std::vector<double> rhos;
  for (const auto& r : report.rows)
    if (std::find(rhos.begin(), rhos.end(), r.rho) == rhos.end()) rhos.push_back(r.rho);
  std::map<std::pair<std::string, double>, EvalSummary> cells;
  for (const auto& r : report.rows) {
    auto& c = cells[{r.method, r.rho}];
    c.method = r.method;
    c.rho = r.rho;
    c.n += 1;
    c.mean_score += r.score.score;
    c.mean_cpa += r.score.cpa;
    c.mean_spend_ratio += r.budget > 0.0 ? r.score.cost / r.budget : 0.0;
  }
  for (auto& [key, c] : cells) {
    c.mean_score /= c.n;
    c.mean_cpa /= c.n;
    c.mean_spend_ratio /= c.n;
  }
  for (const auto& m : report.methods) {
    for (double rho : rhos) {
      const auto it = cells.find({m, rho});
      if (it == cells.end()) continue;
      EvalSummary s = it->second;
      const auto ref = cells.find({report.reference, rho});
      if (ref != cells.end() && ref->second.mean_score != 0.0) {
        s.relative_improvement = (s.mean_score - ref->second.mean_score) / std::abs(ref->second.mean_score);
      }
      report.summary.push_back(s);
    }
  }
}

double EvalReport::overall_mean(const std::string& method) const {
  double total = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.method != method) continue;
    total += r.score.score;
    ++n;
  }
  if (n == 0) throw LookupError("no evaluation rows for method '" + method + "'");
  return total / n;
}

std::string EvalReport::rows_csv() const {
  std::string out = "method,rho,seed_index,market_seed,value,cost,cpa,penalty,score,budget\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{:g},{},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}\n", r.method, r.rho,
                       r.seed_index, r.market_seed, r.score.value, r.score.cost, r.score.cpa,
                       r.score.penalty, r.score.score, r.budget);
  }
  return out;
}

std::string EvalReport::summary_csv() const {
  std::string out = fmt::format("method,rho,n,mean_score,mean_cpa,mean_spend_ratio,rel_vs_{}\n", reference);
  for (const auto& s : summary) {
    out += fmt::format("{},{:g},{},{:.9g},{:.9g},{:.9g},{:.9g}\n", s.method, s.rho, s.n, s.mean_score,
                       s.mean_cpa, s.mean_spend_ratio, s.relative_improvement);
  }
  return out;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["schema"] = "sembid-eval";
  j["version"] = 1;
  j["scenario"] = std::string(scenario_name(scenario));
  j["reference"] = reference;
  j["methods"] = methods;
  for (const auto& r : rows) {
    j["rows"].push_back({{"method", r.method},
                         {"rho", r.rho},
                         {"seed_index", r.seed_index},
                         {"market_seed", r.market_seed},
                         {"value", r.score.value},
                         {"cost", r.score.cost},
                         {"cpa", r.score.cpa},
                         {"penalty", r.score.penalty},
                         {"score", r.score.score},
                         {"budget", r.budget}});
  }
  for (const auto& s : summary) {
    j["summary"].push_back({{"method", s.method},
                            {"rho", s.rho},
                            {"n", s.n},
                            {"mean_score", s.mean_score},
                            {"mean_cpa", s.mean_cpa},
                            {"mean_spend_ratio", s.mean_spend_ratio},
                            {"relative_improvement", s.relative_improvement}});
  }
  return j;
}

}  // namespace sembid
