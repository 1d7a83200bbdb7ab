#include "sembid/harness.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "sembid/baselines.hpp"
#include "sembid/dataset.hpp"
#include "sembid/embedding.hpp"
#include "sembid/errors.hpp"
#include "sembid/probing.hpp"

namespace sembid {

namespace {

const std::map<std::string, std::string>& default_values() {
  static const std::map<std::string, std::string> d = {
      {"scenario", "high"},
      {"seed", "0"},
      {"out_dir", "runs/default"},
      {"n_trajectories", "200"},
      {"dataset", ""},
      {"encoder", "hash"},
      {"cache_mode", "strict"},
      {"tokens", "all"},
      {"ablate", ""},
      {"style", "standard"},
      {"regime", "auto"},
      {"layers", "6"},
      {"heads", "4"},
      {"d_model", "128"},
      {"d_ff", "512"},
      {"dropout", "0.1"},
      {"context", "48"},
      {"steps", "5000"},
      {"batch", "64"},
      {"lr", "1e-4"},
      {"weight_decay", "1e-4"},
      {"clip_norm", "0"},
      {"checkpoint_every", "1000"},
      {"resume", ""},
      {"model", "transformer"},
      {"name", ""},
      {"bc_steps", "5000"},
      {"bc_hidden", "128"},
      {"rho", "0.5,0.75,1,1.25,1.5"},
      {"seeds", "5"},
      {"stationary", "false"},
      {"methods", "pid,bc,dt,sembid"},
      {"reference", "PID"},
      {"target_rtg_scale", "1.0"},
      {"probe_trajectories", "120"},
      {"probe_seeds", "10"},
      {"fusion_seeds", "3"},
      {"fusion_steps", "1500"},
  };
  return d;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << text;
}

std::string display_name(const std::string& method) {
  if (method == "pid") return "PID";
  if (method == "bc") return "BC";
  if (method == "dt") return "DT";
  if (method == "sembid") return "SemBid";
  return method;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw DataIntegrityError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace

RunConfig::RunConfig() : values_(default_values()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = trim(value);
}

void RunConfig::apply_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_assignment(line);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

bool RunConfig::has(const std::string& key) const { return !get(key).empty(); }

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

long long RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t pos = 0;
    const long long n = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' expects true or false, got '" + v + "'");
}

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_commas(get(key))) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' expects numbers, got '" + item + "'");
    }
  }
  return out;
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  return split_commas(get(key));
}

std::uint64_t RunConfig::seed() const {
  const long long s = get_int("seed");
  if (s < 0) throw ConfigError("seed must be nonnegative");
  return static_cast<std::uint64_t>(s);
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

void RunConfig::persist(const std::filesystem::path& dir) const {
  write_text(dir / "resolved_config.txt", dump());
}

MarketConfig dataset_market(const RunConfig& cfg) {
  MarketConfig m = MarketConfig::preset(cfg.scenario(), derive_seed(cfg.seed(), "dataset-market"));
  m.stationary = cfg.get_bool("stationary");
  return m;
}

SemanticConfig semantic_config(const RunConfig& cfg) {
  SemanticConfig sem = SemanticConfig::for_scenario(cfg.scenario());
  if (cfg.get("regime") != "auto") sem.regime = parse_regime(cfg.get("regime"));
  sem.style = parse_style(cfg.get("style"));
  sem.template_seed = derive_seed(cfg.seed(), "templates");
  sem.validate();
  return sem;
}

std::shared_ptr<TextTable> make_text_table(const RunConfig& cfg) {
  const std::string mode = cfg.get("cache_mode");
  if (mode != "strict" && mode != "permissive") {
    throw ConfigError("cache_mode must be strict or permissive");
  }
  std::shared_ptr<const TextEncoder> enc =
      make_encoder(cfg.get("encoder"), mode == "strict" ? CacheMode::kStrict : CacheMode::kPermissive);
  return std::make_shared<TextTable>(
      std::make_shared<SemanticEmbedder>(enc, derive_seed(cfg.seed(), "projection")));
}

TokenSet token_set(const RunConfig& cfg) {
  if (cfg.has("ablate")) return TokenSet::ablate(cfg.get("ablate"));
  return TokenSet::parse(cfg.get("tokens"));
}

ModelConfig model_config(const RunConfig& cfg) {
  ModelConfig m;
  m.layers = static_cast<int>(cfg.get_int("layers"));
  m.heads = static_cast<int>(cfg.get_int("heads"));
  m.d_model = static_cast<int>(cfg.get_int("d_model"));
  m.d_ff = static_cast<int>(cfg.get_int("d_ff"));
  m.dropout = cfg.get_double("dropout");
  m.context_window = static_cast<int>(cfg.get_int("context"));
  m.tokens = token_set(cfg);
  m.validate();
  return m;
}

TrainConfig train_config(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  TrainConfig t;
  t.steps = cfg.get_int("steps");
  t.batch_size = static_cast<int>(cfg.get_int("batch"));
  t.optimizer.lr = cfg.get_double("lr");
  t.optimizer.weight_decay = cfg.get_double("weight_decay");
  t.optimizer.clip_norm = cfg.get_double("clip_norm");
  t.checkpoint_every = cfg.get_int("checkpoint_every");
  t.out_dir = out_dir;
  t.seed = derive_seed(cfg.seed(), "train");
  t.validate();
  return t;
}

std::string default_model_name(const TokenSet& tokens) {
  if (tokens.count() == 3) return "sembid";
  if (tokens.count() == 0) return "dt";
  std::string n = "sembid_" + tokens.to_string();
  std::replace(n.begin(), n.end(), ',', '_');
  return n;
}

std::filesystem::path dataset_path(const RunConfig& cfg) {
  if (cfg.has("dataset")) return cfg.get("dataset");
  return cfg.out_dir() / "data" / "dataset";
}

void cmd_gen_data(const RunConfig& cfg) {
  const long long n = cfg.get_int("n_trajectories");
  if (n < 1) throw ConfigError("n_trajectories must be >= 1");
  const MarketConfig market = dataset_market(cfg);
  market.validate();
  const Dataset ds = generate_offline_dataset(market, BehaviorMix{}, static_cast<int>(n),
                                              derive_seed(cfg.seed(), "dataset"));
  const auto base = dataset_path(cfg);
  std::filesystem::create_directories(base.parent_path());
  save_dataset_binary(ds, base.string() + ".sbds");
  save_dataset_sidecar(ds, base.string() + ".json");
  save_dataset_csv(ds, base.string() + ".csv");
  cfg.persist(cfg.out_dir());
  std::cout << fmt::format("wrote {} trajectories x {} periods to {}.sbds\n", ds.trajectories.size(),
                           ds.n_periods(), base.string());
}

namespace {

Dataset load_run_dataset(const RunConfig& cfg) {
  const auto base = dataset_path(cfg);
  const std::filesystem::path bin = base.string() + ".sbds";
  const std::filesystem::path side = base.string() + ".json";
  if (!std::filesystem::exists(bin) || !std::filesystem::exists(side)) {
    throw ConfigError("dataset not found at " + bin.string() + " (run gen-data first)");
  }
  return load_dataset(bin, side);
}

std::string model_name(const RunConfig& cfg) {
  if (cfg.has("name")) return cfg.get("name");
  if (cfg.get("model") == "bc") return "bc";
  return default_model_name(token_set(cfg));
}

TrainSummary train_transformer(const RunConfig& cfg, const Dataset& ds, const std::string& name,
                               const std::filesystem::path& dir) {
  const SemanticConfig sem = semantic_config(cfg);
  const ModelConfig mc = model_config_for(model_config(cfg), ds.stats);
  if (mc.max_episode_len < ds.n_periods()) throw ConfigError("episodes longer than max_episode_len");
  std::shared_ptr<TextTable> texts;
  if (mc.tokens.count() > 0) texts = make_text_table(cfg);
  const EncodedDataset enc = encode_dataset(ds, ds.stats, sem, texts.get());

  TrainConfig tc = train_config(cfg, dir);
  tc.sidecar_extra = {{"name", name},
                      {"stats", stats_to_json(ds.stats)},
                      {"encoder", cfg.get("encoder")},
                      {"projection_seed", derive_seed(cfg.seed(), "projection")},
                      {"style", cfg.get("style")},
                      {"regime", std::string(regime_name(sem.regime))},
                      {"scenario", cfg.get("scenario")}};
  SemBidModel<float> model(mc, derive_seed(cfg.seed(), "init"));
  std::optional<Checkpoint> resume;
  if (cfg.has("resume")) resume = load_checkpoint(cfg.get("resume"));
  TrainSummary s;
  s.name = name;
  s.result = train_model(model, enc, texts.get(), tc, resume ? &*resume : nullptr);
  s.checkpoint = dir / "model.sbck";
  std::cout << fmt::format("{}: {} params, {} steps, final loss {:.6g}, {:.1f}s\n", name,
                           model.parameter_count(), s.result.steps_done, s.result.final_loss,
                           s.result.seconds);
  return s;
}

std::unique_ptr<BiddingPolicy> load_policy(const RunConfig& cfg, const std::string& method,
                                           const std::filesystem::path& models_dir) {
  const std::string shown = display_name(method);
  if (method == "pid") return std::make_unique<PidPolicy>(shown);
  if (method == "bc") {
    const auto path = models_dir / "bc" / "bc.sbck";
    if (!std::filesystem::exists(path)) throw ConfigError("no BC checkpoint at " + path.string());
    return std::make_unique<BcBiddingPolicy>(std::make_shared<const BcPolicy>(BcPolicy::load(path)), shown);
  }
  const auto path = models_dir / method / "model.sbck";
  if (!std::filesystem::exists(path)) {
    throw ConfigError("no checkpoint for method '" + method + "' at " + path.string());
  }
  const nlohmann::json side = read_json(path.string() + ".json");
  if (!side.contains("extra") || !side["extra"].contains("stats")) {
    throw DataIntegrityError(path.string() + ".json lacks normalization stats");
  }
  const nlohmann::json& extra = side["extra"];
  if (extra.value("scenario", cfg.get("scenario")) != cfg.get("scenario")) {
    throw ConfigError(fmt::format("checkpoint '{}' was trained on scenario {}, evaluating {}", method,
                                  extra.value("scenario", ""), cfg.get("scenario")));
  }
  auto model = std::make_shared<const SemBidModel<float>>(load_model(path));
  SemanticConfig sem = semantic_config(cfg);
  std::shared_ptr<TextTable> texts;
  if (model->config().tokens.count() > 0) {
    if (extra.value("encoder", "") != cfg.get("encoder")) {
      throw ConfigError("checkpoint '" + method + "' was trained with encoder " +
                        extra.value("encoder", "?"));
    }
    sem.style = parse_style(extra.value("style", "standard"));
    sem.regime = parse_regime(extra.value("regime", "high"));
    const std::string mode = cfg.get("cache_mode");
    std::shared_ptr<const TextEncoder> enc = make_encoder(
        cfg.get("encoder"), mode == "permissive" ? CacheMode::kPermissive : CacheMode::kStrict);
    texts = std::make_shared<TextTable>(std::make_shared<SemanticEmbedder>(
        enc, extra.at("projection_seed").get<std::uint64_t>()));
  }
  return std::make_unique<TransformerPolicy>(model, stats_from_json(extra.at("stats")), sem, texts,
                                             shown, cfg.get_double("target_rtg_scale"));
}

EvalConfig eval_config(const RunConfig& cfg) {
  EvalConfig ec;
  ec.scenario = cfg.scenario();
  ec.rhos = cfg.get_doubles("rho");
  ec.n_seeds = static_cast<int>(cfg.get_int("seeds"));
  ec.seed = derive_seed(cfg.seed(), "eval");
  ec.stationary = cfg.get_bool("stationary");
  ec.reference = cfg.get("reference");
  ec.validate();
  return ec;
}

void write_report(const EvalReport& report, const std::filesystem::path& dir) {
  write_text(dir / "rows.csv", report.rows_csv());
  write_text(dir / "summary.csv", report.summary_csv());
  write_text(dir / "report.json", report.to_json().dump(2) + "\n");
}

void print_summary(const EvalReport& report) {
  std::cout << fmt::format("{:<14}", "method");
  std::vector<double> rhos;
  for (const auto& s : report.summary)
    if (std::find(rhos.begin(), rhos.end(), s.rho) == rhos.end()) rhos.push_back(s.rho);
  for (double r : rhos) std::cout << fmt::format("{:>10}", fmt::format("rho={:g}", r));
  std::cout << fmt::format("{:>10}\n", "mean");
  for (const auto& m : report.methods) {
    std::cout << fmt::format("{:<14}", m);
    for (double r : rhos) {
      for (const auto& s : report.summary)
        if (s.method == m && s.rho == r) std::cout << fmt::format("{:>10.2f}", s.mean_score);
    }
    std::cout << fmt::format("{:>10.2f}\n", report.overall_mean(m));
  }
}

}  // namespace

TrainSummary cmd_train(const RunConfig& cfg) {
  const Dataset ds = load_run_dataset(cfg);
  const std::string name = model_name(cfg);
  const auto dir = cfg.out_dir() / "models" / name;
  std::filesystem::create_directories(dir);
  cfg.persist(dir);
  const std::string kind = cfg.get("model");
  if (kind == "bc") {
    BcConfig bc;
    bc.hidden = static_cast<int>(cfg.get_int("bc_hidden"));
    bc.steps = cfg.get_int("bc_steps");
    bc.batch_size = static_cast<int>(cfg.get_int("batch"));
    bc.optimizer.lr = cfg.get_double("lr");
    bc.optimizer.weight_decay = cfg.get_double("weight_decay");
    bc.seed = derive_seed(cfg.seed(), "bc");
    const BcPolicy policy = bc_train(ds, bc);
    TrainSummary s;
    s.name = name;
    s.checkpoint = dir / "bc.sbck";
    policy.save(s.checkpoint);
    s.result.steps_done = bc.steps;
    std::cout << fmt::format("bc: {} params, {} steps\n", policy.parameter_count(), bc.steps);
    return s;
  }
  if (kind != "transformer") throw ConfigError("model must be transformer or bc, got '" + kind + "'");
  return train_transformer(cfg, ds, name, dir);
}

EvalReport cmd_eval(const RunConfig& cfg) {
  const EvalConfig ec = eval_config(cfg);
  std::vector<std::unique_ptr<BiddingPolicy>> owned;
  std::vector<BiddingPolicy*> policies;
  for (const auto& m : cfg.get_list("methods")) {
    owned.push_back(load_policy(cfg, m, cfg.out_dir() / "models"));
    policies.push_back(owned.back().get());
  }
  const EvalReport report = evaluate(policies, ec);
  const auto dir = cfg.out_dir() / "eval";
  cfg.persist(dir);
  write_report(report, dir);
  print_summary(report);
  return report;
}

EvalReport cmd_ablate(const RunConfig& cfg) {
  const Dataset ds = load_run_dataset(cfg);
  const std::vector<std::pair<std::string, std::string>> variants = {
      {"sembid", "none"}, {"wo_task", "task"}, {"wo_history", "history"},
      {"wo_strategy", "strategy"}, {"wo_all", "task,history,strategy"}};
  const auto models_dir = cfg.out_dir() / "ablate" / "models";
  std::vector<std::unique_ptr<BiddingPolicy>> owned;
  std::vector<BiddingPolicy*> policies;
  owned.push_back(std::make_unique<PidPolicy>("PID"));
  policies.push_back(owned.back().get());
  for (const auto& [name, drop] : variants) {
    RunConfig v = cfg;
    v.set("ablate", drop);
    v.set("tokens", "all");
    train_transformer(v, ds, name, models_dir / name);
    owned.push_back(load_policy(v, name, models_dir));
    policies.push_back(owned.back().get());
  }
  const EvalReport report = evaluate(policies, eval_config(cfg));
  const auto dir = cfg.out_dir() / "ablate";
  cfg.persist(dir);
  write_report(report, dir);
  print_summary(report);
  return report;
}

void cmd_probe(const RunConfig& cfg) {
  ProbeStudyConfig pc;
  pc.scenario = cfg.scenario();
  pc.seed = derive_seed(cfg.seed(), "probe");
  pc.n_trajectories = static_cast<int>(cfg.get_int("probe_trajectories"));
  pc.n_seeds = static_cast<int>(cfg.get_int("probe_seeds"));
  pc.fusion_seeds = static_cast<int>(cfg.get_int("fusion_seeds"));
  pc.fusion.steps = cfg.get_int("fusion_steps");
  pc.run_fusion = pc.fusion_seeds > 0;
  const std::string mode = cfg.get("cache_mode");
  const auto enc = make_encoder(cfg.get("encoder"), mode == "permissive" ? CacheMode::kPermissive
                                                                         : CacheMode::kStrict);
  const ProbeStudy study = run_probe_study(pc, *enc);
  const auto dir = cfg.out_dir() / "probe";
  cfg.persist(dir);
  write_text(dir / "probes.csv", study.probes_csv());
  write_text(dir / "fusion.csv", study.fusion_csv());
  write_text(dir / "report.json", study.to_json().dump(2) + "\n");
  std::cout << study.probes_csv();
  for (const auto& [pair, c] : study.cca) {
    std::cout << fmt::format("cca {} mean={:.4f} k={}\n", pair, c.mean(), c.k_used);
  }
  std::cout << study.fusion_csv();
}

void cmd_report(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out_dir) {
  if (runs.empty()) throw ConfigError("report needs at least one run directory");
  std::string rows = "run,method,rho,seed_index,score,cost,cpa,penalty\n";
  std::string summary = "run,method,rho,n,mean_score,reference,rel_gain\n";
  std::string series = "series,rho,mean_score\n";
  std::optional<std::string> scenario;
  std::size_t n_rows = 0;
  for (const auto& run : runs) {
    const auto path = run / "eval" / "report.json";
    if (!std::filesystem::exists(path)) throw ConfigError("no eval report in " + run.string());
    const nlohmann::json j = read_json(path);
    if (j.value("schema", "") != "sembid-eval" || j.value("version", 0) != 1) {
      throw DataIntegrityError(path.string() + " has an unsupported schema");
    }
    if (!j.contains("rows") || !j.contains("summary") || !j["rows"].is_array()) {
      throw DataIntegrityError(path.string() + " lacks rows or summary");
    }
    const std::string sc = j.value("scenario", "");
    if (scenario && *scenario != sc) {
      throw DataIntegrityError("runs disagree on scenario: " + *scenario + " vs " + sc);
    }
    scenario = sc;
    const std::string label = run.filename().empty() ? run.parent_path().filename().string()
                                                     : run.filename().string();
    const std::string ref = j.value("reference", "");
    std::map<double, double> ref_mean;
    for (const auto& s : j["summary"])
      if (s.at("method") == ref) ref_mean[s.at("rho").get<double>()] = s.at("mean_score").get<double>();
    for (const auto& r : j["rows"]) {
      rows += fmt::format("{},{},{:g},{},{:.9g},{:.9g},{:.9g},{:.9g}\n", label,
                          r.at("method").get<std::string>(), r.at("rho").get<double>(),
                          r.at("seed_index").get<int>(), r.at("score").get<double>(),
                          r.at("cost").get<double>(), r.at("cpa").get<double>(),
                          r.at("penalty").get<double>());
      ++n_rows;
    }
    for (const auto& s : j["summary"]) {
      const double rho = s.at("rho").get<double>();
      const double mean = s.at("mean_score").get<double>();
      const auto it = ref_mean.find(rho);
      const double gain = (it != ref_mean.end() && it->second != 0.0) ? (mean - it->second) / it->second : 0.0;
      const std::string method = s.at("method").get<std::string>();
      summary += fmt::format("{},{},{:g},{},{:.9g},{},{:.9g}\n", label, method, rho,
                             s.at("n").get<int>(), mean, ref, gain);
      series += fmt::format("{}/{},{:g},{:.9g}\n", label, method, rho, mean);
    }
  }
  write_text(out_dir / "merged_rows.csv", rows);
  write_text(out_dir / "merged_summary.csv", summary);
  write_text(out_dir / "series.csv", series);
  std::cout << fmt::format("merged {} runs, {} rows into {}\n", runs.size(), n_rows, out_dir.string());
}

int run_cli(int argc, char** argv) {
  CLI::App app{"SemBid auto-bidding lab"};
  app.require_subcommand(1);

  struct Common {
    std::string config, encoder, tokens, ablate, style, regime, rho, out, scenario;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;
  };
  Common common;
  std::vector<std::string> report_runs;
  std::string report_out = "runs/report";

  const auto add_common = [&common](CLI::App* sub) {
    sub->add_option("--config", common.config, "key=value config file");
    sub->add_option("--seed", common.seed, "root seed");
    sub->add_option("--encoder", common.encoder, "hash | cache:<path>");
    sub->add_option("--tokens", common.tokens, "all | none | task,history,strategy subset");
    sub->add_option("--ablate", common.ablate, "semantic tokens to remove");
    sub->add_option("--style", common.style, "prompt style");
    sub->add_option("--regime", common.regime, "auto | high | low");
    sub->add_option("--rho", common.rho, "comma-separated budget scales");
    sub->add_option("--scenario", common.scenario, "high | medium | low");
    sub->add_option("--out", common.out, "output directory");
    sub->add_option("--set", common.sets, "key=value override (repeatable)");
  };
  CLI::App* gen = app.add_subcommand("gen-data", "generate the offline dataset");
  CLI::App* train = app.add_subcommand("train", "train a SemBid, DT or BC model");
  CLI::App* eval = app.add_subcommand("eval", "evaluate methods over budget regimes and seeds");
  CLI::App* ablate = app.add_subcommand("ablate", "train and evaluate token ablations");
  CLI::App* probe = app.add_subcommand("probe", "linear probing, CCA and fusion study");
  CLI::App* report = app.add_subcommand("report", "merge evaluation reports of several runs");
  for (CLI::App* sub : {gen, train, eval, ablate, probe}) add_common(sub);
  report->add_option("runs", report_runs, "run directories");
  report->add_option("--out", report_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (report->parsed()) {
      cmd_report({report_runs.begin(), report_runs.end()}, report_out);
      return 0;
    }
    RunConfig cfg;
    if (!common.config.empty()) cfg.load_file(common.config);
    for (const auto& s : common.sets) cfg.apply_assignment(s);
    if (common.seed) cfg.set("seed", std::to_string(*common.seed));
    if (!common.encoder.empty()) cfg.set("encoder", common.encoder);
    if (!common.tokens.empty()) cfg.set("tokens", common.tokens);
    if (!common.ablate.empty()) cfg.set("ablate", common.ablate);
    if (!common.style.empty()) cfg.set("style", common.style);
    if (!common.regime.empty()) cfg.set("regime", common.regime);
    if (!common.rho.empty()) cfg.set("rho", common.rho);
    if (!common.scenario.empty()) cfg.set("scenario", common.scenario);
    if (!common.out.empty()) cfg.set("out_dir", common.out);
    // Validate the cheap, shared pieces up front so usage errors exit early.
    (void)cfg.scenario();
    (void)cfg.seed();

    if (gen->parsed()) cmd_gen_data(cfg);
    if (train->parsed()) cmd_train(cfg);
    if (eval->parsed()) cmd_eval(cfg);
    if (ablate->parsed()) cmd_ablate(cfg);
    if (probe->parsed()) cmd_probe(cfg);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DataIntegrityError& e) {
    std::cerr << "data integrity error: " << e.what() << '\n';
    return 3;
  } catch (const ParseError& e) {
    std::cerr << "data integrity error: " << e.what() << '\n';
    return 3;
  } catch (const LookupError& e) {
    std::cerr << "data integrity error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace sembid
