#ifndef SEMBID_HARNESS_HPP_
#define SEMBID_HARNESS_HPP_

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sembid/auction_env.hpp"
#include "sembid/evaluation.hpp"
#include "sembid/sembid_model.hpp"
#include "sembid/semantic_signals.hpp"
#include "sembid/training.hpp"

namespace sembid {

// Flat key=value run configuration. Every key has a default; unknown keys
// are rejected. Precedence: defaults < config file < command-line flags.
class RunConfig {
 public:
  RunConfig();

  void set(const std::string& key, const std::string& value);
  // "key=value" lines; '#' starts a comment; blank lines ignored.
  void load_file(const std::filesystem::path& path);
  void apply_assignment(const std::string& assignment);  // "key=value"

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  bool has(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }
  std::string dump() const;  // sorted key=value lines
  // Writes dump() to <dir>/resolved_config.txt.
  void persist(const std::filesystem::path& dir) const;

  std::filesystem::path out_dir() const { return get("out_dir"); }
  Scenario scenario() const { return parse_scenario(get("scenario")); }
  std::uint64_t seed() const;

 private:
  std::map<std::string, std::string> values_;
};

// Resolved pieces shared by the commands.
MarketConfig dataset_market(const RunConfig& cfg);
SemanticConfig semantic_config(const RunConfig& cfg);
std::shared_ptr<TextTable> make_text_table(const RunConfig& cfg);
TokenSet token_set(const RunConfig& cfg);
ModelConfig model_config(const RunConfig& cfg);
TrainConfig train_config(const RunConfig& cfg, const std::filesystem::path& out_dir);
std::string default_model_name(const TokenSet& tokens);
std::filesystem::path dataset_path(const RunConfig& cfg);  // without extension

struct TrainSummary {
  std::string name;
  std::filesystem::path checkpoint;
  TrainResult result;
};

void cmd_gen_data(const RunConfig& cfg);
TrainSummary cmd_train(const RunConfig& cfg);
EvalReport cmd_eval(const RunConfig& cfg);
EvalReport cmd_ablate(const RunConfig& cfg);
void cmd_probe(const RunConfig& cfg);
// Merges eval reports of several run directories into out_dir/report.
void cmd_report(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out_dir);

// Full command-line entry point; returns the process exit code
// (0 success, 2 usage or configuration, 3 data integrity, 1 other).
int run_cli(int argc, char** argv);

}  // namespace sembid

#endif  // SEMBID_HARNESS_HPP_
