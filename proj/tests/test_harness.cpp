#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "sembid/errors.hpp"
#include "sembid/harness.hpp"

using namespace sembid;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "sembid_test_harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

RunConfig tiny_run(const fs::path& out) {
  RunConfig c;
  c.set("out_dir", out.string());
  c.set("n_trajectories", "4");
  c.set("layers", "1");
  c.set("heads", "2");
  c.set("d_model", "16");
  c.set("d_ff", "16");
  c.set("context", "8");
  c.set("steps", "3");
  c.set("batch", "2");
  c.set("bc_steps", "5");
  c.set("checkpoint_every", "0");
  c.set("seeds", "1");
  c.set("rho", "1");
  return c;
}

}  // namespace

TEST_CASE("defaults and typed getters") {
  RunConfig c;
  CHECK(c.get("scenario") == "high");
  CHECK(c.get_int("layers") == 6);
  CHECK(c.get_double("lr") == 1e-4);
  CHECK_FALSE(c.get_bool("stationary"));
  CHECK(c.get_doubles("rho") == std::vector<double>{0.5, 0.75, 1.0, 1.25, 1.5});
  CHECK(c.get_list("methods") == std::vector<std::string>{"pid", "bc", "dt", "sembid"});
  CHECK_FALSE(c.has("resume"));
  CHECK(c.scenario() == Scenario::kHigh);
}

TEST_CASE("bad keys and values are configuration errors") {
  RunConfig c;
  CHECK_THROWS_AS(c.set("learning_rate", "1"), ConfigError);
  CHECK_THROWS_AS(c.get("nope"), ConfigError);
  CHECK_THROWS_AS(c.apply_assignment("layers"), ConfigError);
  c.set("layers", "two");
  CHECK_THROWS_AS(c.get_int("layers"), ConfigError);
  c.set("lr", "1e-3x");
  CHECK_THROWS_AS(c.get_double("lr"), ConfigError);
  c.set("stationary", "maybe");
  CHECK_THROWS_AS(c.get_bool("stationary"), ConfigError);
  c.set("rho", "1,abc");
  CHECK_THROWS_AS(c.get_doubles("rho"), ConfigError);
  c.set("seed", "-1");
  CHECK_THROWS_AS(c.seed(), ConfigError);
  c.set("scenario", "extreme");
  CHECK_THROWS_AS(c.scenario(), ConfigError);
}

TEST_CASE("config files and precedence") {
  const fs::path dir = scratch("files");
  write(dir / "run.cfg", "# comment\n\nlayers = 3  # trailing\nlr=5e-4\n");
  RunConfig c;
  c.load_file(dir / "run.cfg");
  CHECK(c.get_int("layers") == 3);
  CHECK(c.get_double("lr") == 5e-4);
  c.apply_assignment("layers=4");
  CHECK(c.get_int("layers") == 4);

  write(dir / "bad.cfg", "layers=2\n\nwidth=9\n");
  RunConfig d;
  try {
    d.load_file(dir / "bad.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bad.cfg:3") != std::string::npos);
  }
  CHECK_THROWS_AS(d.load_file(dir / "absent.cfg"), ConfigError);
}

TEST_CASE("dump is sorted and persist writes it") {
  const fs::path dir = scratch("persist");
  RunConfig c;
  c.set("seed", "9");
  const std::string text = c.dump();
  CHECK(text.rfind("ablate=\n", 0) == 0);
  CHECK(text.find("seed=9\n") != std::string::npos);
  c.persist(dir);
  CHECK(slurp(dir / "resolved_config.txt") == text);
}

TEST_CASE("model and token resolution") {
  RunConfig c;
  CHECK(token_set(c).count() == 3);
  c.set("ablate", "history");
  CHECK(token_set(c).to_string() == "task,strategy");
  CHECK(default_model_name(TokenSet::all()) == "sembid");
  CHECK(default_model_name(TokenSet::none()) == "dt");
  CHECK(default_model_name(TokenSet::parse("task,history")) == "sembid_task_history");
  c.set("heads", "5");
  CHECK_THROWS_AS(model_config(c), ConfigError);
}

TEST_CASE("library commands run a tiny pipeline") {
  const fs::path out = scratch("pipeline");
  RunConfig c = tiny_run(out);
  CHECK_THROWS_AS(cmd_train(c), ConfigError);
  cmd_gen_data(c);
  CHECK(fs::exists(out / "data" / "dataset.sbds"));
  CHECK(fs::exists(out / "data" / "dataset.json"));
  CHECK(fs::exists(out / "data" / "dataset.csv"));

  RunConfig dt = c;
  dt.set("tokens", "none");
  const TrainSummary s = cmd_train(dt);
  CHECK(s.name == "dt");
  CHECK(s.result.steps_done == 3);
  CHECK(fs::exists(out / "models" / "dt" / "model.sbck"));
  CHECK(fs::exists(out / "models" / "dt" / "resolved_config.txt"));

  RunConfig bc = c;
  bc.set("model", "bc");
  CHECK(cmd_train(bc).name == "bc");

  RunConfig ev = c;
  ev.set("methods", "pid,bc,dt");
  const EvalReport r = cmd_eval(ev);
  CHECK(r.rows.size() == 3);
  CHECK(r.methods == std::vector<std::string>{"PID", "BC", "DT"});
  CHECK(fs::exists(out / "eval" / "report.json"));
  CHECK(fs::exists(out / "eval" / "summary.csv"));

  ev.set("methods", "pid,sembid");
  CHECK_THROWS_AS(cmd_eval(ev), ConfigError);

  const fs::path merged = out / "merged";
  cmd_report({out}, merged);
  CHECK(fs::exists(merged / "merged_summary.csv"));
  CHECK_THROWS_AS(cmd_report({}, merged), ConfigError);
}
