#include "nekfac/config.hpp"
#include "nekfac/dataset.hpp"
#include "nekfac/synthetic.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

using namespace nekfac;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("nekfac_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string write_file(const TempDir& dir, const std::string& name,
                       const std::string& content) {
  const fs::path p = dir.path / name;
  std::ofstream out(p);
  out << content;
  return p.string();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

const std::string& cli_binary() {
  static const std::string bin = [] {
    if (const char* env = std::getenv("NEKFAC_BIN")) return std::string(env);
    // Fallbacks for direct invocation from the repo root or build/tests.
    for (const char* cand : {"build/nekfac", "../nekfac", "./nekfac"}) {
      if (std::filesystem::exists(cand)) {
        return std::filesystem::absolute(cand).string();
      }
    }
    return std::string("nekfac");
  }();
  return bin;
}

struct CmdResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

CmdResult run_cli(const TempDir& dir, const std::string& args) {
  static int counter = 0;
  const fs::path out_file = dir.path / ("stdout_" + std::to_string(counter));
  const fs::path err_file = dir.path / ("stderr_" + std::to_string(counter));
  ++counter;
  const std::string command = cli_binary() + " " + args + " > " +
                              out_file.string() + " 2> " + err_file.string();
  const int status = std::system(command.c_str());
  CmdResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.out = read_file(out_file);
  result.err = read_file(err_file);
  return result;
}

const std::string kSmokeConfig =
    "optimizer = noisy-ekfac\n"
    "dataset = synthetic-teacher\n"
    "alpha = 0.02\n"
    "lambda = 1\n"
    "eta = 1\n"
    "dataset_n = 60\n"
    "dataset_d = 3\n"
    "dataset_hidden = 4\n"
    "hidden_units = 5\n"
    "batch_size = 10\n"
    "epochs = 10\n"
    "max_iters = 50\n"
    "n_mc_eval = 5\n"
    "seed = 11\n";

ConfigMap minimal_map() {
  return {{"optimizer", "ekfac"},
          {"dataset", "synthetic-teacher"},
          {"alpha", "0.01"},
          {"lambda", "1"},
          {"eta", "1"}};
}

}  // namespace

TEST_CASE("config files parse with comments, blanks, and last-wins keys") {
  TempDir dir;
  const std::string path = write_file(dir, "a.cfg",
                                      "# full-line comment\n"
                                      "alpha = 0.1   # inline comment\n"
                                      "\n"
                                      "  lambda=2.5\n"
                                      "alpha = 0.2\n"
                                      "dataset = synthetic-linear\n");
  const ConfigMap map = parse_config_file(path);
  CHECK(map.at("alpha") == "0.2");  // duplicate: last one wins
  CHECK(map.at("lambda") == "2.5");
  CHECK(map.at("dataset") == "synthetic-linear");
  CHECK(map.size() == 3);

  const std::string bad = write_file(dir, "b.cfg", "alpha 0.1\n");
  CHECK_THROWS_AS(parse_config_file(bad), ConfigError);
  const std::string nokey = write_file(dir, "c.cfg", "= 3\n");
  CHECK_THROWS_AS(parse_config_file(nokey), ConfigError);
  CHECK_THROWS_AS(parse_config_file((dir.path / "missing.cfg").string()),
                  ConfigError);
}

TEST_CASE("overrides replace and extend the map") {
  ConfigMap map = {{"alpha", "0.1"}};
  apply_overrides(map, {"alpha=0.5", "eta = 2"});
  CHECK(map.at("alpha") == "0.5");
  CHECK(map.at("eta") == "2");
  CHECK_THROWS_AS(apply_overrides(map, {"no-equals-sign"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(map, {"=value"}), ConfigError);
}

TEST_CASE("a minimal config resolves with documented defaults") {
  const ResolvedConfig cfg = resolve_config(minimal_map());
  CHECK(cfg.train.optimizer == OptimizerKind::kEkfac);
  CHECK(cfg.train.alpha == 0.01);
  CHECK(cfg.train.beta == 0.001);
  CHECK(cfg.train.omega == 0.01);
  CHECK(cfg.train.t_eig == 5);
  CHECK(cfg.train.t_reinit == 50);
  CHECK(cfg.train.batch_size == 10);
  CHECK(cfg.train.hidden_units == 50);
  CHECK(cfg.dataset == "synthetic-teacher");
  CHECK(cfg.split.train_fraction == 0.9);
  CHECK(cfg.split.repeats == 10);
  REQUIRE(cfg.bench_optimizers.size() == 1);
  CHECK(cfg.bench_optimizers[0] == OptimizerKind::kEkfac);
}

TEST_CASE("validation failures name the offending field") {
  auto expect_field = [](ConfigMap map, const std::string& field) {
    try {
      resolve_config(map);
      FAIL_CHECK("expected ConfigError for field ", field);
    } catch (const ConfigError& e) {
      CHECK(e.field() == field);
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };

  ConfigMap m = minimal_map();
  m.erase("lambda");
  expect_field(m, "lambda");

  m = minimal_map();
  m["alpa"] = "0.1";
  expect_field(m, "alpa");

  m = minimal_map();
  m["alpha"] = "0";
  expect_field(m, "alpha");
  m["alpha"] = "abc";
  expect_field(m, "alpha");

  m = minimal_map();
  m["beta"] = "1.5";
  expect_field(m, "beta");

  m = minimal_map();
  m["t_stats"] = "0";
  expect_field(m, "t_stats");

  m = minimal_map();
  m["epochs"] = "2.5";
  expect_field(m, "epochs");

  m = minimal_map();
  m["seed"] = "-1";
  expect_field(m, "seed");

  m = minimal_map();
  m["optimizer"] = "adam";
  expect_field(m, "optimizer");

  m = minimal_map();
  m["dataset"] = "mnist";
  expect_field(m, "dataset");

  m = minimal_map();
  m["dataset"] = "file";
  expect_field(m, "dataset_path");

  m = minimal_map();
  m["delimiter"] = "semicolon";
  expect_field(m, "delimiter");

  m = minimal_map();
  m["n_mc_eval"] = "0";
  expect_field(m, "n_mc_eval");

  m = minimal_map();
  m["train_fraction"] = "1";
  expect_field(m, "train_fraction");

  m = minimal_map();
  m["repeats"] = "0";
  expect_field(m, "repeats");

  m = minimal_map();
  m["optimizers"] = "ekfac,adam";
  expect_field(m, "optimizers");

  m = minimal_map();
  m["fisher_sampling"] = "exact";
  expect_field(m, "fisher_sampling");
}

TEST_CASE("interval zero is allowed only for the re-initialization schedule") {
  ConfigMap m = minimal_map();
  m["t_reinit"] = "0";
  CHECK(resolve_config(m).train.t_reinit == 0);
}

TEST_CASE("bench optimizer lists and delimiters resolve") {
  ConfigMap m = minimal_map();
  m["optimizers"] = "ekfac, noisy-ekfac ,kfac";
  m["delimiter"] = "tab";
  m["target_column"] = "2";
  const ResolvedConfig cfg = resolve_config(m);
  REQUIRE(cfg.bench_optimizers.size() == 3);
  CHECK(cfg.bench_optimizers[1] == OptimizerKind::kNoisyEkfac);
  CHECK(cfg.delimiter == '\t');
  CHECK(cfg.target_column == 2);

  m["delimiter"] = "comma";
  CHECK(resolve_config(m).delimiter == ',');
  m["delimiter"] = "auto";
  CHECK(resolve_config(m).delimiter == 0);
}

TEST_CASE("the config snapshot serializes deterministically") {
  ConfigMap m = minimal_map();
  m["optimizers"] = "ekfac,bbb";
  const ResolvedConfig cfg = resolve_config(m);
  const json a = config_to_json(cfg);
  const json b = config_to_json(resolve_config(m));
  CHECK(a.dump() == b.dump());
  CHECK(a["alpha"] == 0.01);
  CHECK(a["optimizer"] == "ekfac");
  CHECK(a["delimiter"] == "auto");
  CHECK(a["optimizers"] == json::array({"ekfac", "bbb"}));
}

// ---------------------------------------------------------------------------
// End-to-end command-line checks (subprocess)
// ---------------------------------------------------------------------------

TEST_CASE("train smoke run writes metrics, manifest, and snapshot") {
  TempDir dir;
  const std::string cfg = write_file(dir, "smoke.cfg", kSmokeConfig);
  const fs::path run = dir.path / "run_a";
  const CmdResult r =
      run_cli(dir, "train --config " + cfg + " --out " + run.string());
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("final elbo") != std::string::npos);

  const auto metric_lines = read_lines(run / "metrics.jsonl");
  REQUIRE(metric_lines.size() == 50);  // max_iters caps 10 epochs x 6 batches
  for (const auto& line : metric_lines) {
    const json j = json::parse(line);
    REQUIRE(j.size() == 4);
    CHECK(j.contains("iteration"));
    CHECK(j.contains("elbo"));
    CHECK(j.contains("ll_term"));
    CHECK(j.contains("kl_term"));
  }
  CHECK(json::parse(metric_lines.front())["iteration"] == 1);
  CHECK(json::parse(metric_lines.back())["iteration"] == 50);

  const auto manifest = read_lines(run / "manifest.jsonl");
  REQUIRE(manifest.size() == 2);
  const json start = json::parse(manifest[0]);
  CHECK(start["config"]["alpha"] == 0.02);
  CHECK(start["seed"] == 11);
  CHECK(start.contains("version"));
  CHECK(start.contains("started_at"));
  const json end = json::parse(manifest[1]);
  CHECK(end["status"] == "ok");

  const json snapshot = json::parse(read_file(run / "snapshot.json"));
  CHECK(snapshot.contains("layers"));
}

TEST_CASE("missing required fields exit with the config code and field name") {
  TempDir dir;
  std::string no_lambda = kSmokeConfig;
  const auto pos = no_lambda.find("lambda = 1\n");
  REQUIRE(pos != std::string::npos);
  no_lambda.erase(pos, std::string("lambda = 1\n").size());
  const std::string cfg = write_file(dir, "nolambda.cfg", no_lambda);
  const CmdResult r = run_cli(
      dir, "train --config " + cfg + " --out " + (dir.path / "r").string());
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("lambda") != std::string::npos);
}

TEST_CASE("unknown override keys exit with the config code") {
  TempDir dir;
  const std::string cfg = write_file(dir, "smoke.cfg", kSmokeConfig);
  const CmdResult r =
      run_cli(dir, "train --config " + cfg + " --override turbo=1 --out " +
                       (dir.path / "r").string());
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("turbo") != std::string::npos);
}

TEST_CASE("command-line overrides beat file values in the manifest") {
  TempDir dir;
  const std::string cfg = write_file(dir, "smoke.cfg", kSmokeConfig);
  const fs::path run = dir.path / "run_override";
  const CmdResult r = run_cli(dir, "train --config " + cfg +
                                       " --override alpha=0.01 --seed 99 "
                                       "--out " +
                                       run.string());
  CHECK(r.exit_code == 0);
  const json start = json::parse(read_lines(run / "manifest.jsonl")[0]);
  CHECK(start["config"]["alpha"] == 0.01);  // override beats file's 0.02
  CHECK(start["config"]["seed"] == 99);     // --seed beats file's 11
  CHECK(start["seed"] == 99);
}

TEST_CASE("identical train invocations produce byte-identical metrics") {
  TempDir dir;
  const std::string cfg = write_file(dir, "smoke.cfg", kSmokeConfig);
  const fs::path run1 = dir.path / "d1";
  const fs::path run2 = dir.path / "d2";
  CHECK(run_cli(dir, "train --config " + cfg + " --out " + run1.string())
            .exit_code == 0);
  CHECK(run_cli(dir, "train --config " + cfg + " --out " + run2.string())
            .exit_code == 0);
  const std::string m1 = read_file(run1 / "metrics.jsonl");
  REQUIRE(!m1.empty());
  CHECK(m1 == read_file(run2 / "metrics.jsonl"));
  CHECK(read_file(run1 / "snapshot.json") ==
        read_file(run2 / "snapshot.json"));
}

TEST_CASE("a run directory with an existing manifest is refused") {
  TempDir dir;
  const std::string cfg = write_file(dir, "smoke.cfg", kSmokeConfig);
  const fs::path run = dir.path / "reused";
  CHECK(run_cli(dir, "train --config " + cfg + " --out " + run.string())
            .exit_code == 0);
  const CmdResult second =
      run_cli(dir, "train --config " + cfg + " --out " + run.string());
  CHECK(second.exit_code == 3);
  CHECK(second.err.find("manifest") != std::string::npos);
}

TEST_CASE("runtime failures after config validation exit with the abort code") {
  TempDir dir;
  const std::string data = write_file(dir, "bad.csv", "1\n2\n3\n");
  const std::string cfg = write_file(dir, "file.cfg",
                                     "optimizer = ekfac\n"
                                     "dataset = file\n"
                                     "dataset_path = " +
                                         data +
                                         "\n"
                                         "alpha = 0.01\n"
                                         "lambda = 1\n"
                                         "eta = 1\n");
  const CmdResult r = run_cli(
      dir, "train --config " + cfg + " --out " + (dir.path / "r").string());
  CHECK(r.exit_code == 3);
  CHECK(!r.err.empty());
}

TEST_CASE("training from a dataset file standardizes and completes") {
  TempDir dir;
  const Dataset ds = make_mlp_teacher(30, 2, 3, 0.3, 33);
  const fs::path data = dir.path / "teacher.txt";
  save_dataset(ds, data.string());
  const std::string cfg = write_file(dir, "file.cfg",
                                     "optimizer = ekfac\n"
                                     "dataset = file\n"
                                     "dataset_path = " +
                                         data.string() +
                                         "\n"
                                         "alpha = 0.01\n"
                                         "lambda = 1\n"
                                         "eta = 1\n"
                                         "hidden_units = 4\n"
                                         "epochs = 2\n"
                                         "n_mc_eval = 3\n");
  const fs::path run = dir.path / "file_run";
  const CmdResult r =
      run_cli(dir, "train --config " + cfg + " --out " + run.string());
  CHECK(r.exit_code == 0);
  CHECK(!read_lines(run / "metrics.jsonl").empty());
}

TEST_CASE("bench emits a table, per-split records, and reproducible bytes") {
  TempDir dir;
  const std::string cfg = write_file(dir, "bench.cfg",
                                     "optimizer = ekfac\n"
                                     "optimizers = ekfac,noisy-ekfac\n"
                                     "dataset = synthetic-teacher\n"
                                     "dataset_n = 40\n"
                                     "dataset_d = 3\n"
                                     "dataset_hidden = 4\n"
                                     "hidden_units = 4\n"
                                     "alpha = 0.02\n"
                                     "lambda = 1\n"
                                     "eta = 1\n"
                                     "batch_size = 10\n"
                                     "epochs = 2\n"
                                     "n_mc_eval = 5\n"
                                     "repeats = 2\n"
                                     "train_fraction = 0.8\n"
                                     "seed = 4\n");
  const fs::path run1 = dir.path / "b1";
  const CmdResult r1 =
      run_cli(dir, "bench --config " + cfg + " --out " + run1.string());
  CHECK(r1.exit_code == 0);
  CHECK(r1.out.find("test rmse") != std::string::npos);
  CHECK(r1.out.find("ekfac") != std::string::npos);
  CHECK(r1.out.find("noisy-ekfac") != std::string::npos);

  const auto records = read_lines(run1 / "records.jsonl");
  CHECK(records.size() == 4);  // 2 optimizers x 2 splits
  for (const auto& line : records) {
    const json j = json::parse(line);
    CHECK(j.contains("rmse"));
  }

  const fs::path run2 = dir.path / "b2";
  const CmdResult r2 = run_cli(
      dir, "bench --config " + cfg + " --jobs 3 --out " + run2.string());
  CHECK(r2.exit_code == 0);
  CHECK(read_file(run1 / "table.txt") == read_file(run2 / "table.txt"));
  CHECK(read_file(run1 / "records.jsonl") ==
        read_file(run2 / "records.jsonl"));
}

TEST_CASE("verify fast passes and rejects unknown levels") {
  TempDir dir;
  const CmdResult ok = run_cli(dir, "verify --level fast");
  CHECK(ok.exit_code == 0);
  CHECK(ok.out.find("checks passed") != std::string::npos);
  CHECK(ok.out.find("PASS") != std::string::npos);

  const CmdResult bad = run_cli(dir, "verify --level medium");
  CHECK(bad.exit_code == 2);
}

TEST_CASE("inspect prints posterior statistics from a run directory") {
  TempDir dir;
  const std::string cfg = write_file(dir, "smoke.cfg", kSmokeConfig);
  const fs::path run = dir.path / "to_inspect";
  REQUIRE(run_cli(dir, "train --config " + cfg + " --out " + run.string())
              .exit_code == 0);

  const CmdResult by_dir = run_cli(dir, "inspect " + run.string());
  CHECK(by_dir.exit_code == 0);
  CHECK(by_dir.out.find("layer") != std::string::npos);

  const CmdResult by_file =
      run_cli(dir, "inspect " + (run / "snapshot.json").string());
  CHECK(by_file.exit_code == 0);
  CHECK(by_file.out == by_dir.out);

  const CmdResult missing =
      run_cli(dir, "inspect " + (dir.path / "nope").string());
  CHECK(missing.exit_code == 3);
}

TEST_CASE("invoking without a subcommand fails") {
  TempDir dir;
  CHECK(run_cli(dir, "").exit_code != 0);
}