#include "nekfac/benchmark.hpp"
#include "nekfac/config.hpp"
#include "nekfac/dataset.hpp"
#include "nekfac/run_io.hpp"
#include "nekfac/synthetic.hpp"
#include "nekfac/verify.hpp"

#include <CLI11.hpp>

#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailure = 1;
constexpr int kExitConfigError = 2;
constexpr int kExitRuntimeAbort = 3;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  std::string out_dir;
  int jobs = 1;
};

nekfac::ResolvedConfig load_config(const CommonArgs& args) {
  nekfac::ConfigMap map;
  if (!args.config_path.empty()) {
    map = nekfac::parse_config_file(args.config_path);
  }
  nekfac::apply_overrides(map, args.overrides);
  if (args.seed) map["seed"] = std::to_string(*args.seed);
  return nekfac::resolve_config(map);
}

nekfac::Dataset build_dataset(const nekfac::ResolvedConfig& cfg) {
  if (cfg.dataset == "synthetic-linear") {
    return nekfac::make_linear_gaussian(cfg.dataset_n, cfg.dataset_d,
                                        cfg.dataset_noise, cfg.data_seed);
  }
  if (cfg.dataset == "synthetic-teacher") {
    return nekfac::make_mlp_teacher(cfg.dataset_n, cfg.dataset_d,
                                    cfg.dataset_hidden, cfg.dataset_noise,
                                    cfg.data_seed);
  }
  return nekfac::load_dataset(cfg.dataset_path, cfg.delimiter,
                              cfg.target_column);
}

int cmd_train(const CommonArgs& args) {
  const nekfac::ResolvedConfig cfg = load_config(args);
  const nekfac::Dataset ds = build_dataset(cfg);

  // File-backed data is standardized over the full set for a single
  // training run; synthetic data is generated near unit scale already.
  nekfac::Mat x = ds.features;
  nekfac::Vec y = ds.targets;
  if (cfg.dataset == "file") {
    std::vector<nekfac::Index> all(static_cast<size_t>(ds.n()));
    for (nekfac::Index i = 0; i < ds.n(); ++i) {
      all[static_cast<size_t>(i)] = i;
    }
    nekfac::SplitIndices whole;
    whole.train = all;
    whole.test = {all.back()};  // unused; protocol object needs both sides
    const nekfac::NormalizedSplit norm = nekfac::normalize_split(ds, whole);
    x = norm.train_x;
    y = norm.train_y;
  }

  const nekfac::RunPaths paths =
      nekfac::prepare_run_dir(args.out_dir, nekfac::default_out_root());
  nekfac::write_manifest_start(paths, nekfac::config_to_json(cfg),
                               cfg.train.seed);
  std::cerr << "run directory: " << paths.dir << "\n";

  nekfac::Network net({x.cols(), cfg.train.hidden_units, nekfac::Index{1}},
                      nekfac::Task::kRegression);
  nekfac::Rng init_rng(nekfac::Rng::derive(cfg.train.seed, 0));
  net.init_weights(init_rng);
  nekfac::Trainer trainer(net, cfg.train, x.rows(),
                          nekfac::planned_iterations(cfg.train, x.rows()));

  nekfac::BatchTargets targets;
  targets.task = nekfac::Task::kRegression;
  targets.values = y;

  nekfac::MetricsWriter metrics(paths.metrics);
  nekfac::TrainOutcome outcome;
  try {
    outcome = nekfac::run_training(
        net, trainer, x, targets, cfg.train,
        [&](const nekfac::StepReport& report) { metrics.write(report); });
  } catch (const std::exception& e) {
    metrics.close();
    nekfac::write_manifest_end(paths, std::string("aborted: ") + e.what(),
                               nullptr);
    throw;
  }
  metrics.close();

  const nlohmann::json snapshot =
      nekfac::snapshot_to_json(trainer, outcome.noise, outcome.final_elbo);
  nekfac::save_snapshot(paths.snapshot, snapshot);
  nlohmann::json summary;
  summary["final_elbo"] = outcome.final_elbo;
  summary["iterations"] = trainer.iteration();
  summary["noise_precision"] = outcome.noise.mean_precision();
  nekfac::write_manifest_end(paths, "ok", summary);

  std::cout << "final elbo " << outcome.final_elbo << " after "
            << trainer.iteration() << " iterations (metrics: "
            << paths.metrics << ")\n";
  return kExitOk;
}

int cmd_bench(const CommonArgs& args) {
  const nekfac::ResolvedConfig cfg = load_config(args);
  const nekfac::Dataset ds = build_dataset(cfg);

  const nekfac::RunPaths paths =
      nekfac::prepare_run_dir(args.out_dir, nekfac::default_out_root());
  nekfac::write_manifest_start(paths, nekfac::config_to_json(cfg),
                               cfg.train.seed);
  std::cerr << "run directory: " << paths.dir << "\n";

  const std::vector<nekfac::RunResult> results =
      nekfac::run_benchmark({ds}, cfg.bench_optimizers, cfg.split, cfg.train,
                            args.jobs, &std::cerr);

  std::ofstream records(paths.records);
  for (const auto& rr : results) {
    for (const auto& s : rr.splits) {
      nlohmann::json j;
      j["dataset"] = rr.dataset;
      j["optimizer"] = rr.optimizer;
      j["split"] = s.split_index;
      if (s.failed) {
        j["error"] = s.error;
      } else {
        j["rmse"] = s.rmse;
        j["test_loglik"] = s.test_loglik;
        j["final_elbo"] = s.final_elbo;
      }
      records << j.dump() << '\n';
    }
  }
  records.close();

  const std::string table = nekfac::format_result_table(results);
  std::ofstream(paths.table) << table;
  std::cout << table;
  nekfac::write_manifest_end(paths, "ok", nullptr);
  return kExitOk;
}

int cmd_verify(const std::string& level_name, uint64_t seed) {
  nekfac::VerifyLevel level;
  if (level_name == "fast") {
    level = nekfac::VerifyLevel::kFast;
  } else if (level_name == "full") {
    level = nekfac::VerifyLevel::kFull;
  } else {
    throw nekfac::ConfigError("level",
                              "expected fast|full, got '" + level_name + "'");
  }
  const auto results = nekfac::run_verification(level, seed);
  std::cout << nekfac::format_check_results(results);
  if (!nekfac::all_passed(results)) {
    int failures = 0;
    for (const auto& r : results) failures += r.passed ? 0 : 1;
    std::cout << failures << " check(s) failed\n";
    return kExitVerifyFailure;
  }
  std::cout << "all " << results.size() << " checks passed\n";
  return kExitOk;
}

int cmd_inspect(const std::string& target) {
  namespace fs = std::filesystem;
  fs::path path = target;
  if (fs::is_directory(path)) path /= "snapshot.json";
  const nlohmann::json snapshot = nekfac::load_snapshot(path.string());
  std::cout << nekfac::describe_snapshot(snapshot);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kronecker-factored natural-gradient and variational "
               "optimizers for small dense networks"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string verify_level = "fast";
  uint64_t verify_seed = 0;
  std::string inspect_target;

  auto add_common = [&](CLI::App* cmd, bool with_jobs) {
    cmd->add_option("--config", args.config_path, "config file (key = value)");
    cmd->add_option("--override", args.overrides,
                    "KEY=VALUE config override (repeatable)");
    cmd->add_option("--seed", args.seed, "seed override");
    cmd->add_option("--out", args.out_dir,
                    "run directory (default: fresh dir under $NEKFAC_OUT_ROOT "
                    "or ./runs)");
    if (with_jobs) {
      cmd->add_option("--jobs", args.jobs, "parallel split workers")
          ->check(CLI::PositiveNumber);
    }
  };

  CLI::App* train = app.add_subcommand("train", "train one optimizer on one "
                                                "dataset");
  add_common(train, false);
  CLI::App* bench = app.add_subcommand(
      "bench", "split/repeat benchmark over optimizers");
  add_common(bench, true);
  CLI::App* verify = app.add_subcommand(
      "verify", "run the property and oracle checks");
  verify->add_option("--level", verify_level, "fast|full");
  verify->add_option("--seed", verify_seed, "seed for randomized checks");
  CLI::App* inspect = app.add_subcommand(
      "inspect", "print posterior statistics from a snapshot");
  inspect->add_option("target", inspect_target,
                      "run directory or snapshot.json")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(args);
    if (bench->parsed()) return cmd_bench(args);
    if (verify->parsed()) return cmd_verify(verify_level, verify_seed);
    if (inspect->parsed()) return cmd_inspect(inspect_target);
  } catch (const nekfac::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeAbort;
  }
  return kExitOk;
}
