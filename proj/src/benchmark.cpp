#include "nekfac/benchmark.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace nekfac {

EvalResult evaluate_regression(Trainer& trainer, const Mat& test_x,
                               const Vec& test_y_raw, const Standardizer& tfm,
                               double noise_precision, int n_mc, Rng& rng) {
  if (n_mc < 1) {
    throw std::invalid_argument("evaluate_regression: n_mc must be >= 1");
  }
  if (!(noise_precision > 0.0)) {
    throw std::invalid_argument(
        "evaluate_regression: noise precision must be positive");
  }
  Network& net = trainer.network();
  const Index n = test_x.rows();

  trainer.load_mean_weights();
  const Vec mean_pred_raw =
      tfm.destandardize_targets(net.forward(test_x).col(0));
  EvalResult result;
  result.rmse = std::sqrt((mean_pred_raw - test_y_raw).squaredNorm() /
                          static_cast<double>(n));

  const Vec y_std = tfm.transform_targets(test_y_raw);
  const int samples = trainer.config().is_noisy() ? n_mc : 1;
  constexpr double kLog2Pi = 1.8378770664093454836;
  const double base =
      0.5 * (std::log(noise_precision) - kLog2Pi) - std::log(tfm.target_scale);
  Mat ll(n, samples);
  for (int s = 0; s < samples; ++s) {
    trainer.load_sampled_weights(rng);
    const Vec pred_std = net.forward(test_x).col(0);
    ll.col(s) = (base - 0.5 * noise_precision *
                            (pred_std - y_std).array().square())
                    .matrix();
  }
  trainer.load_mean_weights();

  double acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double top = ll.row(i).maxCoeff();
    acc += top + std::log((ll.row(i).array() - top).exp().mean());
  }
  result.test_loglik = acc / static_cast<double>(n);
  return result;
}

double standard_error(const std::vector<double>& values) {
  const size_t k = values.size();
  if (k < 2) return std::numeric_limits<double>::quiet_NaN();
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(k);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(k - 1));
  return sd / std::sqrt(static_cast<double>(k));
}

void aggregate_run(RunResult& result) {
  std::vector<double> rmse, loglik, elbo;
  result.failures = 0;
  for (const auto& s : result.splits) {
    if (s.failed) {
      ++result.failures;
      continue;
    }
    rmse.push_back(s.rmse);
    loglik.push_back(s.test_loglik);
    elbo.push_back(s.final_elbo);
  }
  auto mean_of = [](const std::vector<double>& v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    double m = 0.0;
    for (double x : v) m += x;
    return m / static_cast<double>(v.size());
  };
  result.mean_rmse = mean_of(rmse);
  result.se_rmse = standard_error(rmse);
  result.mean_loglik = mean_of(loglik);
  result.se_loglik = standard_error(loglik);
  result.mean_elbo = mean_of(elbo);
  result.se_elbo = standard_error(elbo);
}

namespace {

SplitRecord run_one_split(const Dataset& ds, const SplitSpec& spec,
                          const TrainConfig& base_cfg, OptimizerKind kind,
                          size_t optimizer_index, int split_index) {
  SplitRecord rec;
  rec.split_index = split_index;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    Rng split_rng(Rng::derive(spec.seed, 100 + static_cast<uint64_t>(
                                                   split_index)));
    const SplitIndices split =
        make_split(ds.n(), spec.train_fraction, split_rng);
    const NormalizedSplit norm = normalize_split(ds, split);

    TrainConfig cfg = base_cfg;
    cfg.optimizer = kind;
    cfg.seed = Rng::derive_seed(
        Rng::derive_seed(base_cfg.seed,
                         50 + static_cast<uint64_t>(split_index)),
        optimizer_index);

    Network net({ds.dim(), cfg.hidden_units, Index{1}}, Task::kRegression);
    Rng init_rng(Rng::derive(cfg.seed, 0));
    net.init_weights(init_rng);
    Trainer trainer(net, cfg, norm.train_x.rows(),
                    planned_iterations(cfg, norm.train_x.rows()));

    BatchTargets targets;
    targets.task = Task::kRegression;
    targets.values = norm.train_y;
    const TrainOutcome outcome =
        run_training(net, trainer, norm.train_x, targets, cfg);

    Rng eval_rng(Rng::derive(cfg.seed, 5));
    const EvalResult ev = evaluate_regression(
        trainer, norm.test_x, norm.test_y, norm.transforms,
        outcome.noise.mean_precision(), cfg.n_mc_eval, eval_rng);
    rec.rmse = ev.rmse;
    rec.test_loglik = ev.test_loglik;
    rec.final_elbo = outcome.final_elbo;
  } catch (const std::exception& e) {
    rec.failed = true;
    rec.error = e.what();
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                              t0)
                    .count();
  return rec;
}

}  // namespace

std::vector<RunResult> run_benchmark(const std::vector<Dataset>& datasets,
                                     const std::vector<OptimizerKind>& optims,
                                     const SplitSpec& spec,
                                     const TrainConfig& base_cfg, int jobs,
                                     std::ostream* log) {
  if (spec.repeats < 1) {
    throw std::invalid_argument("run_benchmark: repeats must be >= 1");
  }
  std::vector<RunResult> results;
  for (const Dataset& ds : datasets) {
    if (ds.n() < 20) {
      throw std::invalid_argument("run_benchmark: dataset '" + ds.name +
                                  "' has fewer than 20 rows");
    }
    for (size_t oi = 0; oi < optims.size(); ++oi) {
      RunResult rr;
      rr.dataset = ds.name;
      rr.optimizer = optimizer_name(optims[oi]);
      rr.splits.resize(static_cast<size_t>(spec.repeats));

      const int workers =
          std::max(1, std::min(jobs, spec.repeats));
      std::atomic<int> next{0};
      auto work = [&]() {
        for (int r = next.fetch_add(1); r < spec.repeats;
             r = next.fetch_add(1)) {
          rr.splits[static_cast<size_t>(r)] =
              run_one_split(ds, spec, base_cfg, optims[oi], oi, r);
        }
      };
      if (workers == 1) {
        work();
      } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(workers));
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
      }

      aggregate_run(rr);
      if (log) {
        for (const auto& s : rr.splits) {
          *log << rr.dataset << " " << rr.optimizer << " split "
               << s.split_index;
          if (s.failed) {
            *log << " FAILED: " << s.error << "\n";
          } else {
            *log << " rmse " << s.rmse << " loglik " << s.test_loglik
                 << " elbo " << s.final_elbo << " (" << s.seconds << " s)\n";
          }
        }
      }
      results.push_back(std::move(rr));
    }
  }
  return results;
}

namespace {

std::string fmt_pm(double mean, double se) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(4) << mean << " +/- ";
  if (std::isnan(se)) {
    ss << "NA";
  } else {
    ss << std::fixed << std::setprecision(4) << se;
  }
  return ss.str();
}

}  // namespace

std::string format_result_table(const std::vector<RunResult>& results) {
  std::vector<std::array<std::string, 6>> rows;
  rows.push_back({"dataset", "optimizer", "test rmse", "test loglik",
                  "final elbo", "failures"});
  for (const auto& r : results) {
    rows.push_back({r.dataset, r.optimizer, fmt_pm(r.mean_rmse, r.se_rmse),
                    fmt_pm(r.mean_loglik, r.se_loglik),
                    fmt_pm(r.mean_elbo, r.se_elbo),
                    std::to_string(r.failures)});
  }
  std::array<size_t, 6> width{};
  for (const auto& row : rows) {
    for (size_t c = 0; c < row.size(); ++c) {
      width[c] = std::max(width[c], row[c].size());
    }
  }
  std::ostringstream out;
  for (const auto& row : rows) {
    for (size_t c = 0; c < row.size(); ++c) {
      out << std::left << std::setw(static_cast<int>(width[c]) + 2) << row[c];
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace nekfac
