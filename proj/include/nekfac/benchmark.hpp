#pragma once

#include "nekfac/dataset.hpp"
#include "nekfac/optimizer.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace nekfac {

struct EvalResult {
  double rmse = 0.0;
  double test_loglik = 0.0;  // mean per-point predictive log-likelihood
};

/// Test metrics in original target units. RMSE uses the de-standardized
/// posterior-mean prediction. The log-likelihood is a posterior-predictive
/// estimate: log-mean-exp over n_mc posterior draws of the Gaussian
/// likelihood with the given noise precision, corrected for the target
/// de-standardization scale. Point-estimate optimizers collapse to a single
/// deterministic sample. Leaves the network holding the mean weights.
EvalResult evaluate_regression(Trainer& trainer, const Mat& test_x,
                               const Vec& test_y_raw, const Standardizer& tfm,
                               double noise_precision, int n_mc, Rng& rng);

struct SplitRecord {
  int split_index = 0;
  bool failed = false;
  std::string error;
  double rmse = 0.0;
  double test_loglik = 0.0;
  double final_elbo = 0.0;
  double seconds = 0.0;  // informational; excluded from reproducible outputs
};

struct RunResult {
  std::string dataset;
  std::string optimizer;
  std::vector<SplitRecord> splits;
  int failures = 0;
  // Aggregates over successful splits; standard errors are NaN ("NA") when
  // fewer than two splits succeeded.
  double mean_rmse = 0.0, se_rmse = 0.0;
  double mean_loglik = 0.0, se_loglik = 0.0;
  double mean_elbo = 0.0, se_elbo = 0.0;
};

/// sd / sqrt(k) with the (k-1) sample-variance denominator; NaN for k < 2.
double standard_error(const std::vector<double>& values);

/// Fills the aggregate fields of `result` from its split records.
void aggregate_run(RunResult& result);

/// Trains `cfg.optimizer` on every dataset x optimizer combination over
/// `spec.repeats` random splits and aggregates. Split permutations and
/// per-split training seeds derive deterministically from the protocol/config
/// seeds, so results are independent of `jobs` (parallel split workers).
/// A failing split is recorded and the run continues.
std::vector<RunResult> run_benchmark(const std::vector<Dataset>& datasets,
                                     const std::vector<OptimizerKind>& optims,
                                     const SplitSpec& spec,
                                     const TrainConfig& base_cfg, int jobs,
                                     std::ostream* log = nullptr);

/// Aligned text table of the aggregate metrics (no timing columns, so equal
/// seeds give byte-identical tables).
std::string format_result_table(const std::vector<RunResult>& results);

}  // namespace nekfac
