#include "nekfac/verify.hpp"

#include "nekfac/benchmark.hpp"
#include "nekfac/optimizer.hpp"
#include "nekfac/posterior.hpp"
#include "nekfac/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

namespace nekfac {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(3);
  ss << v;
  return ss.str();
}

CheckResult make_result(const std::string& name, bool passed, double worst,
                        double bound) {
  return CheckResult{name, passed,
                     "worst " + fmt(worst) + " vs bound " + fmt(bound)};
}

Mat random_spd(Index n, Rng& rng) {
  const Mat g = rng.normal_mat(n, n);
  return g * g.transpose() / static_cast<double>(n) +
         0.5 * Mat::Identity(n, n);
}

double rel_err(const Mat& got, const Mat& want) {
  const double scale = std::max(want.norm(), 1e-300);
  return (got - want).norm() / scale;
}

// Dense multivariate normal helpers used as oracles.
double dense_log_density(const Vec& w, const Vec& mean, const SymEig& cov) {
  const Vec diff = w - mean;
  const Vec proj = cov.basis.transpose() * diff;
  const double quad = (proj.array().square() / cov.eigvals.array()).sum();
  return -0.5 * (quad + cov.log_det() +
                 static_cast<double>(w.size()) * kLog2Pi);
}

double dense_kl_to_prior(const Vec& mean, const SymEig& cov, double eta) {
  const double k = static_cast<double>(mean.size());
  return 0.5 * (cov.trace() / eta + mean.squaredNorm() / eta - k +
                k * std::log(eta) - cov.log_det());
}

EmvgPosterior random_emvg(Index rows, Index cols, Rng& rng) {
  EmvgPosterior post;
  post.mean = rng.normal_mat(rows, cols);
  post.row_eig = sym_eig(random_spd(rows, rng));
  post.col_eig = sym_eig(random_spd(cols, rng));
  post.resc_grid =
      (rng.normal_mat(rows, cols).array().square() + 0.2).matrix();
  post.gamma_in = 0.1;
  post.scale = 0.7;
  return post;
}

MvgPosterior random_mvg(Index rows, Index cols, Rng& rng) {
  return make_mvg(rng.normal_mat(rows, cols), random_spd(rows, rng),
                  random_spd(cols, rng), 0.1, 0.7);
}

FfgPosterior random_ffg(Index rows, Index cols, Rng& rng) {
  FfgPosterior post;
  post.mean = rng.normal_mat(rows, cols);
  post.log_sigma = 0.3 * rng.normal_mat(rows, cols) -
                   Mat::Constant(rows, cols, 0.7);
  return post;
}

// Stats with fresh eigendecompositions, as after a training stats refresh.
KronStats random_stats(Index rows, Index cols, Rng& rng) {
  KronStats stats = KronStats::identity(rows, cols);
  stats.input_cov = random_spd(rows, rng);
  stats.output_cov = random_spd(cols, rng);
  stats.refresh_eig();
  return stats;
}

CheckResult check_kron_matvec(Rng& rng, int trials) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Index n = 1 + rng.uniform_index(6);
    const Index p = 1 + rng.uniform_index(6);
    const Mat a = rng.normal_mat(n, n);
    const Mat b = rng.normal_mat(p, p);
    const Vec x = rng.normal_vec(n * p);
    const Vec got = kron_matvec(b, a, x);
    const Vec want = kron_dense(b, a) * x;
    worst = std::max(worst, rel_err(got, want));
  }
  return make_result("kron-matvec-identity", worst <= 1e-12, worst, 1e-12);
}

CheckResult check_eigen_multiset(Rng& rng, int trials) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Index n = 2 + rng.uniform_index(4);
    const Index p = 2 + rng.uniform_index(4);
    const SymEig ea = sym_eig(random_spd(n, rng));
    const SymEig es = sym_eig(random_spd(p, rng));
    const SymEig dense =
        sym_eig(kron_dense(es.apply(es.eigvals), ea.apply(ea.eigvals)));
    std::vector<double> outer;
    outer.reserve(static_cast<size_t>(n * p));
    for (Index i = 0; i < p; ++i) {
      for (Index j = 0; j < n; ++j) {
        outer.push_back(es.eigvals(i) * ea.eigvals(j));
      }
    }
    std::sort(outer.begin(), outer.end(), std::greater<double>());
    const double scale = std::max(1.0, outer.front());
    for (Index i = 0; i < dense.dim(); ++i) {
      worst = std::max(
          worst,
          std::abs(dense.eigvals(i) - outer[static_cast<size_t>(i)]) / scale);
    }
  }
  return make_result("kron-eigenvalue-multiset", worst <= 1e-8, worst, 1e-8);
}

// Builds a small net, runs one batch, takes one-shot statistics, and
// compares the Frobenius error of the eigenbasis-diagonal approximations.
CheckResult check_frobenius_optimality(Rng& rng, int trials) {
  int total = 0;
  int hold = 0;
  int strict = 0;
  for (int t = 0; t < trials; ++t) {
    const Index d = 2 + rng.uniform_index(3);
    const Index h = 2 + rng.uniform_index(4);
    const Index o = 1 + rng.uniform_index(3);
    const Task task = o > 1 ? Task::kClassification : Task::kRegression;
    Network net({d, h, o}, task);
    net.init_weights(rng);
    const Index batch = 12;
    const Mat x = rng.normal_mat(batch, d);
    BatchTargets targets;
    targets.task = task;
    if (task == Task::kRegression) {
      targets.values = rng.normal_vec(batch);
    } else {
      targets.labels.resize(static_cast<size_t>(batch));
      for (Index i = 0; i < batch; ++i) {
        targets.labels[static_cast<size_t>(i)] =
            static_cast<int>(rng.uniform_index(o));
      }
    }

    const Mat& preds = net.forward(x);
    net.backward(targets.output_grad(preds));
    const auto fishers = exact_fisher_oracle(net, x, targets,
                                             FisherSampling::kEmpirical,
                                             nullptr);
    for (size_t l = 0; l < net.layer_count(); ++l) {
      KronStats stats = KronStats::identity(net.layer(l).weights.rows(),
                                            net.layer(l).weights.cols());
      update_kron_stats(stats, net.layer(l), 1.0, net.pass_id());
      stats.refresh_eig();
      RescalingDiag resc = RescalingDiag::ones(stats.input_cov.rows(),
                                               stats.output_cov.rows());
      update_rescaling(resc, stats, net.layer(l), 1.0, 1);

      const Mat q = kron_dense(stats.col_eig().basis, stats.row_eig().basis);
      const Mat& fhat = fishers[l];
      auto frob_err = [&](const Mat& grid) {
        const Vec diag = vec(grid);
        return (fhat - q * diag.asDiagonal() * q.transpose()).norm();
      };
      const double err_resc = frob_err(resc.grid);
      const double err_kfac = frob_err(kfac_eigen_rescaling(stats));
      ++total;
      if (err_resc <= err_kfac + 1e-12) ++hold;
      if (err_resc < err_kfac - 1e-12 * std::max(1.0, err_kfac)) ++strict;
    }
  }
  std::ostringstream detail;
  detail << "<= held " << hold << "/" << total << ", strict " << strict;
  const bool passed =
      hold == total && strict * 100 >= total * 90 && total > 0;
  return CheckResult{"rescaling-frobenius-optimality", passed, detail.str()};
}

CheckResult check_update_oracles(Rng& rng, int trials) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Index rows = 2 + rng.uniform_index(3);
    const Index cols = 2 + rng.uniform_index(3);
    const KronStats stats = random_stats(rows, cols, rng);
    const Mat v = rng.normal_mat(rows, cols);
    const Mat grid =
        (rng.normal_mat(rows, cols).array().square() + 0.05).matrix();
    const double gamma = 0.05 + rng.uniform();

    const Mat got_ekfac = ekfac_precondition(stats.row_eig(), stats.col_eig(),
                                             grid, gamma, v);
    const Mat q = kron_dense(stats.col_eig().basis, stats.row_eig().basis);
    const Vec d = (vec(grid).array() + gamma).matrix();
    const Vec dense_ekfac =
        q * (q.transpose() * vec(v)).cwiseQuotient(d);
    worst = std::max(worst, rel_err(got_ekfac, unvec(dense_ekfac, rows, cols)));

    auto [af, sf] = pi_damped_factors(stats.input_cov, stats.output_cov,
                                      gamma);
    const Mat got_kfac = kfac_precondition(sym_eig(af), sym_eig(sf), v);
    const Mat dense_kron = kron_dense(sf, af);
    const Vec dense_kfac = dense_kron.ldlt().solve(vec(v));
    worst = std::max(worst, rel_err(got_kfac, unvec(dense_kfac, rows, cols)));
  }
  return make_result("update-derivation-oracle", worst <= 1e-10, worst, 1e-10);
}

CheckResult check_reduction(Rng& rng, int trials) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Index rows = 2 + rng.uniform_index(3);
    const Index cols = 2 + rng.uniform_index(3);
    const KronStats stats = random_stats(rows, cols, rng);
    const Mat v = rng.normal_mat(rows, cols);
    const double gamma = 0.05 + rng.uniform();

    const Mat pinned = kfac_eigen_rescaling(stats);
    const Mat got = ekfac_precondition(stats.row_eig(), stats.col_eig(),
                                       pinned, gamma, v);
    const Mat fisher = kron_dense(stats.col_eig().apply(stats.col_eig().eigvals),
                                  stats.row_eig().apply(stats.row_eig().eigvals));
    const Mat damped =
        fisher + gamma * Mat::Identity(fisher.rows(), fisher.cols());
    const Vec want = damped.ldlt().solve(vec(v));
    worst = std::max(worst, rel_err(got, unvec(want, rows, cols)));
  }
  return make_result("ekfac-kfac-reduction", worst <= 1e-8, worst, 1e-8);
}

// A per-entry 5% relative check is only decidable when every entry above
// the report cutoff sits well clear of the Monte-Carlo noise floor
// (~|Sigma|_max / sqrt(n)). The posteriors here are built so all covariance
// entries are >= 20% of the largest one: fully mixing +-1/sqrt(2) factor
// bases with spread-out variances.
Mat flat_basis2() {
  Mat h(2, 2);
  h << 1.0, 1.0, 1.0, -1.0;
  return h / std::sqrt(2.0);
}

EmvgPosterior designed_emvg(Rng& rng) {
  EmvgPosterior post;
  post.mean = rng.normal_mat(2, 2);
  post.row_eig = SymEig{flat_basis2(), Vec::Ones(2)};
  post.col_eig = SymEig{flat_basis2(), Vec::Ones(2)};
  post.gamma_in = 0.1;
  post.scale = 0.7;
  // Variances (4, 2, 1, 0.5) in vec order via r = scale/v - gamma_in.
  Mat variances(2, 2);
  variances << 4.0, 1.0, 2.0, 0.5;
  post.resc_grid = (post.scale / variances.array() - post.gamma_in).matrix();
  return post;
}

MvgPosterior designed_mvg(Rng& rng) {
  MvgPosterior post;
  post.mean = rng.normal_mat(2, 2);
  Vec row_eigvals(2), col_eigvals(2);
  row_eigvals << 4.0, 1.0;
  col_eigvals << 0.8, 0.2;
  post.row_factor = SymEig{flat_basis2(), row_eigvals};
  post.col_factor = SymEig{flat_basis2(), col_eigvals};
  post.pi = 1.0;
  post.scale = 0.7;
  return post;
}

CheckResult check_sampling_covariance(Rng& rng, int n_samples) {
  double worst = 0.0;
  const EmvgPosterior emvg = designed_emvg(rng);
  const MvgPosterior mvg = designed_mvg(rng);
  for (int which = 0; which < 2; ++which) {
    const Mat cov = which == 0 ? materialize_covariance(emvg)
                               : materialize_covariance(mvg);
    const Vec mean = vec(which == 0 ? emvg.mean : mvg.mean);
    const Index k = cov.rows();
    Mat acc = Mat::Zero(k, k);
    Vec mean_acc = Vec::Zero(k);
    for (int s = 0; s < n_samples; ++s) {
      const Mat w = which == 0 ? sample_emvg(emvg, rng) : sample_mvg(mvg, rng);
      const Vec diff = vec(w) - mean;
      mean_acc += diff;
      acc += diff * diff.transpose();
    }
    mean_acc /= static_cast<double>(n_samples);
    Mat emp = acc / static_cast<double>(n_samples) -
              mean_acc * mean_acc.transpose();
    const double cutoff = 0.01 * cov.cwiseAbs().maxCoeff();
    for (Index i = 0; i < k; ++i) {
      for (Index j = 0; j < k; ++j) {
        if (std::abs(cov(i, j)) > cutoff) {
          worst = std::max(worst, std::abs(emp(i, j) - cov(i, j)) /
                                      std::abs(cov(i, j)));
        }
      }
    }
  }
  return make_result("sampling-covariance", worst <= 0.05, worst, 0.05);
}

CheckResult check_emvg_density(Rng& rng, int trials) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const EmvgPosterior post = random_emvg(2, 3, rng);
    const SymEig cov = sym_eig(materialize_covariance(post));
    const Mat w = post.mean + 0.5 * rng.normal_mat(2, 3);
    const double got = emvg_log_density(post, w);
    const double want = dense_log_density(vec(w), vec(post.mean), cov);
    worst = std::max(worst, std::abs(got - want));
  }
  return make_result("emvg-log-density", worst <= 1e-8, worst, 1e-8);
}

CheckResult check_kl_closed_form(Rng& rng, int trials) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const double eta = 0.5 + rng.uniform();
    const EmvgPosterior emvg = random_emvg(2, 3, rng);
    const MvgPosterior mvg = random_mvg(3, 2, rng);
    const FfgPosterior ffg = random_ffg(2, 2, rng);
    worst = std::max(
        worst, std::abs(kl_to_spherical_prior(emvg, eta) -
                        dense_kl_to_prior(vec(emvg.mean),
                                          sym_eig(materialize_covariance(emvg)),
                                          eta)));
    worst = std::max(
        worst, std::abs(kl_to_spherical_prior(mvg, eta) -
                        dense_kl_to_prior(vec(mvg.mean),
                                          sym_eig(materialize_covariance(mvg)),
                                          eta)));
    worst = std::max(
        worst, std::abs(kl_to_spherical_prior(ffg, eta) -
                        dense_kl_to_prior(vec(ffg.mean),
                                          sym_eig(materialize_covariance(ffg)),
                                          eta)));
  }
  return make_result("kl-closed-form", worst <= 1e-8, worst, 1e-8);
}

CheckResult check_kl_monte_carlo(Rng& rng, int n_samples) {
  const double eta = 1.3;
  double worst_gap = 0.0;
  bool passed = true;

  auto run_family = [&](auto sample_fn, auto logq_fn, double closed) {
    double acc = 0.0, acc2 = 0.0;
    for (int s = 0; s < n_samples; ++s) {
      const Mat w = sample_fn();
      const Vec wv = vec(w);
      const double logp =
          -0.5 * (wv.squaredNorm() / eta +
                  static_cast<double>(wv.size()) *
                      (std::log(eta) + kLog2Pi));
      const double term = logq_fn(w) - logp;
      acc += term;
      acc2 += term * term;
    }
    const double mc = acc / n_samples;
    const double var =
        (acc2 / n_samples - mc * mc) / static_cast<double>(n_samples - 1);
    const double se = std::sqrt(std::max(var, 0.0));
    const double gap = std::abs(mc - closed);
    worst_gap = std::max(worst_gap, gap / std::max(se, 1e-300));
    if (gap > 3.0 * se + 1e-6) passed = false;
  };

  const EmvgPosterior emvg = random_emvg(2, 3, rng);
  run_family([&]() { return sample_emvg(emvg, rng); },
             [&](const Mat& w) { return emvg_log_density(emvg, w); },
             kl_to_spherical_prior(emvg, eta));

  const MvgPosterior mvg = random_mvg(3, 2, rng);
  const SymEig mvg_cov = sym_eig(materialize_covariance(mvg));
  run_family(
      [&]() { return sample_mvg(mvg, rng); },
      [&](const Mat& w) {
        return dense_log_density(vec(w), vec(mvg.mean), mvg_cov);
      },
      kl_to_spherical_prior(mvg, eta));

  const FfgPosterior ffg = random_ffg(2, 2, rng);
  run_family(
      [&]() { return sample_ffg(ffg, rng); },
      [&](const Mat& w) {
        const Mat sigma = ffg.log_sigma.array().exp();
        const Mat z = (w - ffg.mean).cwiseQuotient(sigma);
        return -0.5 * (z.array().square().sum() +
                       static_cast<double>(w.size()) * kLog2Pi) -
               ffg.log_sigma.sum();
      },
      kl_to_spherical_prior(ffg, eta));

  return CheckResult{"kl-monte-carlo", passed,
                     "worst gap " + fmt(worst_gap) + " SE vs bound 3 SE"};
}

CheckResult check_gradient_fd(Rng& rng) {
  double worst = 0.0;
  for (int which = 0; which < 2; ++which) {
    const Task task = which == 0 ? Task::kRegression : Task::kClassification;
    const Index out = which == 0 ? 1 : 3;
    Network net({3, 4, out}, task);
    net.init_weights(rng);
    const Index batch = 6;
    const Mat x = rng.normal_mat(batch, 3);
    BatchTargets targets;
    targets.task = task;
    if (task == Task::kRegression) {
      targets.values = rng.normal_vec(batch);
      targets.precision = 1.4;
    } else {
      targets.labels.resize(static_cast<size_t>(batch));
      for (Index i = 0; i < batch; ++i) {
        targets.labels[static_cast<size_t>(i)] =
            static_cast<int>(rng.uniform_index(out));
      }
    }

    const Mat& preds = net.forward(x);
    const auto grads = net.backward(targets.output_grad(preds));
    Vec flat_grad(net.parameter_count());
    Index offset = 0;
    for (const auto& g : grads) {
      flat_grad.segment(offset, g.size()) = vec(g);
      offset += g.size();
    }

    const Vec theta = net.get_parameters();
    auto objective = [&](const Vec& p) {
      net.set_parameters(p);
      return targets.log_likelihood(net.forward(x)).mean();
    };
    for (Index i = 0; i < theta.size(); ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(theta(i)));
      Vec tp = theta, tm = theta;
      tp(i) += h;
      tm(i) -= h;
      const double fd = (objective(tp) - objective(tm)) / (2.0 * h);
      const double denom = std::max(std::abs(fd), 1e-6);
      worst = std::max(worst, std::abs(fd - flat_grad(i)) / denom);
    }
    net.set_parameters(theta);
  }
  return make_result("gradient-finite-difference", worst <= 1e-5, worst, 1e-5);
}

CheckResult check_noise_update() {
  GaussianNoiseModel noise;
  Vec residuals(3);
  residuals << 1.0, 2.0, 3.0;
  update_noise_precision(noise, residuals);
  const bool ok = std::abs(noise.shape - 7.5) < 1e-12 &&
                  std::abs(noise.rate - 13.0) < 1e-12;
  return CheckResult{"noise-precision-update", ok,
                     "shape " + fmt(noise.shape) + ", rate " +
                         fmt(noise.rate)};
}

std::vector<CheckResult> check_trained_state(uint64_t seed) {
  std::vector<CheckResult> out;
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::kNoisyEkfac;
  cfg.batch_size = 20;
  cfg.epochs = 15;
  cfg.hidden_units = 8;
  cfg.gamma_ex = 0.01;
  cfg.seed = seed;
  cfg.n_mc_eval = 20;

  const Dataset ds = make_mlp_teacher(80, 4, 8, 0.2, seed);
  Network net({ds.dim(), cfg.hidden_units, Index{1}}, Task::kRegression);
  Rng init_rng(Rng::derive(cfg.seed, 0));
  net.init_weights(init_rng);
  Trainer trainer(net, cfg, ds.n(), planned_iterations(cfg, ds.n()));
  BatchTargets targets;
  targets.task = Task::kRegression;
  targets.values = ds.targets;
  const TrainOutcome outcome =
      run_training(net, trainer, ds.features, targets, cfg);

  bool finite = std::isfinite(outcome.final_elbo);
  double sym_worst = 0.0;
  for (size_t l = 0; l < trainer.slots().size(); ++l) {
    const auto& slot = trainer.slots()[l];
    out.push_back(check_rescaling_psd(
        "trained-rescaling-psd-layer" + std::to_string(l), slot.resc));
    finite = finite && all_finite(slot.mean) && all_finite(slot.stats.input_cov) &&
             all_finite(slot.stats.output_cov);
    sym_worst = std::max(
        sym_worst,
        (slot.stats.input_cov - slot.stats.input_cov.transpose()).norm());
    sym_worst = std::max(
        sym_worst,
        (slot.stats.output_cov - slot.stats.output_cov.transpose()).norm());
  }
  out.push_back(CheckResult{"trained-state-finite", finite,
                            "final elbo " + fmt(outcome.final_elbo)});
  out.push_back(make_result("trained-factor-symmetry", sym_worst <= 1e-12,
                            sym_worst, 1e-12));
  return out;
}

}  // namespace

CheckResult check_rescaling_psd(const std::string& name,
                                const RescalingDiag& resc) {
  const double min_entry = resc.grid.minCoeff();
  const double min_damped = resc.damped().minCoeff();
  const bool ok = min_entry >= 0.0 && min_damped > 0.0 &&
                  all_finite(resc.grid);
  return CheckResult{name, ok,
                     "min entry " + fmt(min_entry) + ", min damped " +
                         fmt(min_damped)};
}

std::vector<CheckResult> run_verification(VerifyLevel level, uint64_t seed) {
  const bool full = level == VerifyLevel::kFull;
  Rng rng(Rng::derive(seed, 21));
  std::vector<CheckResult> results;
  results.push_back(check_kron_matvec(rng, full ? 500 : 200));
  results.push_back(check_eigen_multiset(rng, full ? 50 : 20));
  results.push_back(check_frobenius_optimality(rng, full ? 100 : 20));
  results.push_back(check_update_oracles(rng, full ? 200 : 50));
  results.push_back(check_reduction(rng, full ? 100 : 25));
  results.push_back(check_sampling_covariance(rng, full ? 200000 : 20000));
  results.push_back(check_emvg_density(rng, 10));
  results.push_back(check_kl_closed_form(rng, 10));
  results.push_back(check_kl_monte_carlo(rng, full ? 100000 : 10000));
  results.push_back(check_gradient_fd(rng));
  results.push_back(check_noise_update());
  const auto trained = check_trained_state(seed);
  results.insert(results.end(), trained.begin(), trained.end());
  return results;
}

std::string format_check_results(const std::vector<CheckResult>& results) {
  std::ostringstream out;
  for (const auto& r : results) {
    out << (r.passed ? "PASS" : "FAIL") << "  " << r.name;
    if (!r.detail.empty()) out << "  (" << r.detail << ")";
    out << "\n";
  }
  return out.str();
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    if (!r.passed) return false;
  }
  return true;
}

}  // namespace nekfac
