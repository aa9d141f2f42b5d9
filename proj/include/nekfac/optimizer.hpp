#pragma once

#include "nekfac/fisher.hpp"
#include "nekfac/likelihood.hpp"
#include "nekfac/network.hpp"
#include "nekfac/posterior.hpp"
#include "nekfac/rng.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace nekfac {

enum class OptimizerKind { kKfac, kEkfac, kNoisyKfac, kNoisyEkfac, kBbb };

const char* optimizer_name(OptimizerKind kind);
std::optional<OptimizerKind> parse_optimizer(const std::string& name);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kNoisyEkfac;
  double alpha = 0.01;     // stepsize
  double beta = 0.001;     // covariance-factor moving-average rate
  double omega = 0.01;     // re-scaling moving-average rate
  double lambda = 1.0;     // KL weight
  double eta = 1.0;        // prior variance
  double gamma_ex = 0.0;   // extrinsic damping
  uint64_t t_stats = 1;    // stats update interval
  uint64_t t_scale = 1;    // re-scaling update interval
  uint64_t t_eig = 5;      // eigenbasis (or inverse) update interval
  uint64_t t_reinit = 50;  // re-scaling re-initialization interval (0 = off)
  Index batch_size = 10;
  uint64_t epochs = 40;
  uint64_t max_iters = 0;  // 0 = no cap
  uint64_t seed = 0;
  FisherSampling fisher_sampling = FisherSampling::kEmpirical;
  Index hidden_units = 50;
  bool decay_all_rates = false;  // decay beta/omega along with alpha
  int n_mc_eval = 100;           // posterior samples for ELBO / predictive

  bool is_noisy() const {
    return optimizer == OptimizerKind::kNoisyKfac ||
           optimizer == OptimizerKind::kNoisyEkfac ||
           optimizer == OptimizerKind::kBbb;
  }
};

struct StepReport {
  uint64_t iteration = 0;
  double elbo = 0.0;
  double ll_term = 0.0;
  double kl_term = 0.0;
  std::vector<double> layer_grad_norms;
};

// --------------------------------------------------------------------------
// Preconditioners (exposed for the update-derivation oracles)
// --------------------------------------------------------------------------

// Q_A [ (Q_A^T V Q_S) ./ (resc_grid + damping) ] Q_S^T, i.e. the inverse of
// the eigenbasis-diagonal curvature applied to V.
Mat ekfac_precondition(const SymEig& row_eig, const SymEig& col_eig,
                       const Mat& resc_grid, double damping, const Mat& v);

// [A^g]^-1 V [S^g]^-1 from eigendecompositions of the damped factors.
Mat kfac_precondition(const SymEig& row_damped, const SymEig& col_damped,
                      const Mat& v);

// (A + pi sqrt(damping) I, S + (1/pi) sqrt(damping) I) with the trace-norm
// pi split.
std::pair<Mat, Mat> pi_damped_factors(const Mat& input_cov,
                                      const Mat& output_cov, double damping);

// --------------------------------------------------------------------------
// Trainer
// --------------------------------------------------------------------------

/// Owns the per-layer optimizer state (posterior means, Kronecker statistics,
/// re-scaling grids, BBB variances) for one network and runs single update
/// iterations. The network is exclusively owned for the trainer's lifetime.
class Trainer {
 public:
  struct LayerSlot {
    Mat mean;  // M, posterior mean / point estimate
    KronStats stats;
    RescalingDiag resc;

    // K-FAC family: cached damped-factor eigendecompositions.
    std::optional<SymEig> row_precond, col_precond;  // total damping
    std::optional<SymEig> row_sample, col_sample;    // intrinsic damping
    double pi = 1.0;

    // BBB.
    Mat log_sigma;
  };

  // The network's current weights seed the posterior means. total_iters
  // drives the stepsize decay schedule (0 disables decay).
  Trainer(Network& net, const TrainConfig& cfg, Index n_train,
          uint64_t total_iters);

  StepReport step(const Mat& x, const BatchTargets& targets);

  // Loads W <- M (point estimate / posterior mean) into the network.
  void load_mean_weights();
  // Loads one posterior draw into the network (mean for point methods).
  void load_sampled_weights(Rng& rng);

  // Monte-Carlo ELBO over the full dataset: mean over n_mc posterior draws
  // of the summed log-likelihood, minus lambda * KL(q || prior).
  double estimate_elbo(const Mat& x, const BatchTargets& targets, int n_mc,
                       Rng& rng);

  // Sum of per-layer KL(q_l || N(0, eta I)); zero for point methods.
  double kl_total() const;

  double gamma_in() const { return gamma_in_; }
  double posterior_scale() const { return scale_; }
  uint64_t iteration() const { return iteration_; }
  const TrainConfig& config() const { return cfg_; }
  Network& network() { return net_; }
  Rng& rng() { return rng_; }

  std::vector<LayerSlot>& slots() { return slots_; }
  const std::vector<LayerSlot>& slots() const { return slots_; }

  EmvgPosterior emvg_view(size_t l) const;
  MvgPosterior mvg_view(size_t l) const;
  FfgPosterior ffg_view(size_t l) const;

 private:
  double effective_alpha() const;
  double effective_rate(double rate) const;
  void sample_weights_into_net(Rng& rng);
  void refresh_kfac_caches(LayerSlot& slot) const;
  std::vector<Mat> compute_update(const std::vector<Mat>& mean_grads,
                                  double alpha);
  void run_schedules();

  Network& net_;
  TrainConfig cfg_;
  Index n_train_;
  uint64_t total_iters_;
  double gamma_in_;  // lambda / (N eta) for noisy methods, else 0
  double scale_;     // lambda / N
  uint64_t iteration_ = 0;
  Rng rng_;
  std::vector<LayerSlot> slots_;
  std::vector<Mat> bbb_eps_;  // reparameterization draws of the current step
};

// --------------------------------------------------------------------------
// Training driver
// --------------------------------------------------------------------------

struct TrainOutcome {
  std::vector<StepReport> reports;
  double final_elbo = 0.0;
  GaussianNoiseModel noise;
};

using StepCallback = std::function<void(const StepReport&)>;

// Epoch loop with seeded shuffling, per-epoch noise-precision refresh
// (regression), and a final full-data ELBO estimate.
TrainOutcome run_training(Network& net, Trainer& trainer, const Mat& x,
                          const BatchTargets& targets, const TrainConfig& cfg,
                          const StepCallback& on_step = nullptr);

// Planned iteration count for a dataset of n examples under cfg.
uint64_t planned_iterations(const TrainConfig& cfg, Index n);

}  // namespace nekfac
