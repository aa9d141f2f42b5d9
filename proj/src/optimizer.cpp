#include "nekfac/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace nekfac {

const char* optimizer_name(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kKfac: return "kfac";
    case OptimizerKind::kEkfac: return "ekfac";
    case OptimizerKind::kNoisyKfac: return "noisy-kfac";
    case OptimizerKind::kNoisyEkfac: return "noisy-ekfac";
    case OptimizerKind::kBbb: return "bbb";
  }
  return "unknown";
}

std::optional<OptimizerKind> parse_optimizer(const std::string& name) {
  if (name == "kfac") return OptimizerKind::kKfac;
  if (name == "ekfac") return OptimizerKind::kEkfac;
  if (name == "noisy-kfac") return OptimizerKind::kNoisyKfac;
  if (name == "noisy-ekfac") return OptimizerKind::kNoisyEkfac;
  if (name == "bbb") return OptimizerKind::kBbb;
  return std::nullopt;
}

Mat ekfac_precondition(const SymEig& row_eig, const SymEig& col_eig,
                       const Mat& resc_grid, double damping, const Mat& v) {
  const Mat projected = project_to_eigenbasis(row_eig.basis, col_eig.basis, v);
  const Mat rescaled =
      (projected.array() / (resc_grid.array() + damping)).matrix();
  return project_from_eigenbasis(row_eig.basis, col_eig.basis, rescaled);
}

Mat kfac_precondition(const SymEig& row_damped, const SymEig& col_damped,
                      const Mat& v) {
  return row_damped.inverse() * v * col_damped.inverse();
}

std::pair<Mat, Mat> pi_damped_factors(const Mat& input_cov,
                                      const Mat& output_cov, double damping) {
  const double pi = pi_split(input_cov, output_cov);
  const double sqrt_damp = std::sqrt(damping);
  return {input_cov + pi * sqrt_damp *
                          Mat::Identity(input_cov.rows(), input_cov.cols()),
          output_cov + (sqrt_damp / pi) *
                           Mat::Identity(output_cov.rows(), output_cov.cols())};
}

namespace {

constexpr double kLogSigmaFloor = -10.0;
constexpr double kLogSigmaInit = -3.0;

bool uses_kron_stats(OptimizerKind kind) {
  return kind != OptimizerKind::kBbb;
}

bool uses_rescaling(OptimizerKind kind) {
  return kind == OptimizerKind::kEkfac || kind == OptimizerKind::kNoisyEkfac;
}

bool is_kfac_family(OptimizerKind kind) {
  return kind == OptimizerKind::kKfac || kind == OptimizerKind::kNoisyKfac;
}

}  // namespace

Trainer::Trainer(Network& net, const TrainConfig& cfg, Index n_train,
                 uint64_t total_iters)
    : net_(net),
      cfg_(cfg),
      n_train_(n_train),
      total_iters_(total_iters),
      rng_(Rng::derive(cfg.seed, 1)) {
  if (n_train < 1) throw std::invalid_argument("Trainer: empty training set");
  const bool noisy_kron = cfg.optimizer == OptimizerKind::kNoisyKfac ||
                          cfg.optimizer == OptimizerKind::kNoisyEkfac;
  gamma_in_ = noisy_kron
                  ? cfg.lambda / (static_cast<double>(n_train) * cfg.eta)
                  : 0.0;
  scale_ = cfg.lambda / static_cast<double>(n_train);

  slots_.resize(net.layer_count());
  bbb_eps_.resize(net.layer_count());
  for (size_t l = 0; l < slots_.size(); ++l) {
    LayerSlot& slot = slots_[l];
    const Mat& w = net.layer(l).weights;
    slot.mean = w;
    slot.stats = KronStats::identity(w.rows(), w.cols());
    slot.resc = RescalingDiag::ones(w.rows(), w.cols());
    slot.resc.gamma_in = gamma_in_;
    slot.resc.gamma_ex = cfg.gamma_ex;
    if (is_kfac_family(cfg.optimizer)) refresh_kfac_caches(slot);
    if (cfg.optimizer == OptimizerKind::kBbb) {
      slot.log_sigma = Mat::Constant(w.rows(), w.cols(), kLogSigmaInit);
    }
  }
}

void Trainer::refresh_kfac_caches(LayerSlot& slot) const {
  slot.pi = pi_split(slot.stats.input_cov, slot.stats.output_cov);
  auto [row_p, col_p] = pi_damped_factors(
      slot.stats.input_cov, slot.stats.output_cov, gamma_in_ + cfg_.gamma_ex);
  slot.row_precond = sym_eig(row_p);
  slot.col_precond = sym_eig(col_p);
  if (cfg_.optimizer == OptimizerKind::kNoisyKfac) {
    auto [row_s, col_s] = pi_damped_factors(slot.stats.input_cov,
                                            slot.stats.output_cov, gamma_in_);
    slot.row_sample = sym_eig(row_s);
    slot.col_sample = sym_eig(col_s);
  }
}

EmvgPosterior Trainer::emvg_view(size_t l) const {
  const LayerSlot& slot = slots_[l];
  return make_emvg(slot.mean, slot.stats, slot.resc, scale_);
}

MvgPosterior Trainer::mvg_view(size_t l) const {
  const LayerSlot& slot = slots_[l];
  if (!slot.row_sample || !slot.col_sample) {
    throw std::runtime_error("mvg_view: sampling factors not initialized");
  }
  MvgPosterior post;
  post.mean = slot.mean;
  post.row_factor = *slot.row_sample;
  post.col_factor = *slot.col_sample;
  post.pi = slot.pi;
  post.scale = scale_;
  return post;
}

FfgPosterior Trainer::ffg_view(size_t l) const {
  const LayerSlot& slot = slots_[l];
  return FfgPosterior{slot.mean, slot.log_sigma};
}

double Trainer::effective_alpha() const {
  if (total_iters_ > 0 && iteration_ > total_iters_ / 2) {
    return 0.1 * cfg_.alpha;
  }
  return cfg_.alpha;
}

double Trainer::effective_rate(double rate) const {
  if (cfg_.decay_all_rates && total_iters_ > 0 &&
      iteration_ > total_iters_ / 2) {
    return 0.1 * rate;
  }
  return rate;
}

void Trainer::sample_weights_into_net(Rng& rng) {
  for (size_t l = 0; l < slots_.size(); ++l) {
    Mat w;
    switch (cfg_.optimizer) {
      case OptimizerKind::kNoisyEkfac:
        w = sample_emvg(emvg_view(l), rng);
        break;
      case OptimizerKind::kNoisyKfac:
        w = sample_mvg(mvg_view(l), rng);
        break;
      case OptimizerKind::kBbb: {
        const LayerSlot& slot = slots_[l];
        bbb_eps_[l] = rng.normal_mat(slot.mean.rows(), slot.mean.cols());
        w = slot.mean +
            slot.log_sigma.array().exp().matrix().cwiseProduct(bbb_eps_[l]);
        break;
      }
      case OptimizerKind::kKfac:
      case OptimizerKind::kEkfac:
        w = slots_[l].mean;
        break;
    }
    net_.layer(l).weights = std::move(w);
  }
}

void Trainer::load_mean_weights() {
  for (size_t l = 0; l < slots_.size(); ++l) {
    net_.layer(l).weights = slots_[l].mean;
  }
}

void Trainer::load_sampled_weights(Rng& rng) { sample_weights_into_net(rng); }

double Trainer::kl_total() const {
  double kl = 0.0;
  switch (cfg_.optimizer) {
    case OptimizerKind::kNoisyEkfac:
      for (size_t l = 0; l < slots_.size(); ++l) {
        kl += kl_to_spherical_prior(emvg_view(l), cfg_.eta);
      }
      break;
    case OptimizerKind::kNoisyKfac:
      for (size_t l = 0; l < slots_.size(); ++l) {
        kl += kl_to_spherical_prior(mvg_view(l), cfg_.eta);
      }
      break;
    case OptimizerKind::kBbb:
      for (size_t l = 0; l < slots_.size(); ++l) {
        kl += kl_to_spherical_prior(ffg_view(l), cfg_.eta);
      }
      break;
    case OptimizerKind::kKfac:
    case OptimizerKind::kEkfac:
      break;
  }
  return kl;
}

void Trainer::run_schedules() {
  if (!uses_kron_stats(cfg_.optimizer)) return;

  const bool stats_due = iteration_ % cfg_.t_stats == 0;
  const bool scale_due =
      uses_rescaling(cfg_.optimizer) && iteration_ % cfg_.t_scale == 0;
  const bool eig_due = iteration_ % cfg_.t_eig == 0;
  const bool reinit_due = uses_rescaling(cfg_.optimizer) &&
                          cfg_.t_reinit > 0 &&
                          iteration_ % cfg_.t_reinit == 0;

  for (auto& slot : slots_) {
    size_t l = static_cast<size_t>(&slot - slots_.data());
    LayerState& layer = net_.layer(l);
    if (stats_due) {
      update_kron_stats(slot.stats, layer, effective_rate(cfg_.beta),
                        net_.pass_id());
    }
    if (scale_due) {
      update_rescaling(slot.resc, slot.stats, layer,
                       effective_rate(cfg_.omega), cfg_.t_eig);
    }
    if (eig_due) {
      if (is_kfac_family(cfg_.optimizer)) {
        refresh_kfac_caches(slot);
      } else {
        slot.stats.refresh_eig();
      }
    }
    if (reinit_due) {
      slot.resc.grid = kfac_eigen_rescaling(slot.stats);
    }
  }
}

std::vector<Mat> Trainer::compute_update(const std::vector<Mat>& mean_grads,
                                         double alpha) {
  std::vector<Mat> deltas(slots_.size());
  for (size_t l = 0; l < slots_.size(); ++l) {
    LayerSlot& slot = slots_[l];
    // V = grad of log-likelihood minus the prior pull on the sampled weights.
    Mat v = mean_grads[l];
    if (gamma_in_ > 0.0) v -= gamma_in_ * net_.layer(l).weights;

    switch (cfg_.optimizer) {
      case OptimizerKind::kNoisyEkfac:
      case OptimizerKind::kEkfac:
        deltas[l] = alpha * ekfac_precondition(
                                slot.stats.row_eig(), slot.stats.col_eig(),
                                slot.resc.grid, slot.resc.total_damping(), v);
        break;
      case OptimizerKind::kNoisyKfac:
      case OptimizerKind::kKfac:
        deltas[l] =
            alpha * kfac_precondition(*slot.row_precond, *slot.col_precond, v);
        break;
      case OptimizerKind::kBbb:
        deltas[l] = alpha * (mean_grads[l] -
                             (scale_ / cfg_.eta) * slot.mean);
        break;
    }
  }
  return deltas;
}

StepReport Trainer::step(const Mat& x, const BatchTargets& targets) {
  ++iteration_;
  const double alpha_k = effective_alpha();

  sample_weights_into_net(rng_);
  const double kl_pre = kl_total();

  const Mat& preds = net_.forward(x);
  const double batch_mean_ll = targets.log_likelihood(preds).mean();

  std::vector<Mat> mean_grads;
  const bool stats_pass_due =
      uses_kron_stats(cfg_.optimizer) &&
      (iteration_ % cfg_.t_stats == 0 ||
       (uses_rescaling(cfg_.optimizer) && iteration_ % cfg_.t_scale == 0));
  if (cfg_.fisher_sampling == FisherSampling::kModel && stats_pass_due) {
    // Statistics from model-sampled targets; the update direction still
    // uses the data targets.
    const BatchTargets model_targets = targets.sample_from_model(preds, rng_);
    net_.backward(model_targets.output_grad(preds));
    run_schedules();
    mean_grads = net_.backward(targets.output_grad(preds));
  } else {
    mean_grads = net_.backward(targets.output_grad(preds));
    run_schedules();
  }

  std::vector<Mat> deltas = compute_update(mean_grads, alpha_k);
  auto finite = [&]() {
    for (const auto& d : deltas) {
      if (!d.allFinite()) return false;
    }
    return true;
  };
  if (!finite()) {
    std::cerr << "warning: non-finite update at iteration " << iteration_
              << ", retrying with halved stepsize\n";
    deltas = compute_update(mean_grads, 0.5 * alpha_k);
    if (!finite()) {
      throw std::runtime_error("step: non-finite update at iteration " +
                               std::to_string(iteration_));
    }
  }

  for (size_t l = 0; l < slots_.size(); ++l) {
    slots_[l].mean += deltas[l];
    require_finite(slots_[l].mean, "step mean layer " + std::to_string(l));
  }
  if (cfg_.optimizer == OptimizerKind::kBbb) {
    for (size_t l = 0; l < slots_.size(); ++l) {
      LayerSlot& slot = slots_[l];
      const Mat sigma = slot.log_sigma.array().exp();
      const Mat grad_log_sigma =
          mean_grads[l].cwiseProduct(bbb_eps_[l]).cwiseProduct(sigma) -
          (scale_ / cfg_.eta) * sigma.array().square().matrix() +
          scale_ * Mat::Ones(sigma.rows(), sigma.cols());
      slot.log_sigma =
          (slot.log_sigma + alpha_k * grad_log_sigma).cwiseMax(kLogSigmaFloor);
      require_finite(slot.log_sigma, "step log_sigma");
    }
  }

  StepReport report;
  report.iteration = iteration_;
  report.ll_term = static_cast<double>(n_train_) * batch_mean_ll;
  report.kl_term = kl_pre;
  report.elbo = report.ll_term - cfg_.lambda * report.kl_term;
  report.layer_grad_norms.reserve(slots_.size());
  for (const auto& g : mean_grads) {
    report.layer_grad_norms.push_back(g.norm());
  }
  return report;
}

double Trainer::estimate_elbo(const Mat& x, const BatchTargets& targets,
                              int n_mc, Rng& rng) {
  if (n_mc < 1) throw std::invalid_argument("estimate_elbo: n_mc must be >= 1");
  double acc = 0.0;
  if (cfg_.is_noisy()) {
    for (int s = 0; s < n_mc; ++s) {
      load_sampled_weights(rng);
      acc += targets.log_likelihood(net_.forward(x)).sum();
    }
    acc /= static_cast<double>(n_mc);
    load_mean_weights();
  } else {
    load_mean_weights();
    acc = targets.log_likelihood(net_.forward(x)).sum();
  }
  return acc - cfg_.lambda * kl_total();
}

uint64_t planned_iterations(const TrainConfig& cfg, Index n) {
  const uint64_t per_epoch = static_cast<uint64_t>(
      (n + cfg.batch_size - 1) / cfg.batch_size);
  uint64_t total = cfg.epochs * per_epoch;
  if (cfg.max_iters > 0) total = std::min(total, cfg.max_iters);
  return total;
}

namespace {

Mat select_rows(const Mat& x, const std::vector<Index>& idx) {
  Mat out(static_cast<Index>(idx.size()), x.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Index>(i)) = x.row(idx[i]);
  }
  return out;
}

}  // namespace

TrainOutcome run_training(Network& net, Trainer& trainer, const Mat& x,
                          const BatchTargets& targets, const TrainConfig& cfg,
                          const StepCallback& on_step) {
  const Index n = x.rows();
  if (targets.size() != n) {
    throw std::invalid_argument("run_training: target count mismatch");
  }

  TrainOutcome outcome;
  Rng shuffle_rng = Rng::derive(cfg.seed, 3);
  Rng eval_rng = Rng::derive(cfg.seed, 4);
  const uint64_t total = planned_iterations(cfg, n);
  outcome.reports.reserve(total);

  uint64_t k = 0;
  bool done = total == 0;
  for (uint64_t epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    const std::vector<Index> perm = shuffle_rng.permutation(n);
    for (Index start = 0; start < n && !done; start += cfg.batch_size) {
      const Index stop = std::min<Index>(start + cfg.batch_size, n);
      std::vector<Index> idx(perm.begin() + start, perm.begin() + stop);
      BatchTargets batch = targets.subset(idx);
      batch.precision = outcome.noise.mean_precision();
      const StepReport report = trainer.step(select_rows(x, idx), batch);
      outcome.reports.push_back(report);
      if (on_step) on_step(report);
      done = ++k >= total;
    }
    if (targets.task == Task::kRegression) {
      trainer.load_mean_weights();
      const Vec residuals = targets.values - net.forward(x).col(0);
      update_noise_precision(outcome.noise, residuals);
    }
  }

  BatchTargets full = targets;
  full.precision = outcome.noise.mean_precision();
  outcome.final_elbo =
      trainer.estimate_elbo(x, full, cfg.n_mc_eval, eval_rng);
  return outcome;
}

}  // namespace nekfac
