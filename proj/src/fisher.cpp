#include "nekfac/fisher.hpp"

#include <stdexcept>
#include <string>

namespace nekfac {

KronStats KronStats::identity(Index fan_in_plus1, Index fan_out) {
  KronStats stats;
  stats.input_cov = Mat::Identity(fan_in_plus1, fan_in_plus1);
  stats.output_cov = Mat::Identity(fan_out, fan_out);
  stats.refresh_eig();
  return stats;
}

void KronStats::refresh_eig() {
  input_eig = sym_eig(input_cov);
  output_eig = sym_eig(output_cov);
  stats_since_eig = 0;
}

const SymEig& KronStats::row_eig() const {
  if (!input_eig) throw std::runtime_error("KronStats: input eigenbasis missing");
  return *input_eig;
}

const SymEig& KronStats::col_eig() const {
  if (!output_eig) throw std::runtime_error("KronStats: output eigenbasis missing");
  return *output_eig;
}

RescalingDiag RescalingDiag::ones(Index rows, Index cols) {
  RescalingDiag resc;
  resc.grid = Mat::Ones(rows, cols);
  return resc;
}

Mat RescalingDiag::damped() const {
  return grid.array() + total_damping();
}

Mat RescalingDiag::sampling_damped() const {
  return grid.array() + gamma_in;
}

void update_kron_stats(KronStats& stats, const LayerState& layer, double beta,
                       uint64_t net_pass) {
  if (beta < 0.0 || beta > 1.0) {
    throw std::invalid_argument("update_kron_stats: beta must be in [0, 1]");
  }
  if (layer.forward_pass == 0 || layer.forward_pass != net_pass ||
      layer.backward_pass != net_pass) {
    throw std::runtime_error("update_kron_stats: stale layer caches");
  }
  if (beta == 0.0) return;

  const double inv_batch = 1.0 / static_cast<double>(layer.inputs.rows());
  const Mat batch_a = inv_batch * layer.inputs.transpose() * layer.inputs;
  const Mat batch_s =
      inv_batch * layer.preact_grads.transpose() * layer.preact_grads;

  stats.input_cov = (1.0 - beta) * stats.input_cov + beta * batch_a;
  stats.output_cov = (1.0 - beta) * stats.output_cov + beta * batch_s;
  stats.input_cov = 0.5 * (stats.input_cov + stats.input_cov.transpose()).eval();
  stats.output_cov =
      0.5 * (stats.output_cov + stats.output_cov.transpose()).eval();
  require_finite(stats.input_cov, "update_kron_stats input_cov");
  require_finite(stats.output_cov, "update_kron_stats output_cov");

  ++stats.stats_updates;
  ++stats.stats_since_eig;
}

void update_rescaling(RescalingDiag& resc, const KronStats& stats,
                      const LayerState& layer, double omega,
                      uint64_t max_eig_staleness) {
  if (omega < 0.0 || omega > 1.0) {
    throw std::invalid_argument("update_rescaling: omega must be in [0, 1]");
  }
  if (stats.stats_since_eig > max_eig_staleness) {
    throw std::runtime_error(
        "update_rescaling: eigenbasis stale (" +
        std::to_string(stats.stats_since_eig) + " stats updates old, limit " +
        std::to_string(max_eig_staleness) + ")");
  }
  if (layer.backward_pass == 0 || layer.backward_pass != layer.forward_pass) {
    throw std::runtime_error("update_rescaling: stale layer caches");
  }
  if (omega == 0.0) return;

  const Mat& q_row = stats.row_eig().basis;
  const Mat& q_col = stats.col_eig().basis;
  const Index batch = layer.inputs.rows();

  Mat second_moment = Mat::Zero(resc.grid.rows(), resc.grid.cols());
  for (Index i = 0; i < batch; ++i) {
    const Mat projected =
        project_to_eigenbasis(q_row, q_col, layer.example_gradient(i));
    second_moment += projected.cwiseProduct(projected);
  }
  second_moment /= static_cast<double>(batch);

  resc.grid = (1.0 - omega) * resc.grid + omega * second_moment;
  require_finite(resc.grid, "update_rescaling grid");
}

Mat kfac_eigen_rescaling(const KronStats& stats) {
  return stats.row_eig().eigvals * stats.col_eig().eigvals.transpose();
}

std::vector<Mat> exact_fisher_oracle(Network& net, const Mat& x,
                                     const BatchTargets& targets,
                                     FisherSampling sampling, Rng* rng) {
  for (size_t l = 0; l < net.layer_count(); ++l) {
    if (net.layer(l).weights.size() > kDenseGuard) {
      throw std::invalid_argument(
          "exact_fisher_oracle: layer " + std::to_string(l) +
          " exceeds the dense size guard");
    }
  }
  if (sampling == FisherSampling::kModel && rng == nullptr) {
    throw std::invalid_argument("exact_fisher_oracle: model sampling needs rng");
  }

  const Mat& preds = net.forward(x);
  const BatchTargets used = sampling == FisherSampling::kModel
                                ? targets.sample_from_model(preds, *rng)
                                : targets;
  net.backward(used.output_grad(preds));

  const Index batch = x.rows();
  std::vector<Mat> fisher(net.layer_count());
  for (size_t l = 0; l < net.layer_count(); ++l) {
    const LayerState& layer = net.layer(l);
    const Index dim = layer.weights.size();
    Mat acc = Mat::Zero(dim, dim);
    for (Index i = 0; i < batch; ++i) {
      const Vec g = vec(layer.example_gradient(i));
      acc.noalias() += g * g.transpose();
    }
    fisher[l] = acc / static_cast<double>(batch);
  }
  return fisher;
}

}  // namespace nekfac
