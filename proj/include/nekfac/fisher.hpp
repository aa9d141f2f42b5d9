#pragma once

#include "nekfac/likelihood.hpp"
#include "nekfac/matrix.hpp"
#include "nekfac/network.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace nekfac {

enum class FisherSampling { kEmpirical, kModel };

/// Running Kronecker factors for one layer: input second moment A and
/// pre-activation-gradient second moment S, with their eigendecompositions.
/// Single writer per layer; stats_since_eig counts moving-average updates
/// applied since the eigenbasis was last refreshed.
struct KronStats {
  Mat input_cov;   // A, (fan_in + 1) x (fan_in + 1)
  Mat output_cov;  // S, fan_out x fan_out

  std::optional<SymEig> input_eig;   // Q_A, Lambda_A
  std::optional<SymEig> output_eig;  // Q_S, Lambda_S

  uint64_t stats_updates = 0;
  uint64_t stats_since_eig = 0;

  static KronStats identity(Index fan_in_plus1, Index fan_out);

  void refresh_eig();

  const SymEig& row_eig() const;  // throws if missing
  const SymEig& col_eig() const;
};

/// Diagonal re-scaling matrix R stored as an (fan_in+1) x fan_out grid in
/// unvec layout: grid(i, j) pairs eigenvector i of A with eigenvector j of
/// S. Entries are the undamped second moments; damping is added at use time.
struct RescalingDiag {
  Mat grid;              // entries >= 0
  double gamma_in = 0.0;
  double gamma_ex = 0.0;

  static RescalingDiag ones(Index rows, Index cols);

  double total_damping() const { return gamma_in + gamma_ex; }

  // grid + gamma_in + gamma_ex, the preconditioner diagonal r^gamma.
  Mat damped() const;
  // grid + gamma_in, the diagonal entering the sampling distribution.
  Mat sampling_damped() const;
};

// A <- (1-beta) A + beta * mean_i(a_i a_i^T), same for S with the cached
// pre-activation gradients. Symmetry is enforced. Throws if the layer caches
// are stale relative to net_pass or if beta is outside (0, 1].
void update_kron_stats(KronStats& stats, const LayerState& layer, double beta,
                       uint64_t net_pass);

// R <- (1-omega) R + omega * mean_i [(Q_A^T G_i Q_S) squared entrywise],
// with G_i the per-example weight gradient. Throws if the eigenbasis is
// older than max_eig_staleness stats updates.
void update_rescaling(RescalingDiag& resc, const KronStats& stats,
                      const LayerState& layer, double omega,
                      uint64_t max_eig_staleness);

// The K-FAC eigenvalue grid Lambda_A Lambda_S^T (unvec of the diagonal of
// Lambda_S (x) Lambda_A).
Mat kfac_eigen_rescaling(const KronStats& stats);

// Dense per-layer Fisher estimate: mean over examples of the outer product
// of vec'd per-example gradients. `kModel` draws targets from the model's
// predictive distribution (one per input); `kEmpirical` uses the given
// targets. Guarded to layers with at most kDenseGuard parameters.
std::vector<Mat> exact_fisher_oracle(Network& net, const Mat& x,
                                     const BatchTargets& targets,
                                     FisherSampling sampling, Rng* rng);

}  // namespace nekfac
