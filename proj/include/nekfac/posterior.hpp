#pragma once

#include "nekfac/fisher.hpp"
#include "nekfac/matrix.hpp"
#include "nekfac/rng.hpp"

namespace nekfac {

/// Fully-factorized Gaussian over one layer's weights, parameterized by mean
/// and log standard deviation grids.
struct FfgPosterior {
  Mat mean;       // (fan_in + 1) x fan_out
  Mat log_sigma;  // same shape

  Index parameter_count() const { return mean.size(); }
};

/// Matrix-variate Gaussian with damped Kronecker factors: row covariance
/// scale * (A^g)^-1, column covariance (S^g)^-1, where the damping is split
/// across the factors by pi.
struct MvgPosterior {
  Mat mean;
  SymEig row_factor;  // eigendecomposition of A + pi*sqrt(g_in) I
  SymEig col_factor;  // eigendecomposition of S + (1/pi)*sqrt(g_in) I
  double pi = 1.0;
  double scale = 1.0;  // lambda / N

  Index parameter_count() const { return mean.size(); }
};

/// Eigenvalue-corrected matrix-variate Gaussian: covariance
/// scale * Q (R + g_in I)^-1 Q^T in the Kronecker eigenbasis Q = Q_S (x) Q_A.
struct EmvgPosterior {
  Mat mean;
  SymEig row_eig;  // Q_A (eigenbasis of the undamped input factor)
  SymEig col_eig;  // Q_S
  Mat resc_grid;   // undamped R entries, unvec layout
  double gamma_in = 0.0;
  double scale = 1.0;  // lambda / N

  Index parameter_count() const { return mean.size(); }

  // Per-coordinate variance in the eigenbasis: scale / (r + gamma_in).
  Mat variance_grid() const;
};

// Damping split that keeps the damped Kronecker factors balanced:
// pi = ((tr(A)/rows) / (tr(S)/cols))^(1/4).
double pi_split(const Mat& input_cov, const Mat& output_cov);

MvgPosterior make_mvg(const Mat& mean, const Mat& input_cov,
                      const Mat& output_cov, double gamma_in, double scale);

EmvgPosterior make_emvg(const Mat& mean, const KronStats& stats,
                        const RescalingDiag& resc, double scale);

// --------------------------------------------------------------------------
// Sampling
// --------------------------------------------------------------------------

Mat sample_ffg(const FfgPosterior& post, Rng& rng);
Mat sample_mvg(const MvgPosterior& post, Rng& rng);
Mat sample_emvg(const EmvgPosterior& post, Rng& rng);

// --------------------------------------------------------------------------
// Densities and divergences
// --------------------------------------------------------------------------

double emvg_log_density(const EmvgPosterior& post, const Mat& w);

// KL(q || N(0, eta I)) in closed form.
double kl_to_spherical_prior(const FfgPosterior& post, double eta);
double kl_to_spherical_prior(const MvgPosterior& post, double eta);
double kl_to_spherical_prior(const EmvgPosterior& post, double eta);

// Dense covariance of vec(W). Guarded to kDenseGuard parameters; oracle and
// inspection use only.
Mat materialize_covariance(const FfgPosterior& post);
Mat materialize_covariance(const MvgPosterior& post);
Mat materialize_covariance(const EmvgPosterior& post);

}  // namespace nekfac
