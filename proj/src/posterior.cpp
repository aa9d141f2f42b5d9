#include "nekfac/posterior.hpp"

#include <cmath>
#include <stdexcept>

namespace nekfac {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;

void check_dense_guard(Index params, const char* what) {
  if (params > kDenseGuard) {
    throw std::invalid_argument(std::string(what) +
                                ": parameter count exceeds dense size guard");
  }
}
}  // namespace

Mat EmvgPosterior::variance_grid() const {
  return scale / (resc_grid.array() + gamma_in);
}

double pi_split(const Mat& input_cov, const Mat& output_cov) {
  const double row_norm =
      input_cov.trace() / static_cast<double>(input_cov.rows());
  const double col_norm =
      output_cov.trace() / static_cast<double>(output_cov.rows());
  if (row_norm <= 0.0 || col_norm <= 0.0) {
    throw std::invalid_argument("pi_split: factors must have positive trace");
  }
  return std::pow(row_norm / col_norm, 0.25);
}

MvgPosterior make_mvg(const Mat& mean, const Mat& input_cov,
                      const Mat& output_cov, double gamma_in, double scale) {
  MvgPosterior post;
  post.mean = mean;
  post.pi = pi_split(input_cov, output_cov);
  post.scale = scale;
  const double sqrt_damp = std::sqrt(gamma_in);
  post.row_factor = sym_eig(
      input_cov + post.pi * sqrt_damp *
                      Mat::Identity(input_cov.rows(), input_cov.cols()));
  post.col_factor = sym_eig(
      output_cov + (sqrt_damp / post.pi) *
                       Mat::Identity(output_cov.rows(), output_cov.cols()));
  return post;
}

EmvgPosterior make_emvg(const Mat& mean, const KronStats& stats,
                        const RescalingDiag& resc, double scale) {
  EmvgPosterior post;
  post.mean = mean;
  post.row_eig = stats.row_eig();
  post.col_eig = stats.col_eig();
  post.resc_grid = resc.grid;
  post.gamma_in = resc.gamma_in;
  post.scale = scale;
  return post;
}

Mat sample_ffg(const FfgPosterior& post, Rng& rng) {
  const Mat eps = rng.normal_mat(post.mean.rows(), post.mean.cols());
  return post.mean + post.log_sigma.array().exp().matrix().cwiseProduct(eps);
}

Mat sample_mvg(const MvgPosterior& post, Rng& rng) {
  const Mat eps = rng.normal_mat(post.mean.rows(), post.mean.cols());
  // The draw is scaled per eigen-coordinate of the damped factors and then
  // rotated out of the eigenbasis. This is the same distribution as applying
  // the dense inverse-square-root factors, but it keeps the noise attached
  // to the factor eigenvectors, so relabeling input features relabels the
  // sampled weights with it instead of producing an unrelated draw.
  const Mat scaled =
      (post.row_factor.eigvals.array().pow(-0.5).matrix() *
       post.col_factor.eigvals.array().pow(-0.5).matrix().transpose())
          .cwiseProduct(eps);
  return post.mean + std::sqrt(post.scale) *
                         project_from_eigenbasis(post.row_factor.basis,
                                                 post.col_factor.basis, scaled);
}

Mat sample_emvg(const EmvgPosterior& post, Rng& rng) {
  const Mat eps = rng.normal_mat(post.mean.rows(), post.mean.cols());
  const Mat scaled = eps.cwiseProduct(post.variance_grid().cwiseSqrt());
  return post.mean +
         project_from_eigenbasis(post.row_eig.basis, post.col_eig.basis, scaled);
}

double emvg_log_density(const EmvgPosterior& post, const Mat& w) {
  if (w.rows() != post.mean.rows() || w.cols() != post.mean.cols()) {
    throw std::invalid_argument("emvg_log_density: shape mismatch");
  }
  const Mat var = post.variance_grid();
  if ((var.array() <= 0.0).any()) {
    throw std::runtime_error("emvg_log_density: nonpositive variance entry");
  }
  const Mat centered = project_to_eigenbasis(post.row_eig.basis,
                                             post.col_eig.basis, w - post.mean);
  const double quad = (centered.array().square() / var.array()).sum();
  const double log_det = var.array().log().sum();
  return -0.5 * (quad + log_det +
                 kLog2Pi * static_cast<double>(post.parameter_count()));
}

// KL(N(mu, Sigma) || N(0, eta I))
// = 0.5 [tr(Sigma)/eta + |mu|^2/eta - k + k log(eta) - log det Sigma]
namespace {
double gaussian_kl(double trace_cov, double mean_sq_norm, double log_det_cov,
                   double k, double eta) {
  return 0.5 * (trace_cov / eta + mean_sq_norm / eta - k + k * std::log(eta) -
                log_det_cov);
}
}  // namespace

double kl_to_spherical_prior(const FfgPosterior& post, double eta) {
  if (eta <= 0.0) throw std::invalid_argument("kl: eta must be positive");
  const auto var = post.log_sigma.array().exp().square();
  return gaussian_kl(var.sum(), post.mean.squaredNorm(), var.log().sum(),
                     static_cast<double>(post.parameter_count()), eta);
}

double kl_to_spherical_prior(const MvgPosterior& post, double eta) {
  if (eta <= 0.0) throw std::invalid_argument("kl: eta must be positive");
  const Index m = post.row_factor.dim();
  const Index p = post.col_factor.dim();
  // Row covariance scale*(A^g)^-1, column covariance (S^g)^-1; Kronecker
  // identities give trace and determinant from the factor eigenvalues.
  const double trace_cov = post.scale *
                           post.row_factor.eigvals.cwiseInverse().sum() *
                           post.col_factor.eigvals.cwiseInverse().sum();
  const double k = static_cast<double>(m * p);
  const double log_det_cov = k * std::log(post.scale) -
                             static_cast<double>(p) * post.row_factor.log_det() -
                             static_cast<double>(m) * post.col_factor.log_det();
  return gaussian_kl(trace_cov, post.mean.squaredNorm(), log_det_cov, k, eta);
}

double kl_to_spherical_prior(const EmvgPosterior& post, double eta) {
  if (eta <= 0.0) throw std::invalid_argument("kl: eta must be positive");
  const Mat var = post.variance_grid();
  return gaussian_kl(var.sum(), post.mean.squaredNorm(),
                     var.array().log().sum(),
                     static_cast<double>(post.parameter_count()), eta);
}

Mat materialize_covariance(const FfgPosterior& post) {
  check_dense_guard(post.parameter_count(), "materialize_covariance(ffg)");
  return vec(post.log_sigma.array().exp().square().matrix()).asDiagonal();
}

Mat materialize_covariance(const MvgPosterior& post) {
  check_dense_guard(post.parameter_count(), "materialize_covariance(mvg)");
  // cov(vec W) = col_cov (x) row_cov for W = M + L_row X L_col^T.
  return kron_dense(post.col_factor.inverse(),
                    post.scale * post.row_factor.inverse());
}

Mat materialize_covariance(const EmvgPosterior& post) {
  check_dense_guard(post.parameter_count(), "materialize_covariance(emvg)");
  const Mat q = kron_dense(post.col_eig.basis, post.row_eig.basis);
  const Vec diag = vec(post.variance_grid());
  return q * diag.asDiagonal() * q.transpose();
}

}  // namespace nekfac
