#include "nekfac/fisher.hpp"
#include "nekfac/posterior.hpp"
#include "nekfac/rng.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace nekfac;

namespace {

double max_abs(const Mat& m) { return m.cwiseAbs().maxCoeff(); }

// Orthogonal 2x2 basis with every entry at the same magnitude, so every
// covariance entry stays far from zero and sampling checks are decidable.
Mat flat_basis2() {
  Mat q(2, 2);
  q << 1.0, 1.0, 1.0, -1.0;
  return q / std::sqrt(2.0);
}

SymEig make_eig(const Mat& basis, const Vec& eigvals) {
  return SymEig{basis, eigvals};
}

// 2x2-layer posterior with well-spread variances; all 16 covariance entries
// are at least ~20% of the largest one.
EmvgPosterior designed_emvg(double gamma_in = 0.1) {
  EmvgPosterior post;
  post.mean = (Mat(2, 2) << 0.3, -0.2, 0.1, 0.4).finished();
  post.row_eig = make_eig(flat_basis2(), (Vec(2) << 1.0, 1.0).finished());
  post.col_eig = make_eig(flat_basis2(), (Vec(2) << 1.0, 1.0).finished());
  post.scale = 0.7;
  post.gamma_in = gamma_in;
  // variance = scale / (r + gamma): choose r so the variances are 4,2,1,0.5
  // times a base unit.
  Mat var(2, 2);
  var << 0.8, 0.2, 0.4, 0.1;
  post.resc_grid = (post.scale / var.array() - gamma_in).matrix();
  return post;
}

MvgPosterior designed_mvg() {
  MvgPosterior post;
  post.mean = (Mat(2, 2) << -0.1, 0.25, 0.05, -0.3).finished();
  post.row_factor = make_eig(flat_basis2(), (Vec(2) << 4.0, 1.0).finished());
  post.col_factor = make_eig(flat_basis2(), (Vec(2) << 0.8, 0.2).finished());
  post.pi = 1.0;
  post.scale = 0.7;
  return post;
}

// Dense covariance assembled from first principles with the naive Kronecker
// oracle (independent of materialize_covariance).
Mat dense_cov_oracle(const EmvgPosterior& post) {
  const Mat q =
      oracle::kron_naive(post.col_eig.basis, post.row_eig.basis);
  return q * oracle::vec_naive(post.variance_grid()).asDiagonal() *
         q.transpose();
}

Mat dense_cov_oracle(const MvgPosterior& post) {
  const Mat row_cov = post.scale * oracle::dense_inverse(post.row_factor.apply(
                                       post.row_factor.eigvals));
  const Mat col_cov = oracle::dense_inverse(
      post.col_factor.apply(post.col_factor.eigvals));
  return oracle::kron_naive(col_cov, row_cov);
}

Mat dense_cov_oracle(const FfgPosterior& post) {
  const Vec var = oracle::vec_naive(
      post.log_sigma.array().exp().square().matrix());
  return var.asDiagonal();
}

}  // namespace

TEST_CASE("pi damping split hand value") {
  // tr(A)/rows = 4, tr(S)/cols = 1 -> pi = 4^(1/4) = sqrt(2).
  const Mat a = 4.0 * Mat::Identity(2, 2);
  const Mat s = Mat::Identity(3, 3);
  CHECK(pi_split(a, s) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(pi_split(s, s) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS(pi_split(Mat::Zero(2, 2), s));
}

TEST_CASE("make_mvg applies the pi-split damping to each factor") {
  Rng rng(71);
  const Mat a = oracle::random_spd(rng, 3, 0.5, 3.0);
  const Mat s = oracle::random_spd(rng, 2, 0.5, 3.0);
  const double gamma_in = 0.16;
  const MvgPosterior post = make_mvg(Mat::Zero(3, 2), a, s, gamma_in, 0.5);

  const double pi = pi_split(a, s);
  CHECK(post.pi == doctest::Approx(pi).epsilon(1e-12));
  const Mat row_expected =
      a + pi * std::sqrt(gamma_in) * Mat::Identity(3, 3);
  const Mat col_expected =
      s + (std::sqrt(gamma_in) / pi) * Mat::Identity(2, 2);
  CHECK(max_abs(post.row_factor.apply(post.row_factor.eigvals) -
                row_expected) <= 1e-10);
  CHECK(max_abs(post.col_factor.apply(post.col_factor.eigvals) -
                col_expected) <= 1e-10);
}

TEST_CASE("make_emvg copies the trainer state into the posterior view") {
  Rng rng(72);
  KronStats stats;
  stats.input_cov = oracle::random_spd(rng, 3);
  stats.output_cov = oracle::random_spd(rng, 2);
  stats.refresh_eig();
  RescalingDiag resc = RescalingDiag::ones(3, 2);
  resc.grid *= 1.7;
  resc.gamma_in = 0.03;

  const Mat mean = rng.normal_mat(3, 2);
  const EmvgPosterior post = make_emvg(mean, stats, resc, 0.25);
  CHECK(post.mean == mean);
  CHECK(post.gamma_in == 0.03);
  CHECK(post.scale == 0.25);
  CHECK(max_abs(post.variance_grid() -
                Mat::Constant(3, 2, 0.25 / (1.7 + 0.03))) <= 1e-15);
}

TEST_CASE("a zero-scale posterior samples exactly its mean") {
  Rng rng(73);
  EmvgPosterior post = designed_emvg();
  post.scale = 0.0;
  post.resc_grid = Mat::Ones(2, 2);  // variance = 0/(r+g) = 0
  CHECK(max_abs(sample_emvg(post, rng) - post.mean) == 0.0);
}

TEST_CASE("identity-basis unit-variance sampling is mean plus white noise") {
  EmvgPosterior post;
  post.mean = (Mat(2, 2) << 1, 2, 3, 4).finished();
  post.row_eig = make_eig(Mat::Identity(2, 2), Vec::Ones(2));
  post.col_eig = make_eig(Mat::Identity(2, 2), Vec::Ones(2));
  post.resc_grid = Mat::Ones(2, 2);
  post.gamma_in = 0.0;
  post.scale = 1.0;  // variance grid = 1/(1+0) = 1

  Rng rng(74), shadow(74);
  const Mat x = shadow.normal_mat(2, 2);
  CHECK(max_abs(sample_emvg(post, rng) - (post.mean + x)) == 0.0);
}

TEST_CASE("identity-factor MVG sampling is mean plus white noise") {
  const MvgPosterior post =
      make_mvg((Mat(2, 2) << 1, -1, 0.5, 2).finished(), Mat::Identity(2, 2),
               Mat::Identity(2, 2), 0.0, 1.0);
  Rng rng(75), shadow(75);
  const Mat x = shadow.normal_mat(2, 2);
  CHECK(max_abs(sample_mvg(post, rng) - (post.mean + x)) <= 1e-15);
}

TEST_CASE("FFG sampling is the reparameterized draw") {
  FfgPosterior post;
  post.mean = (Mat(2, 2) << 1, 2, 3, 4).finished();
  post.log_sigma = Mat::Constant(2, 2, std::log(0.5));
  Rng rng(76), shadow(76);
  const Mat eps = shadow.normal_mat(2, 2);
  CHECK(max_abs(sample_ffg(post, rng) - (post.mean + 0.5 * eps)) <= 1e-15);

  post.log_sigma = Mat::Constant(2, 2, -50.0);  // sigma -> 0 collapses to mean
  CHECK(max_abs(sample_ffg(post, rng) - post.mean) <= 1e-20);
}

TEST_CASE("sampling covariance of the designed posteriors matches the law") {
  const int n = 100000;
  Rng rng(77);

  SUBCASE("eigenvalue-corrected posterior") {
    const EmvgPosterior post = designed_emvg();
    Mat draws(n, 4);
    for (int i = 0; i < n; ++i) {
      draws.row(i) = oracle::vec_naive(sample_emvg(post, rng)).transpose();
    }
    const auto m = oracle::sample_moments(draws);
    const Mat target = dense_cov_oracle(post);
    const double scale_ref = max_abs(target);
    CHECK(max_abs(m.cov - target) / scale_ref <= 0.05);
    CHECK((m.mean - oracle::vec_naive(post.mean)).cwiseAbs().maxCoeff() <=
          0.05 * std::sqrt(scale_ref));
  }

  SUBCASE("Kronecker-factored posterior") {
    const MvgPosterior post = designed_mvg();
    Mat draws(n, 4);
    for (int i = 0; i < n; ++i) {
      draws.row(i) = oracle::vec_naive(sample_mvg(post, rng)).transpose();
    }
    const auto m = oracle::sample_moments(draws);
    const Mat target = dense_cov_oracle(post);
    CHECK(max_abs(m.cov - target) / max_abs(target) <= 0.05);
  }

  SUBCASE("fully factorized posterior") {
    FfgPosterior post;
    post.mean = (Mat(2, 2) << 0.1, -0.2, 0.3, 0.0).finished();
    post.log_sigma = (Mat(2, 2) << std::log(2.0), std::log(1.0),
                      std::log(1.5), std::log(0.7))
                         .finished();
    Mat draws(n, 4);
    for (int i = 0; i < n; ++i) {
      draws.row(i) = oracle::vec_naive(sample_ffg(post, rng)).transpose();
    }
    const auto m = oracle::sample_moments(draws);
    const Mat target = dense_cov_oracle(post);
    CHECK(max_abs(m.cov - target) / max_abs(target) <= 0.05);
  }
}

TEST_CASE("log density at the mean is the negative half log-normalizer") {
  const EmvgPosterior post = designed_emvg();
  const Mat var = post.variance_grid();
  const double expected =
      -0.5 * (var.array().log().sum() + 4.0 * std::log(2.0 * M_PI));
  CHECK(emvg_log_density(post, post.mean) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("log density on a 1x1 layer reduces to the scalar Gaussian") {
  EmvgPosterior post;
  post.mean = Mat::Constant(1, 1, 0.4);
  post.row_eig = make_eig(Mat::Identity(1, 1), Vec::Ones(1));
  post.col_eig = make_eig(Mat::Identity(1, 1), Vec::Ones(1));
  post.resc_grid = Mat::Constant(1, 1, 2.0);
  post.gamma_in = 0.5;
  post.scale = 1.25;  // variance = 1.25/2.5 = 0.5

  const double w = -0.3;
  const double var = 0.5;
  const double expected = -0.5 * (std::log(2.0 * M_PI * var) +
                                  (w - 0.4) * (w - 0.4) / var);
  CHECK(emvg_log_density(post, Mat::Constant(1, 1, w)) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("log density matches the dense Gaussian oracle") {
  Rng rng(78);
  for (int t = 0; t < 10; ++t) {
    EmvgPosterior post;
    post.mean = rng.normal_mat(3, 2);
    post.row_eig = make_eig(oracle::random_orthogonal(rng, 3), Vec::Ones(3));
    post.col_eig = make_eig(oracle::random_orthogonal(rng, 2), Vec::Ones(2));
    post.resc_grid =
        (rng.normal_mat(3, 2).array().square() + 0.5).matrix();
    post.gamma_in = 0.3;
    post.scale = 0.8;

    const Mat w = post.mean + 0.5 * rng.normal_mat(3, 2);
    const double dense = oracle::gaussian_log_density(
        oracle::vec_naive(w), oracle::vec_naive(post.mean),
        dense_cov_oracle(post));
    CHECK(std::abs(emvg_log_density(post, w) - dense) <= 1e-8);
  }
}

TEST_CASE("log density normalizes to one on a 1x1 layer") {
  EmvgPosterior post;
  post.mean = Mat::Constant(1, 1, 0.2);
  post.row_eig = make_eig(Mat::Identity(1, 1), Vec::Ones(1));
  post.col_eig = make_eig(Mat::Identity(1, 1), Vec::Ones(1));
  post.resc_grid = Mat::Constant(1, 1, 1.5);
  post.gamma_in = 0.1;
  post.scale = 0.9;

  const double sigma = std::sqrt(0.9 / 1.6);
  const int steps = 40000;
  const double lo = 0.2 - 8.0 * sigma, hi = 0.2 + 8.0 * sigma;
  const double h = (hi - lo) / steps;
  double integral = 0.0;
  for (int i = 0; i <= steps; ++i) {
    const double w = lo + h * static_cast<double>(i);
    const double f = std::exp(emvg_log_density(post, Mat::Constant(1, 1, w)));
    integral += (i == 0 || i == steps) ? 0.5 * f : f;
  }
  integral *= h;
  CHECK(std::abs(integral - 1.0) <= 1e-6);
}

TEST_CASE("log density rejects bad inputs") {
  EmvgPosterior post = designed_emvg();
  CHECK_THROWS(emvg_log_density(post, Mat::Zero(3, 2)));
  post.resc_grid(0, 0) = -1.0;  // variance goes negative
  CHECK_THROWS(emvg_log_density(post, post.mean));
}

TEST_CASE("KL to the prior vanishes when the posterior equals the prior") {
  const double eta = 0.7;

  FfgPosterior ffg;
  ffg.mean = Mat::Zero(2, 3);
  ffg.log_sigma = Mat::Constant(2, 3, 0.5 * std::log(eta));
  CHECK(std::abs(kl_to_spherical_prior(ffg, eta)) <= 1e-12);

  // MVG: A = S = I, no damping, scale = eta -> covariance = eta I.
  const MvgPosterior mvg = make_mvg(Mat::Zero(2, 3), Mat::Identity(2, 2),
                                    Mat::Identity(3, 3), 0.0, eta);
  CHECK(std::abs(kl_to_spherical_prior(mvg, eta)) <= 1e-10);

  EmvgPosterior emvg;
  emvg.mean = Mat::Zero(2, 3);
  emvg.row_eig = make_eig(Mat::Identity(2, 2), Vec::Ones(2));
  emvg.col_eig = make_eig(Mat::Identity(3, 3), Vec::Ones(3));
  emvg.resc_grid = Mat::Ones(2, 3);
  emvg.gamma_in = 0.0;
  emvg.scale = eta;  // variance = eta/(1+0) = eta
  CHECK(std::abs(kl_to_spherical_prior(emvg, eta)) <= 1e-12);
}

TEST_CASE("one-dimensional FFG KL hand value") {
  FfgPosterior post;
  post.mean = Mat::Constant(1, 1, 1.0);
  post.log_sigma = Mat::Zero(1, 1);  // sigma^2 = 1
  // KL(N(1,1) || N(0,1)) = mu^2/2 = 0.5.
  CHECK(kl_to_spherical_prior(post, 1.0) ==
        doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS(kl_to_spherical_prior(post, 0.0));
}

TEST_CASE("closed-form KL matches the dense oracle for every family") {
  Rng rng(79);
  const double eta = 1.3;

  for (int t = 0; t < 5; ++t) {
    FfgPosterior ffg;
    ffg.mean = rng.normal_mat(3, 2);
    ffg.log_sigma = 0.3 * rng.normal_mat(3, 2);
    CHECK(std::abs(kl_to_spherical_prior(ffg, eta) -
                   oracle::kl_to_prior(oracle::vec_naive(ffg.mean),
                                       dense_cov_oracle(ffg), eta)) <= 1e-8);

    const MvgPosterior mvg =
        make_mvg(rng.normal_mat(3, 2), oracle::random_spd(rng, 3, 0.4, 2.5),
                 oracle::random_spd(rng, 2, 0.4, 2.5), 0.2, 0.6);
    CHECK(std::abs(kl_to_spherical_prior(mvg, eta) -
                   oracle::kl_to_prior(oracle::vec_naive(mvg.mean),
                                       dense_cov_oracle(mvg), eta)) <= 1e-8);

    EmvgPosterior emvg;
    emvg.mean = rng.normal_mat(2, 3);
    emvg.row_eig = make_eig(oracle::random_orthogonal(rng, 2), Vec::Ones(2));
    emvg.col_eig = make_eig(oracle::random_orthogonal(rng, 3), Vec::Ones(3));
    emvg.resc_grid = (rng.normal_mat(2, 3).array().square() + 0.4).matrix();
    emvg.gamma_in = 0.15;
    emvg.scale = 0.9;
    CHECK(std::abs(kl_to_spherical_prior(emvg, eta) -
                   oracle::kl_to_prior(oracle::vec_naive(emvg.mean),
                                       dense_cov_oracle(emvg), eta)) <= 1e-8);
  }
}

TEST_CASE("closed-form KL agrees with a Monte-Carlo estimate") {
  const int n = 100000;
  const double eta = 0.8;
  Rng rng(80);

  const EmvgPosterior post = designed_emvg();
  const double closed = kl_to_spherical_prior(post, eta);

  // KL = E_q[log q(w) - log p(w)] over draws from q.
  std::vector<double> terms;
  terms.reserve(n);
  const double prior_const =
      -0.5 * 4.0 * (std::log(eta) + std::log(2.0 * M_PI));
  for (int i = 0; i < n; ++i) {
    const Mat w = sample_emvg(post, rng);
    const double log_q = emvg_log_density(post, w);
    const double log_p = prior_const - 0.5 * w.squaredNorm() / eta;
    terms.push_back(log_q - log_p);
  }
  double mean = 0.0;
  for (double v : terms) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : terms) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);
  const double se = std::sqrt(var / static_cast<double>(n));
  CHECK(std::abs(mean - closed) <= 3.0 * se + 1e-6);
}

TEST_CASE("KL is invariant under rotations of the eigenbases") {
  Rng rng(81);
  const double eta = 1.1;
  EmvgPosterior post = designed_emvg();
  const double before = kl_to_spherical_prior(post, eta);
  const double dense_before = oracle::kl_to_prior(
      oracle::vec_naive(post.mean), dense_cov_oracle(post), eta);

  post.row_eig.basis = oracle::random_orthogonal(rng, 2);
  post.col_eig.basis = oracle::random_orthogonal(rng, 2);
  const double after = kl_to_spherical_prior(post, eta);
  const double dense_after = oracle::kl_to_prior(
      oracle::vec_naive(post.mean), dense_cov_oracle(post), eta);

  CHECK(std::abs(after - before) <= 1e-12);
  CHECK(std::abs(before - dense_before) <= 1e-8);
  CHECK(std::abs(after - dense_after) <= 1e-8);
}

TEST_CASE("materialized covariances match the naive oracles and stay PSD") {
  Rng rng(82);

  const EmvgPosterior emvg = designed_emvg();
  CHECK(max_abs(materialize_covariance(emvg) - dense_cov_oracle(emvg)) <=
        1e-12);

  const MvgPosterior mvg = designed_mvg();
  CHECK(max_abs(materialize_covariance(mvg) - dense_cov_oracle(mvg)) <=
        1e-12);

  FfgPosterior ffg;
  ffg.mean = rng.normal_mat(2, 2);
  ffg.log_sigma = 0.2 * rng.normal_mat(2, 2);
  CHECK(max_abs(materialize_covariance(ffg) - dense_cov_oracle(ffg)) <=
        1e-14);

  for (const Mat& cov :
       {materialize_covariance(emvg), materialize_covariance(mvg)}) {
    Eigen::SelfAdjointEigenSolver<Mat> solver(cov);
    CHECK(solver.eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("identity-basis FFG covariance is diagonal") {
  FfgPosterior post;
  post.mean = Mat::Zero(1, 2);
  post.log_sigma = (Mat(1, 2) << std::log(2.0), std::log(3.0)).finished();
  const Mat cov = materialize_covariance(post);
  CHECK(cov(0, 0) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(cov(1, 1) == doctest::Approx(9.0).epsilon(1e-12));
  CHECK(cov(0, 1) == 0.0);
}

TEST_CASE("pinning the grid to Kronecker eigenvalues recovers the MVG covariance") {
  Rng rng(83);
  KronStats stats;
  stats.input_cov = oracle::random_spd(rng, 3, 0.4, 2.0);
  stats.output_cov = oracle::random_spd(rng, 2, 0.4, 2.0);
  stats.refresh_eig();

  RescalingDiag resc = RescalingDiag::ones(3, 2);
  resc.grid = kfac_eigen_rescaling(stats);
  resc.gamma_in = 0.0;

  const double scale = 0.35;
  const EmvgPosterior emvg =
      make_emvg(Mat::Zero(3, 2), stats, resc, scale);

  // Undamped MVG covariance: scale * (S (x) A)^-1.
  const Mat dense_kron =
      oracle::kron_naive(stats.output_cov, stats.input_cov);
  const Mat expected = scale * oracle::dense_inverse(dense_kron);
  CHECK(max_abs(materialize_covariance(emvg) - expected) <= 1e-10);
}

TEST_CASE("materialize refuses layers beyond the dense guard") {
  FfgPosterior big;
  big.mean = Mat::Zero(50, 50);  // 2500 parameters
  big.log_sigma = Mat::Zero(50, 50);
  CHECK_THROWS(materialize_covariance(big));

  EmvgPosterior emvg;
  emvg.mean = Mat::Zero(50, 50);
  emvg.row_eig = make_eig(Mat::Identity(50, 50), Vec::Ones(50));
  emvg.col_eig = make_eig(Mat::Identity(50, 50), Vec::Ones(50));
  emvg.resc_grid = Mat::Ones(50, 50);
  CHECK_THROWS(materialize_covariance(emvg));
}
