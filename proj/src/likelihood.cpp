#include "nekfac/likelihood.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace nekfac {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
}

void update_noise_precision(GaussianNoiseModel& noise, const Vec& residuals) {
  if (residuals.size() == 0) {
    throw std::invalid_argument("update_noise_precision: empty residuals");
  }
  noise.shape = noise.prior_shape + 0.5 * static_cast<double>(residuals.size());
  noise.rate = noise.prior_rate + 0.5 * residuals.squaredNorm();
}

Vec regression_log_likelihood(const Mat& preds, const Vec& targets,
                              double precision) {
  if (preds.cols() != 1 || preds.rows() != targets.size()) {
    throw std::invalid_argument("regression_log_likelihood: shape mismatch");
  }
  const Vec resid = targets - preds.col(0);
  return (0.5 * (std::log(precision) - kLog2Pi) -
          0.5 * precision * resid.array().square())
      .matrix();
}

Mat regression_output_grad(const Mat& preds, const Vec& targets,
                           double precision) {
  if (preds.cols() != 1 || preds.rows() != targets.size()) {
    throw std::invalid_argument("regression_output_grad: shape mismatch");
  }
  return precision * (targets - preds.col(0));
}

namespace {

// Row-wise log-sum-exp of logits.
Vec row_logsumexp(const Mat& logits) {
  const Vec row_max = logits.rowwise().maxCoeff();
  return row_max.array() +
         (logits.colwise() - row_max).array().exp().rowwise().sum().log();
}

void check_labels(const Mat& logits, const std::vector<int>& labels) {
  if (static_cast<Index>(labels.size()) != logits.rows()) {
    throw std::invalid_argument("classification: label count mismatch");
  }
  for (int y : labels) {
    if (y < 0 || y >= logits.cols()) {
      throw std::invalid_argument("classification: label " +
                                  std::to_string(y) + " out of range");
    }
  }
}

}  // namespace

Vec classification_log_likelihood(const Mat& logits,
                                  const std::vector<int>& labels) {
  check_labels(logits, labels);
  const Vec lse = row_logsumexp(logits);
  Vec out(logits.rows());
  for (Index i = 0; i < logits.rows(); ++i) {
    out[i] = logits(i, labels[static_cast<size_t>(i)]) - lse[i];
  }
  return out;
}

Mat classification_output_grad(const Mat& logits,
                               const std::vector<int>& labels) {
  check_labels(logits, labels);
  const Vec lse = row_logsumexp(logits);
  Mat grad = (-((logits.colwise() - lse).array().exp())).matrix();
  for (Index i = 0; i < logits.rows(); ++i) {
    grad(i, labels[static_cast<size_t>(i)]) += 1.0;
  }
  return grad;
}

Vec BatchTargets::log_likelihood(const Mat& preds) const {
  return task == Task::kRegression
             ? regression_log_likelihood(preds, values, precision)
             : classification_log_likelihood(preds, labels);
}

Mat BatchTargets::output_grad(const Mat& preds) const {
  return task == Task::kRegression
             ? regression_output_grad(preds, values, precision)
             : classification_output_grad(preds, labels);
}

BatchTargets BatchTargets::sample_from_model(const Mat& preds,
                                             Rng& rng) const {
  BatchTargets out;
  out.task = task;
  out.precision = precision;
  if (task == Task::kRegression) {
    const double sigma = 1.0 / std::sqrt(precision);
    out.values.resize(preds.rows());
    for (Index i = 0; i < preds.rows(); ++i) {
      out.values[i] = preds(i, 0) + sigma * rng.normal();
    }
  } else {
    const Vec lse = row_logsumexp(preds);
    out.labels.resize(static_cast<size_t>(preds.rows()));
    for (Index i = 0; i < preds.rows(); ++i) {
      const double u = rng.uniform();
      double cum = 0.0;
      int pick = static_cast<int>(preds.cols()) - 1;
      for (Index c = 0; c < preds.cols(); ++c) {
        cum += std::exp(preds(i, c) - lse[i]);
        if (u < cum) {
          pick = static_cast<int>(c);
          break;
        }
      }
      out.labels[static_cast<size_t>(i)] = pick;
    }
  }
  return out;
}

BatchTargets BatchTargets::subset(const std::vector<Index>& idx) const {
  BatchTargets out;
  out.task = task;
  out.precision = precision;
  if (task == Task::kRegression) {
    out.values.resize(static_cast<Index>(idx.size()));
    for (size_t i = 0; i < idx.size(); ++i) out.values[static_cast<Index>(i)] = values[idx[i]];
  } else {
    out.labels.reserve(idx.size());
    for (Index j : idx) out.labels.push_back(labels[static_cast<size_t>(j)]);
  }
  return out;
}

}  // namespace nekfac
