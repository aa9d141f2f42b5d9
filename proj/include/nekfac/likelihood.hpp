#pragma once

#include "nekfac/matrix.hpp"
#include "nekfac/network.hpp"
#include "nekfac/rng.hpp"

#include <vector>

namespace nekfac {

/// Gamma prior/posterior over the Gaussian likelihood precision. The
/// posterior is refreshed from training residuals with a conjugate moment
/// update; E[precision] = shape/rate is plugged into the likelihood.
struct GaussianNoiseModel {
  double prior_shape = 6.0;  // a0
  double prior_rate = 6.0;   // b0
  double shape = 6.0;        // alpha_gamma
  double rate = 6.0;         // beta_gamma

  double mean_precision() const { return shape / rate; }
};

// alpha <- a0 + N/2, beta <- b0 + sum(r^2)/2. Throws on empty residuals.
void update_noise_precision(GaussianNoiseModel& noise, const Vec& residuals);

// Per-example Gaussian log-density of targets given single-column predictions.
Vec regression_log_likelihood(const Mat& preds, const Vec& targets,
                              double precision);

// d(log p)/d(prediction) per example, as a batch x 1 matrix.
Mat regression_output_grad(const Mat& preds, const Vec& targets,
                           double precision);

// Per-example log-softmax of the label entry. Throws on out-of-range labels.
Vec classification_log_likelihood(const Mat& logits,
                                  const std::vector<int>& labels);

// d(log p)/d(logits) = onehot(label) - softmax(logits), per example.
Mat classification_output_grad(const Mat& logits,
                               const std::vector<int>& labels);

/// Targets plus likelihood parameters for one batch; dispatches on task so
/// optimizers and the Fisher oracle stay task-agnostic.
struct BatchTargets {
  Task task = Task::kRegression;
  Vec values;               // regression targets
  std::vector<int> labels;  // classification labels
  double precision = 1.0;   // E[gamma] for the Gaussian likelihood

  Index size() const {
    return task == Task::kRegression ? values.size()
                                     : static_cast<Index>(labels.size());
  }

  Vec log_likelihood(const Mat& preds) const;
  Mat output_grad(const Mat& preds) const;

  // Targets drawn from the model's predictive distribution at the given
  // predictions (one draw per example). Used by the model-sampled Fisher.
  BatchTargets sample_from_model(const Mat& preds, Rng& rng) const;

  BatchTargets subset(const std::vector<Index>& idx) const;
};

}  // namespace nekfac
