#pragma once

#include "nekfac/matrix.hpp"
#include "nekfac/rng.hpp"

#include <cstdint>
#include <vector>

namespace nekfac {

enum class Task { kRegression, kClassification };

/// One dense layer with the bias folded into the weight matrix as an extra
/// input row (homogeneous coordinate). Forward/backward passes cache the
/// batch inputs and pre-activation gradients needed by the Fisher estimators;
/// pass counters guard against reading stale caches.
struct LayerState {
  Mat weights;  // (fan_in + 1) x fan_out, last row is the bias

  Mat inputs;        // batch x (fan_in + 1), inputs with appended 1
  Mat preacts;       // batch x fan_out
  Mat preact_grads;  // batch x fan_out, d(log p)/d(preacts) per example

  uint64_t forward_pass = 0;
  uint64_t backward_pass = 0;

  Index fan_in() const { return weights.rows() - 1; }
  Index fan_out() const { return weights.cols(); }

  // Per-example weight gradient: inputs.row(i)^T * preact_grads.row(i).
  Mat example_gradient(Index i) const;
};

/// Fully-connected network with ReLU hidden activations and a linear output
/// layer. Single writer: forward/backward mutate the layer caches.
class Network {
 public:
  // widths = {inputs, hidden..., outputs}
  Network(std::vector<Index> widths, Task task);

  Task task() const { return task_; }
  Index input_dim() const { return widths_.front(); }
  Index output_dim() const { return widths_.back(); }
  size_t layer_count() const { return layers_.size(); }

  LayerState& layer(size_t l) { return layers_[l]; }
  const LayerState& layer(size_t l) const { return layers_[l]; }

  // He-scaled Gaussian weights, zero bias row.
  void init_weights(Rng& rng);

  // Runs the batch through the network, caching per-layer inputs and
  // pre-activations. Returns the output pre-activations (predictions for
  // regression, logits for classification).
  const Mat& forward(const Mat& x);

  // output_grad holds d(per-example log-lik)/d(output preacts), one row per
  // example. Returns the batch-mean weight gradient per layer and caches the
  // per-example pre-activation gradients. Must follow forward on the same
  // batch.
  std::vector<Mat> backward(const Mat& output_grad);

  uint64_t pass_id() const { return pass_id_; }
  Index last_batch_size() const { return last_batch_; }

  // Flat parameter access (vec of each layer's weights, layers in order).
  Index parameter_count() const;
  Vec get_parameters() const;
  void set_parameters(const Vec& flat);

 private:
  std::vector<Index> widths_;
  Task task_;
  std::vector<LayerState> layers_;
  uint64_t pass_id_ = 0;
  Index last_batch_ = 0;
};

}  // namespace nekfac
