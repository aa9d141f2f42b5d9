#include "nekfac/network.hpp"

#include <cmath>
#include <stdexcept>

namespace nekfac {

Mat LayerState::example_gradient(Index i) const {
  if (backward_pass == 0 || backward_pass != forward_pass) {
    throw std::runtime_error("example_gradient: stale layer caches");
  }
  return inputs.row(i).transpose() * preact_grads.row(i);
}

Network::Network(std::vector<Index> widths, Task task)
    : widths_(std::move(widths)), task_(task) {
  if (widths_.size() < 2) {
    throw std::invalid_argument("Network: need at least input and output widths");
  }
  for (Index w : widths_) {
    if (w < 1) throw std::invalid_argument("Network: widths must be positive");
  }
  layers_.resize(widths_.size() - 1);
  for (size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].weights = Mat::Zero(widths_[l] + 1, widths_[l + 1]);
  }
}

void Network::init_weights(Rng& rng) {
  for (auto& layer : layers_) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(layer.fan_in()));
    layer.weights.topRows(layer.fan_in()) =
        stddev * rng.normal_mat(layer.fan_in(), layer.fan_out());
    layer.weights.row(layer.fan_in()).setZero();
  }
}

namespace {

Mat append_ones(const Mat& x) {
  Mat out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()).setOnes();
  return out;
}

}  // namespace

const Mat& Network::forward(const Mat& x) {
  if (x.cols() != input_dim()) {
    throw std::invalid_argument("forward: expected " +
                                std::to_string(input_dim()) + " features, got " +
                                std::to_string(x.cols()));
  }
  ++pass_id_;
  last_batch_ = x.rows();

  Mat h = x;
  for (size_t l = 0; l < layers_.size(); ++l) {
    LayerState& layer = layers_[l];
    layer.inputs = append_ones(h);
    layer.preacts = layer.inputs * layer.weights;
    layer.forward_pass = pass_id_;
    if (l + 1 < layers_.size()) {
      h = layer.preacts.cwiseMax(0.0);  // ReLU on hidden layers
    }
  }
  return layers_.back().preacts;
}

std::vector<Mat> Network::backward(const Mat& output_grad) {
  LayerState& last = layers_.back();
  if (last.forward_pass != pass_id_ || pass_id_ == 0) {
    throw std::runtime_error("backward: forward pass required first");
  }
  if (output_grad.rows() != last_batch_ ||
      output_grad.cols() != output_dim()) {
    throw std::invalid_argument("backward: output gradient shape mismatch");
  }

  const double inv_batch = 1.0 / static_cast<double>(last_batch_);
  std::vector<Mat> mean_grads(layers_.size());

  Mat grad = output_grad;
  for (size_t l = layers_.size(); l-- > 0;) {
    LayerState& layer = layers_[l];
    layer.preact_grads = grad;
    layer.backward_pass = pass_id_;
    mean_grads[l] = inv_batch * layer.inputs.transpose() * grad;
    if (l > 0) {
      // Drop the bias column, then gate through the ReLU derivative.
      Mat upstream =
          (grad * layer.weights.transpose()).leftCols(layer.fan_in());
      const LayerState& prev = layers_[l - 1];
      grad = upstream.cwiseProduct(
          (prev.preacts.array() > 0.0).cast<double>().matrix());
    }
  }
  return mean_grads;
}

Index Network::parameter_count() const {
  Index count = 0;
  for (const auto& layer : layers_) count += layer.weights.size();
  return count;
}

Vec Network::get_parameters() const {
  Vec flat(parameter_count());
  Index offset = 0;
  for (const auto& layer : layers_) {
    flat.segment(offset, layer.weights.size()) = vec(layer.weights);
    offset += layer.weights.size();
  }
  return flat;
}

void Network::set_parameters(const Vec& flat) {
  if (flat.size() != parameter_count()) {
    throw std::invalid_argument("set_parameters: length mismatch");
  }
  Index offset = 0;
  for (auto& layer : layers_) {
    layer.weights = unvec(flat.segment(offset, layer.weights.size()),
                          layer.weights.rows(), layer.weights.cols());
    offset += layer.weights.size();
  }
}

}  // namespace nekfac
