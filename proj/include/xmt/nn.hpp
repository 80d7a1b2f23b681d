#pragma once

// Dense network substrate: fully-connected layers, softmax cross-entropy,
// reverse-mode gradients and plain SGD with weight decay.
//
// All tensors are row-major with one sample per row.

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace xmt {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Activation { ReLU, Identity };

std::string_view to_string(Activation activation);
Activation parse_activation(std::string_view name);

/// A fully-connected layer computing activation(W x + b) for every row x.
///
/// Shapes are fixed at construction: weights are out_dim x in_dim and the
/// bias has out_dim entries. Every mutable accessor bumps the layer's
/// generation so caches taken before a parameter change are rejected by
/// backward().
class DenseLayer {
 public:
  DenseLayer(Matrix weights, Vector bias, Activation activation);

  Eigen::Index in_dim() const { return weights_.cols(); }
  Eigen::Index out_dim() const { return weights_.rows(); }
  Activation activation() const { return activation_; }

  const Matrix& weights() const { return weights_; }
  const Vector& bias() const { return bias_; }
  Matrix& mutable_weights() {
    ++generation_;
    return weights_;
  }
  Vector& mutable_bias() {
    ++generation_;
    return bias_;
  }

  std::uint64_t generation() const { return generation_; }

  bool operator==(const DenseLayer& other) const;

 private:
  Matrix weights_;
  Vector bias_;
  Activation activation_;
  std::uint64_t generation_ = 0;
};

/// Uniform fan-in/fan-out initialization, bound sqrt(6 / (in + out)), zero bias.
DenseLayer init_layer(int in_dim, int out_dim, Activation activation, std::mt19937_64& rng);

struct ForwardCache {
  Matrix input;
  Matrix pre;
  std::uint64_t generation = 0;
  Eigen::Index in_dim = 0;
  Eigen::Index out_dim = 0;
};

struct LayerOutput {
  Matrix output;
  ForwardCache cache;
};

LayerOutput forward(const DenseLayer& layer, const Matrix& input);

struct LayerGrads {
  Matrix weights;
  Vector bias;

  static LayerGrads zeros_like(const DenseLayer& layer);
  LayerGrads& operator+=(const LayerGrads& other);
};

struct BackwardResult {
  Matrix grad_input;
  LayerGrads grads;
};

BackwardResult backward(const DenseLayer& layer, const Matrix& grad_output, const ForwardCache& cache);

/// Row-wise softmax, max-subtracted.
Matrix softmax(const Matrix& logits);

struct SoftmaxLoss {
  double loss = 0.0;
  Matrix grad_logits;
};

/// Mean negative log-likelihood over the batch and its gradient
/// (softmax - onehot) / batch.
SoftmaxLoss softmax_cross_entropy(const Matrix& logits, std::span<const int> labels);

struct SgdConfig {
  double learning_rate = 0.01;
  double weight_decay = 0.0005;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SgdConfig&) const = default;
};

/// p <- p - lr * (grad + weight_decay * p) for every weight and bias.
void sgd_step(std::span<DenseLayer* const> layers, std::span<const LayerGrads> grads, const SgdConfig& cfg);

struct LayerActivation {
  Matrix pre;
  Matrix post;
};

/// Pre- and post-activations of one batch, keyed by layer name.
class ForwardTrace {
 public:
  void record(std::string name, LayerActivation activation);

  const LayerActivation& at(std::string_view name) const;
  const Matrix& post(std::string_view name) const { return at(name).post; }
  bool contains(std::string_view name) const;

  Eigen::Index batch_size() const { return batch_size_; }
  std::vector<std::string> layer_names() const;

 private:
  std::map<std::string, LayerActivation, std::less<>> layers_;
  Eigen::Index batch_size_ = -1;
};

}  // namespace xmt
