#include "xmt/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xmt {
namespace {

std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

std::string_view to_string(Activation activation) {
  return activation == Activation::ReLU ? "relu" : "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::ReLU;
  if (name == "identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

DenseLayer::DenseLayer(Matrix weights, Vector bias, Activation activation)
    : weights_(std::move(weights)), bias_(std::move(bias)), activation_(activation) {
  if (weights_.rows() < 1 || weights_.cols() < 1) {
    throw std::invalid_argument("dense layer needs positive dimensions, got " +
                                shape_str(weights_.rows(), weights_.cols()));
  }
  if (bias_.size() != weights_.rows()) {
    throw std::invalid_argument("bias length " + std::to_string(bias_.size()) +
                                " does not match " + std::to_string(weights_.rows()) + " outputs");
  }
  if (!all_finite(weights_) || !bias_.allFinite()) {
    throw std::invalid_argument("dense layer parameters must be finite");
  }
}

bool DenseLayer::operator==(const DenseLayer& other) const {
  return activation_ == other.activation_ && weights_.rows() == other.weights_.rows() &&
         weights_.cols() == other.weights_.cols() && weights_ == other.weights_ &&
         bias_ == other.bias_;
}

DenseLayer init_layer(int in_dim, int out_dim, Activation activation, std::mt19937_64& rng) {
  if (in_dim < 1 || out_dim < 1) {
    throw std::invalid_argument("init_layer: dimensions must be >= 1, got in=" +
                                std::to_string(in_dim) + " out=" + std::to_string(out_dim));
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(out_dim, in_dim);
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
  return DenseLayer(std::move(w), Vector::Zero(out_dim), activation);
}

LayerOutput forward(const DenseLayer& layer, const Matrix& input) {
  if (input.cols() != layer.in_dim()) {
    throw std::invalid_argument("forward: input has " + std::to_string(input.cols()) +
                                " columns, layer expects " + std::to_string(layer.in_dim()));
  }
  LayerOutput out;
  Matrix pre = input * layer.weights().transpose();
  pre.rowwise() += layer.bias().transpose();
  out.output = layer.activation() == Activation::ReLU ? Matrix(pre.cwiseMax(0.0)) : pre;
  out.cache.input = input;
  out.cache.pre = std::move(pre);
  out.cache.generation = layer.generation();
  out.cache.in_dim = layer.in_dim();
  out.cache.out_dim = layer.out_dim();
  return out;
}

LayerGrads LayerGrads::zeros_like(const DenseLayer& layer) {
  return {Matrix::Zero(layer.out_dim(), layer.in_dim()), Vector::Zero(layer.out_dim())};
}

LayerGrads& LayerGrads::operator+=(const LayerGrads& other) {
  if (weights.rows() != other.weights.rows() || weights.cols() != other.weights.cols() ||
      bias.size() != other.bias.size()) {
    throw std::invalid_argument("LayerGrads: shape mismatch in accumulation");
  }
  weights += other.weights;
  bias += other.bias;
  return *this;
}

BackwardResult backward(const DenseLayer& layer, const Matrix& grad_output, const ForwardCache& cache) {
  if (cache.in_dim != layer.in_dim() || cache.out_dim != layer.out_dim() ||
      cache.generation != layer.generation()) {
    throw std::invalid_argument("backward: cache does not belong to this layer state");
  }
  if (grad_output.rows() != cache.pre.rows() || grad_output.cols() != layer.out_dim()) {
    throw std::invalid_argument("backward: grad_output is " +
                                shape_str(grad_output.rows(), grad_output.cols()) + ", expected " +
                                shape_str(cache.pre.rows(), layer.out_dim()));
  }
  Matrix delta = grad_output;
  if (layer.activation() == Activation::ReLU) {
    delta = (cache.pre.array() > 0.0).select(grad_output, 0.0);
  }
  BackwardResult result;
  result.grad_input = delta * layer.weights();
  result.grads.weights = delta.transpose() * cache.input;
  result.grads.bias = delta.colwise().sum().transpose();
  return result;
}

Matrix softmax(const Matrix& logits) {
  Matrix probs(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double max = logits.row(r).maxCoeff();
    auto e = (logits.row(r).array() - max).exp();
    probs.row(r) = e / e.sum();
  }
  return probs;
}

SoftmaxLoss softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows() || logits.rows() == 0) {
    throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(logits.rows()) + " rows");
  }
  const auto classes = logits.cols();
  for (int label : labels) {
    if (label < 0 || label >= classes) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                  " outside [0, " + std::to_string(classes) + ")");
    }
  }
  const double n = static_cast<double>(logits.rows());
  SoftmaxLoss out;
  out.grad_logits = softmax(logits);
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    total -= std::log(std::max(out.grad_logits(r, y), 1e-12));
    out.grad_logits(r, y) -= 1.0;
  }
  out.grad_logits /= n;
  out.loss = total / n;
  return out;
}

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be > 0");
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw std::invalid_argument("weight_decay must be >= 0");
  }
}

void sgd_step(std::span<DenseLayer* const> layers, std::span<const LayerGrads> grads, const SgdConfig& cfg) {
  cfg.validate();
  if (layers.size() != grads.size()) {
    throw std::invalid_argument("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(layers.size()) + " layers");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& g = grads[i];
    if (g.weights.rows() != layers[i]->out_dim() || g.weights.cols() != layers[i]->in_dim() ||
        g.bias.size() != layers[i]->out_dim()) {
      throw std::invalid_argument("sgd_step: gradient shape mismatch at layer " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    DenseLayer& layer = *layers[i];
    const auto& g = grads[i];
    Matrix& w = layer.mutable_weights();
    w -= cfg.learning_rate * (g.weights + cfg.weight_decay * w);
    Vector& b = layer.mutable_bias();
    b -= cfg.learning_rate * (g.bias + cfg.weight_decay * b);
  }
}

void ForwardTrace::record(std::string name, LayerActivation activation) {
  if (activation.pre.rows() != activation.post.rows() || activation.pre.cols() != activation.post.cols()) {
    throw std::invalid_argument("ForwardTrace: pre/post shape mismatch for " + name);
  }
  if (batch_size_ >= 0 && activation.post.rows() != batch_size_) {
    throw std::invalid_argument("ForwardTrace: layer " + name + " has batch " +
                                std::to_string(activation.post.rows()) + ", trace has " +
                                std::to_string(batch_size_));
  }
  batch_size_ = activation.post.rows();
  layers_.insert_or_assign(std::move(name), std::move(activation));
}

const LayerActivation& ForwardTrace::at(std::string_view name) const {
  auto it = layers_.find(name);
  if (it == layers_.end()) {
    throw std::out_of_range("ForwardTrace: no layer named '" + std::string(name) + "'");
  }
  return it->second;
}

bool ForwardTrace::contains(std::string_view name) const { return layers_.find(name) != layers_.end(); }

std::vector<std::string> ForwardTrace::layer_names() const {
  std::vector<std::string> names;
  for (const auto& [name, _] : layers_) names.push_back(name);
  return names;
}

}  // namespace xmt
