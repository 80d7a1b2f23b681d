#pragma once

// The two-domain transfer network. Each domain has an image pathway
// (fc6, fc7) and a text pathway (fc6, fc7) feeding shared layers fc8, fc9
// and a per-domain classifier fc10 whose softmax output is the common
// representation used for retrieval.

#include <array>
#include <cstdint>
#include <random>
#include <string_view>

#include "xmt/data.hpp"
#include "xmt/losses.hpp"
#include "xmt/nn.hpp"

namespace xmt {

enum class Media { Image, Text };
enum class Domain { Source, Target };

std::string_view to_string(Media media);
std::string_view to_string(Domain domain);

struct NetworkShape {
  int image_dim = 0;
  int text_dim = 0;
  int hidden = 128;
  int num_classes = 0;

  bool operator==(const NetworkShape&) const = default;
};

inline constexpr std::size_t kNetworkLayers = 7;

struct DomainNetwork {
  DenseLayer img_fc6;
  DenseLayer img_fc7;
  DenseLayer txt_fc6;
  DenseLayer txt_fc7;
  DenseLayer shared_fc8;
  DenseLayer shared_fc9;
  DenseLayer classifier_fc10;

  /// Layers in the fixed order used by gradients and checkpoints.
  std::array<DenseLayer*, kNetworkLayers> layers();
  std::array<const DenseLayer*, kNetworkLayers> layers() const;

  int num_classes() const { return static_cast<int>(classifier_fc10.out_dim()); }
  NetworkShape shape() const;
  void validate() const;

  bool operator==(const DomainNetwork& other) const;
};

inline constexpr std::array<std::string_view, kNetworkLayers> kNetworkLayerNames = {
    "img_fc6", "img_fc7", "txt_fc6", "txt_fc7", "shared_fc8", "shared_fc9", "classifier_fc10"};

DomainNetwork make_domain_network(const NetworkShape& shape, std::mt19937_64& rng);

struct DcktModel {
  DomainNetwork source;
  DomainNetwork target;
  LossWeights weights;
  MmdConfig mmd;

  void validate() const;
};

DcktModel make_model(const NetworkShape& source_shape, const NetworkShape& target_shape, const LossWeights& weights,
                     const MmdConfig& mmd, std::uint64_t seed);

/// Forward pass of one media pathway plus the shared layers. The trace holds
/// fc6..fc10 and "softmax" (pre = logits, post = probabilities).
ForwardTrace forward_item(const DomainNetwork& net, Media media, const Matrix& features);
ForwardTrace forward_item(const DomainNetwork& net, Media media, const Vector& feature);

/// Class-probability vector of one item.
Vector embed(const DomainNetwork& net, Media media, const Vector& feature);
/// One probability row per input row.
Matrix embed_batch(const DomainNetwork& net, Media media, const Matrix& features);

struct DomainGrads {
  std::array<LayerGrads, kNetworkLayers> layers;

  static DomainGrads zeros_like(const DomainNetwork& net);
};

struct JointGradients {
  LossBreakdown losses;
  DomainGrads source;
  DomainGrads target;
  std::size_t mmd_evaluations = 0;
};

/// All seven losses and their gradients for one source and one target batch.
/// Terms whose weight is zero are not evaluated and reported as 0.
JointGradients compute_joint_gradients(const DcktModel& model, const PairedBatch& src, const PairedBatch& tgt);

/// compute_joint_gradients followed by one SGD update of both networks.
/// Returns the pre-update breakdown. Validates before touching parameters.
LossBreakdown joint_step(DcktModel& model, const PairedBatch& src, const PairedBatch& tgt, const SgdConfig& sgd);

struct DomainLossWeights {
  double semantic = 1.0;
  double pairwise = 0.1;
};

DomainLossWeights domain_weights(const LossWeights& weights, Domain domain);

struct DomainStepResult {
  double semantic = 0.0;
  double pairwise = 0.0;
  DomainGrads grads;
};

/// Semantic and pairwise losses of one domain with their gradients.
DomainStepResult compute_domain_gradients(const DomainNetwork& net, const PairedBatch& batch,
                                          const DomainLossWeights& weights);

/// One pretraining update: semantic + pairwise losses, no MMD.
DomainStepResult domain_step(DomainNetwork& net, const PairedBatch& batch, const DomainLossWeights& weights,
                             const SgdConfig& sgd);

struct PretrainSummary {
  double mean_semantic = 0.0;
  double mean_pairwise = 0.0;
  std::size_t steps = 0;
};

/// Trains one domain alone for `epochs` shuffled passes (MMD terms absent).
/// Mini-batches are drawn with a generator seeded from sgd.seed.
PretrainSummary pretrain_domain(DomainNetwork& net, const CrossMediaDataset& data, Domain domain, int epochs,
                                int batch_size, const LossWeights& weights, const SgdConfig& sgd);

/// Batch index lists of one shuffled epoch: floor(n / batch) full batches,
/// or a single batch of everything when n < batch.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size, std::mt19937_64& rng);

/// Deterministic seed derivation for independent streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace xmt
