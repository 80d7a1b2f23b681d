#pragma once

// Coupling losses between the two domain networks: multi-kernel squared MMD,
// the layer-wise media- and correlation-level MMD terms, the pairwise
// image/text constraint and the weighted total objective.

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmt/nn.hpp"

namespace xmt {

inline const std::array<std::string, 2> kMediaLayers = {"fc6", "fc7"};
inline const std::array<std::string, 2> kSharedLayers = {"fc8", "fc9"};

enum class BandwidthRule { MedianHeuristic, Fixed };

/// Gaussian kernel ladder. Bandwidths are base * factor^(j - (K-1)/2) for
/// j = 0..K-1, so the default (K=5, factor 2) gives {s/4, s/2, s, 2s, 4s}.
struct MmdConfig {
  int num_kernels = 5;
  double ladder_factor = 2.0;
  BandwidthRule bandwidth_rule = BandwidthRule::MedianHeuristic;
  double fixed_bandwidth = 1.0;

  void validate() const;
  std::vector<double> bandwidths(double base) const;

  bool operator==(const MmdConfig&) const = default;
};

double gaussian_kernel(std::span<const double> x, std::span<const double> y, double bandwidth);

/// Median Euclidean distance over all distinct pairs of the pooled rows of x
/// and y. Returns 1 when every pooled row coincides.
double median_pairwise_distance(const Matrix& x, const Matrix& y);

struct MmdResult {
  double value = 0.0;
  Matrix grad_x;
  Matrix grad_y;
};

/// Biased (V-statistic) squared MMD averaged over the kernel ladder, with its
/// exact gradient. The median bandwidth is a constant w.r.t. the gradient.
/// Symmetric in its arguments bit-for-bit.
MmdResult mmd_sq(const Matrix& x, const Matrix& y, const MmdConfig& cfg);

/// Permutation two-sample test on the mmd_sq statistic. The bandwidth is
/// fixed from the pooled sample, which is permutation invariant.
/// Returns (1 + #{perm >= observed}) / (1 + permutations).
double mmd_permutation_pvalue(const Matrix& x, const Matrix& y, const MmdConfig& cfg, int permutations,
                              std::uint64_t seed);

/// Gradients w.r.t. layer post-activations, keyed by layer name.
using ActivationGrads = std::map<std::string, Matrix, std::less<>>;

struct LossTerm {
  double value = 0.0;
  // One entry per input trace, in argument order.
  std::vector<ActivationGrads> grads;
};

/// Sum over `layers` of mmd_sq between same-named activations of two traces.
LossTerm mmd_media_loss(const ForwardTrace& src, const ForwardTrace& tgt, std::span<const std::string> layers,
                        const MmdConfig& cfg);

/// Same over shared layers, with image and text rows pooled inside each
/// domain. grads are ordered (src_img, src_txt, tgt_img, tgt_txt).
LossTerm mmd_corr_loss(const ForwardTrace& src_img, const ForwardTrace& src_txt, const ForwardTrace& tgt_img,
                       const ForwardTrace& tgt_txt, std::span<const std::string> layers, const MmdConfig& cfg);

/// Sum over layers and pairs of squared image/text distance, divided by batch size.
LossTerm pairwise_loss(const ForwardTrace& img, const ForwardTrace& txt, std::span<const std::string> layers);

struct LossWeights {
  double w_mmd_image = 0.3;
  double w_mmd_text = 0.3;
  double w_mmd_corr = 0.3;
  double w_pair_src = 0.1;
  double w_pair_tgt = 0.1;
  double w_sem_src = 1.0;
  double w_sem_tgt = 1.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct LossBreakdown {
  double mmd_image = 0.0;
  double mmd_text = 0.0;
  double mmd_corr = 0.0;
  double pair_src = 0.0;
  double pair_tgt = 0.0;
  double sem_src = 0.0;
  double sem_tgt = 0.0;
  double total = 0.0;

  bool operator==(const LossBreakdown&) const = default;
};

struct LossField {
  std::string_view name;
  double LossBreakdown::*term;
  double LossWeights::*weight;
};

inline constexpr std::array<LossField, 7> kLossFields = {{
    {"mmd_image", &LossBreakdown::mmd_image, &LossWeights::w_mmd_image},
    {"mmd_text", &LossBreakdown::mmd_text, &LossWeights::w_mmd_text},
    {"mmd_corr", &LossBreakdown::mmd_corr, &LossWeights::w_mmd_corr},
    {"pair_src", &LossBreakdown::pair_src, &LossWeights::w_pair_src},
    {"pair_tgt", &LossBreakdown::pair_tgt, &LossWeights::w_pair_tgt},
    {"sem_src", &LossBreakdown::sem_src, &LossWeights::w_sem_src},
    {"sem_tgt", &LossBreakdown::sem_tgt, &LossWeights::w_sem_tgt},
}};

/// Copies the seven unweighted terms and sets total = sum(w_i * term_i).
/// Throws naming the first non-finite term.
LossBreakdown combine(const LossBreakdown& terms, const LossWeights& weights);

}  // namespace xmt
