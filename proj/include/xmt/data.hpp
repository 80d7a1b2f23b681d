#pragma once

// Cross-media datasets: the TSV file format, stratified splits, z-score
// normalization and the latent-prototype synthetic generator.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmt/nn.hpp"

namespace xmt {

/// One co-occurring image/text pair and its class.
struct CrossMediaPair {
  std::string id;
  Vector image;
  Vector text;
  int label = 0;

  bool operator==(const CrossMediaPair& other) const;
};

struct CrossMediaDataset {
  std::vector<CrossMediaPair> pairs;
  int num_classes = 0;
  std::vector<std::string> class_names;
  int image_dim = 0;
  int text_dim = 0;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }

  /// Checks dims, labels, ids and class names. Empty datasets pass only
  /// when allow_empty is set.
  void validate(bool allow_empty = false) const;

  std::vector<int> labels() const;
  std::vector<std::size_t> class_counts() const;

  /// An empty dataset sharing this one's schema.
  CrossMediaDataset empty_like() const;

  bool operator==(const CrossMediaDataset& other) const;
};

std::vector<std::string> default_class_names(int num_classes);

/// TSV format:
///   #dims<TAB>d_i<TAB>d_t<TAB>num_classes
///   id<TAB>label<TAB>v1,...,v_di<TAB>w1,...,w_dt
/// Values are written with 17 significant digits.
CrossMediaDataset parse_dataset(std::istream& in, std::string_view source_name = "<stream>");
CrossMediaDataset load_dataset(const std::filesystem::path& path);
std::string format_dataset(const CrossMediaDataset& dataset);
void save_dataset(const CrossMediaDataset& dataset, const std::filesystem::path& path);

struct SplitFractions {
  double train = 1.0;
  double test = 0.0;
  double validation = 0.0;

  void validate() const;
  bool operator==(const SplitFractions&) const = default;
};

struct DatasetSplit {
  CrossMediaDataset train;
  CrossMediaDataset test;
  CrossMediaDataset validation;
};

/// Stratified, disjoint, exhaustive split. Every nonzero part receives at
/// least one member of every populated class.
DatasetSplit split(const CrossMediaDataset& dataset, const SplitFractions& fractions, std::uint64_t seed);

/// Keeps the pairs whose label is not listed. The class space is unchanged.
CrossMediaDataset drop_classes(const CrossMediaDataset& dataset, std::span<const int> classes);

struct FeatureStats {
  Vector image_mean;
  Vector image_std;
  Vector text_mean;
  Vector text_std;

  bool operator==(const FeatureStats& other) const;
};

struct Normalized {
  CrossMediaDataset dataset;
  FeatureStats stats;
};

/// Per-dimension z-score. Without stats they are computed from the input
/// (population std, zero std clamped to 1) and returned.
Normalized normalize(const CrossMediaDataset& dataset, const std::optional<FeatureStats>& stats = std::nullopt);

struct SyntheticSpec {
  int num_src_classes = 10;
  int num_tgt_classes = 4;
  int overlap_classes = 2;
  int pairs_per_class = 50;
  int image_dim = 64;
  int text_dim = 32;
  int latent_dim = 16;
  double cluster_separation = 4.0;
  double domain_shift = 1.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SyntheticSpec&) const = default;
};

struct SyntheticDomains {
  CrossMediaDataset source;
  CrossMediaDataset target;
  // Source class index of target class c, for c < overlap_classes.
  std::vector<int> overlap_source_classes;
};

/// Every class owns a latent prototype; paired items are noisy images of it
/// under per-media linear maps shared by both domains:
///   image = A_i * prototype + shift * offset + noise   (offset only in target)
///   text  = A_t * prototype + noise
/// The first overlap_classes target classes reuse source prototypes 0..k-1.
SyntheticDomains generate_synthetic(const SyntheticSpec& spec);

/// Gathers rows of a dataset into aligned image/text/label matrices.
struct PairedBatch {
  Matrix image;
  Matrix text;
  std::vector<int> labels;

  Eigen::Index size() const { return image.rows(); }
};

PairedBatch make_batch(const CrossMediaDataset& dataset, std::span<const std::size_t> indices);
PairedBatch make_batch(const CrossMediaDataset& dataset);

}  // namespace xmt
