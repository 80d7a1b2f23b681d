#pragma once

// Progressive transfer: target pairs are scored by how well the source
// network retrieves them across media, turned into selection probabilities
// bounded by alpha, and the selected subset drives each joint-training
// iteration.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "xmt/data.hpp"
#include "xmt/losses.hpp"
#include "xmt/model.hpp"

namespace xmt {

enum class SelectionRule {
  Consistency,  // probability from the consistency score
  All,          // every target pair, every iteration
  Random,       // probability alpha for every pair
};

struct CurriculumConfig {
  double alpha = 0.2;
  int max_iterations = 10;
  int epochs_per_iteration = 1;
  std::uint64_t seed = 0;
  SelectionRule rule = SelectionRule::Consistency;

  void validate() const;
  bool operator==(const CurriculumConfig&) const = default;
};

struct ConsistencyScores {
  std::vector<double> ap_img;
  std::vector<double> ap_txt;
  std::vector<double> ap_sum;
  int iteration = 0;

  double max_ap() const;
};

/// Embeds every target pair through the source network and scores pair q by
/// AP(image q -> all texts) + AP(text q -> all images), relevance by target label.
ConsistencyScores score_consistency(const DomainNetwork& source_net, const CrossMediaDataset& tar_tr, int iteration);

/// alpha * (1 - log2((max_ap - ap_sum) / (max_ap * iteration) + 1)).
/// Returns alpha when max_ap is 0.
double selection_prob(double ap_sum, double max_ap, int iteration, double alpha);

struct SelectionRecord {
  std::vector<double> probability;
  std::vector<double> draws;
  std::vector<bool> selected;
  bool forced = false;

  std::size_t count() const;
  std::vector<std::size_t> indices() const;
};

/// Independent Bernoulli draw per pair. An empty draw force-selects the
/// first pair with the highest ap_sum.
SelectionRecord select_samples(const ConsistencyScores& scores, const CurriculumConfig& cfg, std::mt19937_64& rng);

struct TrainingSchedule {
  int pretrain_epochs = 100;
  int batch_size = 32;

  void validate() const;
  bool operator==(const TrainingSchedule&) const = default;
};

struct IterationRecord {
  int iteration = 0;  // 0 is pretraining
  std::size_t steps = 0;
  LossBreakdown mean_losses;
  std::size_t selected = 0;
  std::size_t candidates = 0;
  double ap_min = 0.0;
  double ap_median = 0.0;
  double ap_max = 0.0;
  std::size_t mmd_evaluations = 0;
};

struct TrainingLog {
  std::vector<IterationRecord> records;
  int pretrain_runs = 0;
  int scoring_runs = 0;
};

/// Pretrains both networks separately; returns the iteration-0 record.
IterationRecord pretrain_models(DcktModel& model, const CrossMediaDataset& src, const CrossMediaDataset& tar_tr,
                                const TrainingSchedule& schedule, const SgdConfig& sgd);

/// Pretraining followed by max_iterations rounds of score, select and joint
/// training for epochs_per_iteration source epochs. The selected target
/// subset is cycled, reshuffled per pass, to fill one target batch per
/// source batch. On an error the model is restored to its state at the start
/// of the failing iteration.
TrainingLog progressive_transfer(DcktModel& model, const CrossMediaDataset& src, const CrossMediaDataset& tar_tr,
                                 const CurriculumConfig& cfg, const TrainingSchedule& schedule, const SgdConfig& sgd);

/// Header line plus one tab-separated row per record. `preamble` lines are
/// written first, each prefixed with "# ".
std::string format_training_log(const TrainingLog& log, const std::vector<std::string>& preamble = {});

}  // namespace xmt
