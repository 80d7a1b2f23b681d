#pragma once

// Experiment configuration and the end-to-end pipelines behind the CLI.
//
// Config files are flat `key = value` lines with `#` comments. One master
// `seed` drives data generation, splitting, initialization, batching and
// selection through derived streams.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xmt/checkpoint.hpp"
#include "xmt/curriculum.hpp"
#include "xmt/data.hpp"
#include "xmt/losses.hpp"
#include "xmt/retrieval.hpp"

namespace xmt {

enum class Mode { Full, PretrainOnly, MediaOnly, CorrOnly, AllData, RandomSelect, NoOverlap };

inline constexpr std::array<Mode, 7> kAllModes = {Mode::Full,     Mode::PretrainOnly, Mode::MediaOnly,
                                                  Mode::CorrOnly, Mode::AllData,      Mode::RandomSelect,
                                                  Mode::NoOverlap};

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view name);

struct FileSources {
  std::filesystem::path source;
  std::filesystem::path target_train;
  std::filesystem::path target_test;
  // Source classes shared with the target label space; dropped by NoOverlap.
  std::vector<int> source_overlap_classes;

  bool operator==(const FileSources&) const = default;
};

struct ExperimentConfig {
  // Exactly one of these is set.
  std::optional<SyntheticSpec> synthetic;
  std::optional<FileSources> files;

  SplitFractions target_split{0.3, 0.5, 0.2};
  CurriculumConfig curriculum;
  LossWeights weights;
  MmdConfig mmd;
  SgdConfig sgd;
  int hidden = 128;
  TrainingSchedule schedule;
  Mode mode = Mode::Full;
  std::uint64_t seed = 0;

  void validate() const;
  /// Pushes the master seed into every derived seed field.
  void set_seed(std::uint64_t s);

  bool operator==(const ExperimentConfig&) const = default;
};

/// `name` prefixes error messages. Relative dataset paths are kept as written.
ExperimentConfig parse_config(std::string_view text, std::string_view name = "<config>");
/// Relative dataset paths are resolved against the config file's directory.
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every resolved key, one per line; parse_config(format_config(c)) == c.
std::string format_config(const ExperimentConfig& config);

struct GeneratedData {
  CrossMediaDataset source;
  DatasetSplit target;
  std::vector<int> overlap_source_classes;
};

/// Synthetic domains plus the seeded target split. Requires a synthetic config.
GeneratedData generate_data(const ExperimentConfig& config);

struct PreparedData {
  CrossMediaDataset source;        // normalized with source stats
  CrossMediaDataset target_train;  // normalized with target-train stats
  CrossMediaDataset target_test;   // normalized with target-train stats
  CrossMediaDataset raw_target_test;
  FeatureStats source_stats;
  FeatureStats target_stats;
  std::vector<int> overlap_source_classes;
};

PreparedData prepare_data(const ExperimentConfig& config);

struct ExperimentResult {
  TrainingLog log;
  RetrievalReport report;
  Checkpoint checkpoint;
};

/// Runs the mode's pipeline on already prepared data and evaluates the
/// target network on the target test split.
ExperimentResult run_experiment(const ExperimentConfig& config, const PreparedData& data);
ExperimentResult run_experiment(const ExperimentConfig& config);

/// mode=Full once per alpha with the same base seed. Returns (alpha, average MAP).
std::vector<std::pair<double, double>> sweep_alpha(const ExperimentConfig& config, const std::vector<double>& alphas);
std::string format_sweep(const std::vector<std::pair<double, double>>& rows);

/// Writes every file to a temporary name inside `dir`, then renames them all
/// into place. Temporaries are removed if any write fails.
void write_artifacts(const std::filesystem::path& dir, const std::map<std::string, std::string>& files);

}  // namespace xmt
