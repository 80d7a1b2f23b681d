#pragma once

// Line-based model checkpoint: layer shapes, every parameter in row-major
// order at 17 significant digits, loss weights, MMD settings, the seed and
// the feature normalization of each domain. A trailing FNV-1a checksum
// rejects truncated or edited files.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "xmt/data.hpp"
#include "xmt/model.hpp"

namespace xmt {

struct Checkpoint {
  DcktModel model;
  std::uint64_t seed = 0;
  std::optional<FeatureStats> source_stats;
  std::optional<FeatureStats> target_stats;
};

std::string format_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::string_view text);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace xmt
