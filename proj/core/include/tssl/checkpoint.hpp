#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "tssl/config.hpp"
#include "tssl/model.hpp"
#include "tssl/optimizer.hpp"

namespace tssl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout (little-endian):
///   "TSSLCKPT" | u32 version | u64 blob length | JSON blob
///   | u32 record count | records
/// record: u32 name length | name | u32 rank | u64 dims[rank] | f64 payload
/// Optimizer momentum buffers are stored as records named "optim.momentum.<param>".
struct Checkpoint {
  ExperimentConfig config;
  std::size_t epochs_completed = 0;
  ParameterStore params;
  std::optional<OptimizerState> optimizer;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tssl
