// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoints: a header (format version, config hash, environment,
// counters, generator state), the resolved configuration, then the online
// parameters, the target parameters and the optimizer accumulators as named
// fp64 tensors. A trailing FNV-1a checksum covers every preceding byte.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "role_forge/run_config.hpp"
#include "role_forge/trainer.hpp"

namespace role_forge {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  RunConfig config;
  TrainState state;
};

/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, const TrainState& state);

/// Fully validates the file before returning anything. Throws
/// CheckpointError on a bad magic, an unknown version, truncation or a
/// checksum mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Serialized form, exposed for tests.
std::string encode_checkpoint(const RunConfig& config, const TrainState& state);
Checkpoint decode_checkpoint(const std::string& bytes);

}  // namespace role_forge
