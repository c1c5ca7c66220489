// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration: a TrainConfig plus the run name and output
// directory. Unknown keys are rejected and every default is materialized
// when the configuration is written back out.

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "role_forge/trainer.hpp"

namespace role_forge {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  TrainConfig train;
  std::string run_name = "run";
  std::string output_dir = "runs";
};

/// Parses a JSON document; missing keys keep their defaults.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Fully defaulted JSON with a stable key order.
std::string dump_run_config(const RunConfig& config);

/// FNV-1a over the training-relevant part of the resolved configuration
/// (run_name and output_dir excluded).
std::uint64_t config_hash(const TrainConfig& config);

/// Output directory after applying the ROLE_FORGE_OUTPUT_DIR override.
std::filesystem::path resolve_output_dir(const RunConfig& config);

}  // namespace role_forge
