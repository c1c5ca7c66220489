// SPDX-License-Identifier: Apache-2.0
//
// The role_forge command line: train, evaluate, export-roles, plot, selftest.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#pragma once

#include <filesystem>
#include <iosfwd>

#include "role_forge/run_config.hpp"

namespace role_forge::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

int run(int argc, char** argv, std::ostream& out, std::ostream& err);

struct TrainOutcome {
  std::uint64_t updates = 0;
  std::int64_t env_steps = 0;
  bool aborted = false;
};

/// Trains into `dir`: resolved_config.json, metrics.csv (appended, one row
/// per update) and checkpoint.bin (refreshed periodically and at exit). A
/// non-finite loss stops the run with the last good state checkpointed.
TrainOutcome train_run(const RunConfig& config, const std::filesystem::path& dir, std::ostream& log,
                       const std::filesystem::path& resume_from = {}, bool force = false);

}  // namespace role_forge::cli
