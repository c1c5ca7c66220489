// SPDX-License-Identifier: Apache-2.0
//
// Self-contained verification suites. Each returns a single pass/fail
// result with a one-line detail; `selftest` and the acceptance binary run
// them, and the unit tests reuse the fixtures.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "role_forge/episode.hpp"
#include "role_forge/model.hpp"

namespace role_forge::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Runs `body` and times it; an exception counts as a failure.
CheckResult timed(const std::string& name, const std::function<CheckResult()>& body);

/// Random episodes of a small synthetic task. The first episode has
/// `steps` steps, later ones alternate with one step fewer so batches pad.
std::vector<Episode> synthetic_episodes(const ModelSpec& spec, int count, int steps, std::uint64_t seed);

/// n = 2, T = 3 micro-task used for gradient checks.
ModelSpec micro_spec(Ablation ablation = Ablation::kRoma);

CheckResult gradient_fidelity();
CheckResult mixer_monotonicity(int draws = 1000);
CheckResult gaussian_suite(int mc_samples = 1000000);
CheckResult variational_bound(int draws = 100);
CheckResult jensen_min(int draws = 1000);

struct MdpRun {
  double max_error = 0.0;
  int updates = 0;
};
/// Trains a single-agent QMIX model on the two-state MDP and compares
/// Q_tot with value iteration over every (s, a).
MdpRun mdp_sanity_run(int updates, std::uint64_t seed, int batch_episodes = 8, int target_interval = 50,
                      double lr = 5e-4);
CheckResult mdp_sanity();

CheckResult env_simulations();
CheckResult qmix_reference(int batches = 3);

/// The oracle suites `selftest` runs.
std::vector<CheckResult> selftest_suite();

}  // namespace role_forge::checks
