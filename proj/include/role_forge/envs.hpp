// SPDX-License-Identifier: Apache-2.0
//
// Small cooperative Dec-POMDPs whose optimal play needs agents with
// different duties.
//
//   formation  6 agents on a 12-cell line must cover slots {1,3,5,7,9,11}.
//   sacrifice  4 agents in an 8-cell corridor; the gate between cells 4 and 5
//              only opens while someone stands on the plate (cell 2).
//   harvest    2 class-A and 2 class-B agents on a 5x5 grid with class-typed
//              resources on the west and east columns.

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace role_forge::envs {

enum class EnvKind { kFormation, kSacrifice, kHarvest };

EnvKind parse_env_kind(const std::string& name);
std::string env_kind_name(EnvKind kind);

struct EnvContract {
  int n_agents = 1;
  int obs_dim = 1;
  int state_dim = 1;
  int n_actions = 1;
  int horizon = 1;
};

struct StepResult {
  std::vector<std::vector<double>> obs;
  std::vector<double> state;
  double reward = 0.0;
  bool done = false;
};

class InvalidAction : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Deterministic environment. Positions are cell indices (row-major for
/// harvest) and are exposed for duty labelling and oracles.
class Env {
 public:
  virtual ~Env() = default;
  virtual EnvKind kind() const = 0;
  virtual const EnvContract& contract() const = 0;
  virtual StepResult reset(std::uint64_t seed) = 0;
  virtual StepResult step(const std::vector<int>& joint_action) = 0;
  virtual std::vector<int> positions() const = 0;
  virtual int t() const = 0;
  /// Observation/state of the current configuration without stepping.
  virtual StepResult observe() const = 0;
  virtual std::unique_ptr<Env> clone() const = 0;
};

std::unique_ptr<Env> make_env(EnvKind kind);
EnvContract env_contract(EnvKind kind);

// Action encodings.
namespace line_action {
inline constexpr int kLeft = 0;
inline constexpr int kRight = 1;
inline constexpr int kStay = 2;
}  // namespace line_action
namespace grid_action {
inline constexpr int kUp = 0;
inline constexpr int kDown = 1;
inline constexpr int kLeft = 2;
inline constexpr int kRight = 3;
inline constexpr int kPick = 4;
}  // namespace grid_action

namespace formation {
inline constexpr int kCells = 12;
inline constexpr int kAgents = 6;
inline constexpr int kHorizon = 20;
inline constexpr double kStepCost = 0.01;
bool is_slot(int cell);
double step_reward(const std::vector<int>& positions);
}  // namespace formation

namespace sacrifice {
inline constexpr int kCells = 8;
inline constexpr int kAgents = 4;
inline constexpr int kHorizon = 10;
inline constexpr int kPlate = 2;
inline constexpr int kGateWest = 4;  // gate sits between kGateWest and kGateWest + 1
inline constexpr int kGoal = 7;
inline constexpr double kPerAgentReward = 0.25;
}  // namespace sacrifice

namespace harvest {
inline constexpr int kSide = 5;
inline constexpr int kAgents = 4;
inline constexpr int kHorizon = 15;
inline constexpr int kRespawn = 2;
inline constexpr double kMatched = 1.0;
inline constexpr double kMismatched = 0.25;
/// Agent classes: 0 = A, 1 = B.
inline constexpr int kClass[kAgents] = {0, 0, 1, 1};
/// Resource cells (row-major) and their type (0 = a, 1 = b).
inline constexpr int kResourceCell[4] = {1 * kSide + 0, 3 * kSide + 0, 1 * kSide + 4, 3 * kSide + 4};
inline constexpr int kResourceType[4] = {0, 0, 1, 1};
inline constexpr int kStartCell = 2 * kSide + 2;
}  // namespace harvest

/// Duty labels per agent from the per-step position trace (trace[0] is the
/// reset configuration).
///   formation: target slot nearest the final position (ties to the lower slot)
///   sacrifice: 0 = plate-holder (most steps on the plate), 1 = runner
///   harvest:   static class label 0 = A, 1 = B
std::vector<int> ground_truth_partition(EnvKind kind, const std::vector<std::vector<int>>& trace);

/// Success predicate on a finished episode; harvest has none.
std::optional<bool> episode_success(EnvKind kind, const std::vector<std::vector<int>>& trace, double episode_return);

/// Maximal undiscounted return over deterministic open-loop joint plans.
double optimal_return_oracle(EnvKind kind);

}  // namespace role_forge::envs
