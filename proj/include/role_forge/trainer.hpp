// SPDX-License-Identifier: Apache-2.0
//
// Centralized training with decentralized execution: parallel rollouts,
// episodic replay, epsilon-greedy control, RMSprop updates and periodic
// target synchronization.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "role_forge/envs.hpp"
#include "role_forge/episode.hpp"
#include "role_forge/model.hpp"
#include "role_forge/objectives.hpp"
#include "role_forge/params.hpp"

namespace role_forge {

struct TrainConfig {
  envs::EnvKind env_kind = envs::EnvKind::kHarvest;
  Ablation ablation = Ablation::kRoma;
  double gamma = 0.99;
  double lr = 5e-4;
  double rms_alpha = 0.99;
  double rms_eps = 1e-5;
  double lambda_i = 1e-4;
  double lambda_d = 1e-2;
  double eps_start = 1.0;
  double eps_end = 0.05;
  std::int64_t eps_anneal_steps = 50000;
  int n_parallel = 8;
  int batch_episodes = 32;
  int buffer_capacity = 2000;
  int target_interval = 200;
  /// Gradient updates after each collection round.
  int updates_per_round = 1;
  int role_dim = 3;
  std::int64_t total_env_steps = 200000;
  /// Greedy evaluation every this many updates (0 disables).
  int eval_interval = 200;
  int eval_episodes = 32;
  bool input_last_action = true;
  bool input_agent_id = true;
  bool single_thread = false;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Coefficients actually applied under the configured ablation.
LossOptions loss_options(const TrainConfig& config);

/// max(eps_end, eps_start - (eps_start - eps_end) * t / anneal_steps).
double epsilon(const TrainConfig& config, std::int64_t env_steps);
double epsilon(std::int64_t env_steps);

struct OptimizerState {
  ParamSet v;  // running mean of squared gradients
};

OptimizerState make_optimizer(const ParamSet& params);

/// v <- alpha v + (1 - alpha) g^2; theta <- theta - lr g / (sqrt(v) + eps).
/// Leaves everything untouched and returns false when a gradient is non-finite.
bool rmsprop_step(ParamSet& params, const ParamSet& grads, OptimizerState& state, double lr, double alpha, double eps);

/// Hard copy target <- params when `update` is a positive multiple of `interval`.
bool target_sync(const ParamSet& params, ParamSet& target, std::uint64_t update, int interval);

/// Greedy action with ties to the lowest index.
int greedy_action(const std::vector<double>& q);

/// Per-agent epsilon-greedy choice. Consumes exactly 2 draws per agent so the
/// random stream does not depend on the q-values.
std::vector<int> select_actions(const std::vector<std::vector<double>>& q, double eps, std::mt19937_64& rng);

enum class ActMode { kTrain, kEval };

/// Schedule for one rollout: epsilon for step t is eps_at(t).
using EpsilonSchedule = std::function<double(int t)>;

struct RolloutRecord {
  Episode episode;
  /// Role distributions per step and agent (role-conditioned ablations only).
  std::vector<std::vector<roles::RoleDistribution>> roles;
  /// Hidden state entering each step, [steps + 1] tensors of [n, H].
  std::vector<Tensor> hidden;
};

/// One decentralized episode. Reads only the role encoder/decoder and the
/// utility networks.
RolloutRecord run_episode(const ParamSet& params, const ModelSpec& spec, envs::EnvKind kind, ActMode mode,
                          const EpsilonSchedule& eps, std::uint64_t seed);

/// k training episodes, worker w seeded with seeds[w]; the epsilon of worker
/// step t is epsilon(env_steps + t * k). Parallel and single-thread modes
/// produce identical output in worker order. Failed rollouts are logged to
/// stderr and dropped.
std::vector<Episode> collect_episodes(const ParamSet& params, const ModelSpec& spec, const TrainConfig& config,
                                      std::int64_t env_steps, const std::vector<std::uint64_t>& seeds);

struct RoleRecord {
  int episode = 0;
  int t = 0;
  int agent = 0;
  int duty = 0;
  roles::RoleDistribution dist;
};

struct EvalResult {
  double mean_return = 0.0;
  std::optional<double> success_rate;
  std::vector<RoleRecord> roles;
  std::vector<double> returns;
};

/// Greedy rollouts with rho = mu.
EvalResult evaluate(const ParamSet& params, const ModelSpec& spec, envs::EnvKind kind, int episodes,
                    std::uint64_t seed);

struct DissimilarityGap {
  std::optional<double> between;
  std::optional<double> within;
};

/// Mean per-step min-max-normalized dissimilarity over agent pairs whose
/// ground-truth duties differ (between) or match (within). Steps whose
/// pair values are all equal carry no ordering and are skipped.
DissimilarityGap dissimilarity_gap(const ParamSet& params, const ModelSpec& spec, envs::EnvKind kind, int episodes,
                                   std::uint64_t seed);

struct MetricsRow {
  std::uint64_t update = 0;
  std::int64_t env_steps = 0;
  double l_td = 0.0;
  double l_i = 0.0;
  double l_d = 0.0;
  double total = 0.0;
  double eps = 0.0;
  std::optional<double> eval_return;
  std::optional<double> eval_success;
  std::optional<double> between_d;
  std::optional<double> within_d;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a checkpoint needs to continue a run.
struct TrainState {
  ParamSet params;
  ParamSet target;
  OptimizerState optimizer;
  std::uint64_t updates = 0;
  std::int64_t env_steps = 0;
  std::mt19937_64 rng;  // rollout seeds and batch sampling
};

class Trainer {
 public:
  explicit Trainer(TrainConfig config);

  const TrainConfig& config() const { return config_; }
  const ModelSpec& spec() const { return spec_; }
  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  bool done() const { return state_.env_steps >= config_.total_env_steps; }

  /// One collection round, followed by `updates_per_round` updates once the
  /// buffer holds a full batch. Returns one metrics row per update.
  std::vector<MetricsRow> round();

  /// Rounds until the step budget is spent.
  void run(const std::function<void(const MetricsRow&)>& on_update);

  /// Loss on a batch with the current parameters, without updating.
  LossBreakdown loss_on(const EpisodeBatch& batch) const;

 private:
  MetricsRow update();

  TrainConfig config_;
  ModelSpec spec_;
  TrainState state_;
  ReplayBuffer buffer_;
};

}  // namespace role_forge
