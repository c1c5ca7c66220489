// SPDX-License-Identifier: Apache-2.0
//
// The full agent model: shared (or per-agent) utility networks, the role
// machinery that generates their heads, and the mixer. Provides the batched
// unroll used for training and the single-step forward used for acting.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "role_forge/envs.hpp"
#include "role_forge/episode.hpp"
#include "role_forge/mixing.hpp"
#include "role_forge/params.hpp"
#include "role_forge/roles.hpp"

namespace role_forge {

enum class Ablation { kRoma, kTdOnly, kTdPlusLi, kTdPlusLd, kQmix, kQmixNps };

Ablation parse_ablation(const std::string& name);
std::string ablation_name(Ablation a);
/// Whether the ablation generates utility heads from roles.
bool uses_roles(Ablation a);

struct ModelSpec {
  int n_agents = 1;
  int obs_dim = 1;
  int state_dim = 1;
  int n_actions = 1;
  int embed_dim = 64;
  int hidden_dim = 64;
  bool input_last_action = true;
  bool input_agent_id = true;
  Ablation ablation = Ablation::kRoma;

  int input_dim() const {
    return obs_dim + (input_last_action ? n_actions : 0) + (input_agent_id ? n_agents : 0);
  }
};

ModelSpec make_model_spec(const envs::EnvContract& contract, Ablation ablation, bool input_last_action = true,
                          bool input_agent_id = true);

/// Utility network name for agent i ("agent", or "agent_<i>" without sharing).
std::string utility_net(const ModelSpec& spec, int agent);

/// All parameters the ablation needs, mixer included.
ParamSet init_model(const ModelSpec& spec, std::uint64_t seed);

/// Batched forward over `steps` timesteps of a batch. Rows are ordered
/// t-major: row = (t * B + b) * n + i.
struct UnrollOutput {
  int steps = 0;
  int batch = 0;
  int n_agents = 0;
  Var q;        // [steps * B * n, A]
  Var h_prev;   // [steps * B * n, H], hidden state entering each step (h = 0 at t = 0)
  Var obs;      // [steps * B * n, obs_dim], constant
  roles::RoleDistVars role;  // role-conditioned ablations only
  Var rho;                   // [steps * B * n, 3]
};

/// `use_noise` = false uses rho = mu.
UnrollOutput unroll(ParamBinder& bind, const ModelSpec& spec, const EpisodeBatch& batch, int steps,
                    bool use_noise = true);

/// Utility-network input rows for step t of every episode: [B * n, input_dim].
Tensor utility_inputs(const ModelSpec& spec, const EpisodeBatch& batch, int t);

/// One decentralized decision for all agents of a single environment.
struct ActOutput {
  std::vector<std::vector<double>> q;  // [n][A]
  Tensor h;                            // [n, H]
  std::vector<roles::RoleDistribution> roles;
};

/// Reads only the role encoder/decoder and the utility networks. `noise`
/// holds n * 3 standard-normal draws, or is empty to act on the role mean.
ActOutput act_forward(const ParamSet& params, const ModelSpec& spec, const std::vector<std::vector<double>>& obs,
                      const std::vector<int>& last_actions, const Tensor& h_prev, const std::vector<double>& noise);

/// Tape-level pieces reused by the objectives.
Var mixed_values(ParamBinder& bind, const ModelSpec& spec, Var q_per_agent, const EpisodeBatch& batch, int first_step,
                 int steps);

}  // namespace role_forge
