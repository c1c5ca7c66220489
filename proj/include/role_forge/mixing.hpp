// SPDX-License-Identifier: Apache-2.0
//
// Local utility networks and the state-conditioned monotonic mixer.

#pragma once

#include <string>

#include "role_forge/nn.hpp"
#include "role_forge/params.hpp"
#include "role_forge/roles.hpp"

namespace role_forge::mixing {

inline constexpr int kMixEmbed = 32;
inline const std::string kMixerNet = "mixer";

struct UtilityDims {
  int input_dim = 1;
  int embed_dim = 64;
  int hidden_dim = 64;
  int n_actions = 1;
};

/// "<net>/fc1" (input -> embed), "<net>/gru", and when `with_head`
/// a plain shared output layer "<net>/head" (hidden -> n_actions).
void init_utility(ParamSet& params, const std::string& net, const UtilityDims& dims, bool with_head, nn::Rng& rng);

/// relu(FC1(input)).
Var utility_embed(ParamBinder& bind, const std::string& net, Var input);

/// q[r, a] = h[r, :] . W[r][:, a] + b[r, a] with a role-generated head.
Var generated_head_q(Tape& tape, Var h, const roles::HeadVars& head);
/// q = h W + b with the shared "<net>/head" layer.
Var shared_head_q(ParamBinder& bind, const std::string& net, Var h);

struct UtilityOutput {
  Var q;  // [rows, n_actions]
  Var h;  // [rows, hidden]
};

/// x = relu(FC1(input)); h_t = gru(x, h_prev); q = h_t W_head + b_head.
UtilityOutput utility_forward(ParamBinder& bind, const std::string& net, Var input, Var h_prev,
                              const roles::HeadVars& head);

/// Mixing weights generated from the global state, one row per state.
struct MixingVars {
  Var w1;  // [rows, n * 32], non-negative
  Var b1;  // [rows, 32]
  Var w2;  // [rows, 32], non-negative
  Var b2;  // [rows, 1]
};

void init_mixer(ParamSet& params, int state_dim, int n_agents, nn::Rng& rng);

/// Hypernetworks: |state -> 32 -> n*32|, state -> 32, |state -> 32 -> 32|, state -> 32 -> 1.
MixingVars mixing_hypernet(ParamBinder& bind, Var state, int n_agents);

/// q_tot = relu(q W1 + b1) W2 + b2 per row. q_locals is [rows, n].
Var mix(Tape& tape, const MixingVars& weights, Var q_locals);
Var mix(ParamBinder& bind, Var q_locals, Var state);

}  // namespace role_forge::mixing
