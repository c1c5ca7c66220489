// SPDX-License-Identifier: Apache-2.0

#include "role_forge/mixing.hpp"

#include <stdexcept>

namespace role_forge::mixing {

void init_utility(ParamSet& params, const std::string& net, const UtilityDims& dims, bool with_head, nn::Rng& rng) {
  nn::init_layer(params, net + "/fc1", nn::LayerSpec{dims.input_dim, dims.embed_dim, nn::Activation::kRelu}, rng);
  nn::init_gru(params, net + "/gru", nn::GRUSpec{dims.embed_dim, dims.hidden_dim}, rng);
  if (with_head)
    nn::init_layer(params, net + "/head", nn::LayerSpec{dims.hidden_dim, dims.n_actions, nn::Activation::kNone}, rng);
}

Var utility_embed(ParamBinder& bind, const std::string& net, Var input) {
  return bind.tape().relu(nn::linear(bind, net + "/fc1", input));
}

Var generated_head_q(Tape& tape, Var h, const roles::HeadVars& head) {
  return tape.add(tape.row_matvec(h, head.W), head.b);
}

Var shared_head_q(ParamBinder& bind, const std::string& net, Var h) { return nn::linear(bind, net + "/head", h); }

UtilityOutput utility_forward(ParamBinder& bind, const std::string& net, Var input, Var h_prev,
                              const roles::HeadVars& head) {
  Var x = utility_embed(bind, net, input);
  Var h = nn::gru_cell(bind, net + "/gru", x, h_prev);
  return {generated_head_q(bind.tape(), h, head), h};
}

void init_mixer(ParamSet& params, int state_dim, int n_agents, nn::Rng& rng) {
  nn::init_mlp(params, kMixerNet + "/hyper_w1", nn::two_layer(state_dim, kMixEmbed, n_agents * kMixEmbed), rng);
  nn::init_layer(params, kMixerNet + "/hyper_b1/fc1", nn::LayerSpec{state_dim, kMixEmbed, nn::Activation::kNone}, rng);
  nn::init_mlp(params, kMixerNet + "/hyper_w2", nn::two_layer(state_dim, kMixEmbed, kMixEmbed), rng);
  nn::init_mlp(params, kMixerNet + "/hyper_b2", nn::two_layer(state_dim, kMixEmbed, 1), rng);
}

MixingVars mixing_hypernet(ParamBinder& bind, Var state, int n_agents) {
  Tape& tape = bind.tape();
  const int state_dim = bind.params().get(kMixerNet + "/hyper_b1/fc1/W").shape[0];
  if (state.shape().cols() != state_dim)
    throw ad::ShapeError("mixing_hypernet: state width " + std::to_string(state.shape().cols()) + " vs " +
                         std::to_string(state_dim));
  MixingVars out;
  out.w1 = tape.abs(nn::mlp_forward(bind, kMixerNet + "/hyper_w1", nn::two_layer(state_dim, kMixEmbed, n_agents * kMixEmbed), state));
  out.b1 = nn::linear(bind, kMixerNet + "/hyper_b1/fc1", state);
  out.w2 = tape.abs(nn::mlp_forward(bind, kMixerNet + "/hyper_w2", nn::two_layer(state_dim, kMixEmbed, kMixEmbed), state));
  out.b2 = nn::mlp_forward(bind, kMixerNet + "/hyper_b2", nn::two_layer(state_dim, kMixEmbed, 1), state);
  return out;
}

Var mix(Tape& tape, const MixingVars& weights, Var q_locals) {
  Var hidden = tape.relu(tape.add(tape.row_matvec(q_locals, weights.w1), weights.b1));
  return tape.add(tape.row_matvec(hidden, weights.w2), weights.b2);
}

Var mix(ParamBinder& bind, Var q_locals, Var state) {
  return mix(bind.tape(), mixing_hypernet(bind, state, q_locals.shape().cols()), q_locals);
}

}  // namespace role_forge::mixing
