// SPDX-License-Identifier: Apache-2.0
//
// Fully-connected layers, MLPs and the GRU cell.

#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "role_forge/params.hpp"

namespace role_forge::nn {

using Rng = std::mt19937_64;

enum class Activation { kRelu, kNone };

struct LayerSpec {
  int in_dim = 1;
  int out_dim = 1;
  Activation activation = Activation::kNone;
};

struct GRUSpec {
  int input_dim = 1;
  int hidden_dim = 64;
};

/// W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), b = 0, stored as "<prefix>/W" and "<prefix>/b".
void init_layer(ParamSet& params, const std::string& prefix, const LayerSpec& spec, Rng& rng);

/// Layers are stored as "<net>/fc1", "<net>/fc2", ...
void init_mlp(ParamSet& params, const std::string& net, std::span<const LayerSpec> layers, Rng& rng);

/// Gate matrices "<prefix>/W_{r,z,h}" [in, hidden], "<prefix>/U_{r,z,h}" [hidden, hidden]
/// and biases "<prefix>/b_{r,z,h}" [hidden].
void init_gru(ParamSet& params, const std::string& prefix, const GRUSpec& spec, Rng& rng);

Var linear(ParamBinder& bind, const std::string& prefix, Var x);
Var mlp_forward(ParamBinder& bind, const std::string& net, std::span<const LayerSpec> layers, Var x);

/// r = sig(x W_r + h U_r + b_r), z = sig(x W_z + h U_z + b_z),
/// c = tanh(x W_h + (r * h) U_h + b_h), h' = (1 - z) * h + z * c.
Var gru_cell(ParamBinder& bind, const std::string& prefix, Var x, Var h_prev);

std::vector<Var> gru_unroll(ParamBinder& bind, const std::string& prefix, std::span<const Var> xs, Var h0);

/// Two-layer MLP spec: in -> hidden (relu) -> out.
std::vector<LayerSpec> two_layer(int in_dim, int hidden, int out_dim);

}  // namespace role_forge::nn
