// SPDX-License-Identifier: Apache-2.0

#include "role_forge/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace role_forge::nn {

void init_layer(ParamSet& params, const std::string& prefix, const LayerSpec& spec, Rng& rng) {
  if (spec.in_dim <= 0 || spec.out_dim <= 0) throw std::invalid_argument("layer dims must be positive: " + prefix);
  const double bound = 1.0 / std::sqrt(static_cast<double>(spec.in_dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor w(Shape{spec.in_dim, spec.out_dim});
  for (double& v : w.data) v = dist(rng);
  params.add(prefix + "/W", std::move(w));
  params.add(prefix + "/b", Tensor(Shape{spec.out_dim}, 0.0));
}

void init_mlp(ParamSet& params, const std::string& net, std::span<const LayerSpec> layers, Rng& rng) {
  for (std::size_t i = 0; i < layers.size(); ++i)
    init_layer(params, net + "/fc" + std::to_string(i + 1), layers[i], rng);
}

void init_gru(ParamSet& params, const std::string& prefix, const GRUSpec& spec, Rng& rng) {
  if (spec.input_dim <= 0 || spec.hidden_dim <= 0) throw std::invalid_argument("GRU dims must be positive: " + prefix);
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
  const double hid_bound = 1.0 / std::sqrt(static_cast<double>(spec.hidden_dim));
  for (const char* gate : {"r", "z", "h"}) {
    std::uniform_real_distribution<double> dist(-in_bound, in_bound);
    Tensor w(Shape{spec.input_dim, spec.hidden_dim});
    for (double& v : w.data) v = dist(rng);
    params.add(prefix + "/W_" + gate, std::move(w));
  }
  for (const char* gate : {"r", "z", "h"}) {
    std::uniform_real_distribution<double> dist(-hid_bound, hid_bound);
    Tensor u(Shape{spec.hidden_dim, spec.hidden_dim});
    for (double& v : u.data) v = dist(rng);
    params.add(prefix + "/U_" + gate, std::move(u));
  }
  for (const char* gate : {"r", "z", "h"}) params.add(prefix + "/b_" + gate, Tensor(Shape{spec.hidden_dim}, 0.0));
}

Var linear(ParamBinder& bind, const std::string& prefix, Var x) {
  Tape& tape = bind.tape();
  return tape.add_bias(tape.matmul(x, bind(prefix + "/W")), bind(prefix + "/b"));
}

Var mlp_forward(ParamBinder& bind, const std::string& net, std::span<const LayerSpec> layers, Var x) {
  Var y = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    y = linear(bind, net + "/fc" + std::to_string(i + 1), y);
    if (layers[i].activation == Activation::kRelu) y = bind.tape().relu(y);
  }
  return y;
}

Var gru_cell(ParamBinder& bind, const std::string& prefix, Var x, Var h_prev) {
  Tape& t = bind.tape();
  auto gate = [&](const char* g, Var hin) {
    const std::string s(g);
    return t.add_bias(t.add(t.matmul(x, bind(prefix + "/W_" + s)), t.matmul(hin, bind(prefix + "/U_" + s))),
                      bind(prefix + "/b_" + s));
  };
  Var r = t.sigmoid(gate("r", h_prev));
  Var z = t.sigmoid(gate("z", h_prev));
  Var cand = t.tanh(gate("h", t.mul(r, h_prev)));
  // (1 - z) * h + z * c == h + z * (c - h)
  return t.add(h_prev, t.mul(z, t.sub(cand, h_prev)));
}

std::vector<Var> gru_unroll(ParamBinder& bind, const std::string& prefix, std::span<const Var> xs, Var h0) {
  if (xs.empty()) throw std::invalid_argument("gru_unroll: empty sequence");
  std::vector<Var> hs;
  hs.reserve(xs.size());
  Var h = h0;
  for (Var x : xs) {
    h = gru_cell(bind, prefix, x, h);
    hs.push_back(h);
  }
  return hs;
}

std::vector<LayerSpec> two_layer(int in_dim, int hidden, int out_dim) {
  return {LayerSpec{in_dim, hidden, Activation::kRelu}, LayerSpec{hidden, out_dim, Activation::kNone}};
}

}  // namespace role_forge::nn
