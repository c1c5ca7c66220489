// SPDX-License-Identifier: Apache-2.0

#include "role_forge/roles.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace role_forge::roles {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);
const double kLog2PiE = std::log(2.0 * std::numbers::pi * std::numbers::e);

void require_role_width(const RoleDistVars& d) {
  if (d.mu.shape().cols() != kRoleDim || !(d.mu.shape() == d.sigma2.shape()))
    throw ad::ShapeError("role distribution must be [rows, 3], got " + d.mu.shape().str() + " / " +
                         d.sigma2.shape().str());
}

}  // namespace

RoleDistribution RoleDistVars::row(int r) const {
  RoleDistribution out;
  const auto& m = mu.value();
  const auto& s = sigma2.value();
  for (int k = 0; k < kRoleDim; ++k) {
    out.mu[static_cast<std::size_t>(k)] = m[static_cast<std::size_t>(r * kRoleDim + k)];
    out.sigma2[static_cast<std::size_t>(k)] = s[static_cast<std::size_t>(r * kRoleDim + k)];
  }
  return out;
}

void init_role_encoder(ParamSet& params, int obs_dim, nn::Rng& rng) {
  const auto layers = nn::two_layer(obs_dim, kRoleMlpHidden, 2 * kRoleDim);
  nn::init_mlp(params, kEncoderNet, layers, rng);
}

void init_role_decoder(ParamSet& params, int hidden_dim, int n_actions, nn::Rng& rng) {
  const auto layers = nn::two_layer(kRoleDim, kRoleMlpHidden, hidden_dim * n_actions + n_actions);
  nn::init_mlp(params, kDecoderNet, layers, rng);
}

void init_trajectory_posterior(ParamSet& params, int hidden_dim, int obs_dim, nn::Rng& rng) {
  const auto layers = nn::two_layer(hidden_dim + obs_dim, kRoleMlpHidden, 2 * kRoleDim);
  nn::init_mlp(params, kPosteriorNet, layers, rng);
}

void init_dissimilarity(ParamSet& params, int hidden_dim, nn::Rng& rng) {
  const auto layers = nn::two_layer(2 * hidden_dim, kRoleMlpHidden, 1);
  nn::init_mlp(params, kDissimilarityNet, layers, rng);
}

RoleDistVars variance_head(Tape& tape, Var raw) {
  if (raw.shape().rank() != 2 || raw.shape().cols() != 2 * kRoleDim)
    throw ad::ShapeError("variance_head expects [rows, 6], got " + raw.shape().str());
  Var mu = tape.slice_cols(raw, 0, kRoleDim);
  Var var = tape.clamp_min(tape.square(tape.slice_cols(raw, kRoleDim, 2 * kRoleDim)), kVarianceFloor);
  return {mu, var};
}

RoleDistVars role_encode(ParamBinder& bind, Var obs) {
  const int obs_dim = bind.params().get(kEncoderNet + "/fc1/W").shape[0];
  if (obs.shape().cols() != obs_dim)
    throw ad::ShapeError("role_encode: observation width " + std::to_string(obs.shape().cols()) + " vs encoder input " +
                         std::to_string(obs_dim));
  const auto layers = nn::two_layer(obs_dim, kRoleMlpHidden, 2 * kRoleDim);
  RoleDistVars out = variance_head(bind.tape(), nn::mlp_forward(bind, kEncoderNet, layers, obs));
  for (double v : out.mu.value()) {
    if (std::isfinite(v)) continue;
    const auto& w = bind.params().get(kEncoderNet + "/fc1/W").data;
    const double w_norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
    throw std::runtime_error("role_encode: non-finite role mean; encoder fc1/W norm " + std::to_string(w_norm) +
                             ", parameter norm " + std::to_string(bind.params().l2_norm()));
  }
  return out;
}

Var role_sample(Tape& tape, const RoleDistVars& dist, Var noise) {
  require_role_width(dist);
  return tape.add(dist.mu, tape.mul(tape.sqrt(dist.sigma2), noise));
}

Var gaussian_log_prob(Tape& tape, const RoleDistVars& dist, Var x) {
  require_role_width(dist);
  Var sq = tape.square(tape.sub(x, dist.mu));
  Var per = tape.add(tape.log(dist.sigma2), tape.div(sq, dist.sigma2));
  return tape.sum_cols(tape.affine(per, -0.5, -0.5 * kLog2Pi));
}

Var gaussian_kl(Tape& tape, const RoleDistVars& p, const RoleDistVars& q) {
  require_role_width(p);
  require_role_width(q);
  Var log_ratio = tape.sub(tape.log(q.sigma2), tape.log(p.sigma2));
  Var num = tape.add(p.sigma2, tape.square(tape.sub(p.mu, q.mu)));
  Var per = tape.add(tape.affine(log_ratio, 0.5, 0.0), tape.affine(tape.div(num, q.sigma2), 0.5, -0.5));
  return tape.sum_cols(per);
}

Var gaussian_entropy(Tape& tape, const RoleDistVars& dist) {
  require_role_width(dist);
  return tape.sum_cols(tape.affine(tape.log(dist.sigma2), 0.5, 0.5 * kLog2PiE));
}

double gaussian_log_prob(const RoleDistribution& dist, const std::array<double, kRoleDim>& x) {
  double s = 0.0;
  for (std::size_t k = 0; k < kRoleDim; ++k) {
    const double d = x[k] - dist.mu[k];
    s += -0.5 * (std::log(dist.sigma2[k]) + d * d / dist.sigma2[k]) - 0.5 * kLog2Pi;
  }
  return s;
}

double gaussian_kl(const RoleDistribution& p, const RoleDistribution& q) {
  double s = 0.0;
  for (std::size_t k = 0; k < kRoleDim; ++k) {
    const double dm = p.mu[k] - q.mu[k];
    s += 0.5 * (std::log(q.sigma2[k]) - std::log(p.sigma2[k])) + 0.5 * (p.sigma2[k] + dm * dm) / q.sigma2[k] - 0.5;
  }
  return s;
}

double gaussian_entropy(const RoleDistribution& dist) {
  double s = 0.0;
  for (double v : dist.sigma2) s += 0.5 * std::log(v) + 0.5 * kLog2PiE;
  return s;
}

RoleDistVars trajectory_posterior(ParamBinder& bind, Var h, Var obs) {
  Tape& tape = bind.tape();
  const int in_dim = bind.params().get(kPosteriorNet + "/fc1/W").shape[0];
  Var x = tape.concat_cols({h, obs});
  if (x.shape().cols() != in_dim)
    throw ad::ShapeError("trajectory_posterior: input width " + std::to_string(x.shape().cols()) + " vs " +
                         std::to_string(in_dim));
  const auto layers = nn::two_layer(in_dim, kRoleMlpHidden, 2 * kRoleDim);
  return variance_head(tape, nn::mlp_forward(bind, kPosteriorNet, layers, x));
}

Var dissimilarity_raw(ParamBinder& bind, Var h_i, Var h_j) {
  Tape& tape = bind.tape();
  Var x = tape.concat_cols({h_i, h_j});
  const auto layers = nn::two_layer(x.shape().cols(), kRoleMlpHidden, 1);
  return nn::mlp_forward(bind, kDissimilarityNet, layers, x);
}

Var dissimilarity(ParamBinder& bind, Var h_i, Var h_j) {
  Tape& tape = bind.tape();
  Var forward = dissimilarity_raw(bind, h_i, h_j);
  Var reverse = dissimilarity_raw(bind, h_j, h_i);
  return tape.affine(tape.add(forward, reverse), 0.5, 0.0);
}

HeadVars role_decode(ParamBinder& bind, Var rho, int hidden_dim, int n_actions) {
  Tape& tape = bind.tape();
  const int out = hidden_dim * n_actions + n_actions;
  const auto layers = nn::two_layer(kRoleDim, kRoleMlpHidden, out);
  Var flat = nn::mlp_forward(bind, kDecoderNet, layers, rho);
  return {tape.slice_cols(flat, 0, hidden_dim * n_actions), tape.slice_cols(flat, hidden_dim * n_actions, out)};
}

}  // namespace role_forge::roles
