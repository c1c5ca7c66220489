// SPDX-License-Identifier: Apache-2.0
//
// Role encoder, reparameterized role sampling, diagonal-Gaussian utilities,
// role decoder (hypernetwork), trajectory posterior and dissimilarity model.
//
// Batched tensors are [rows, 3]; each row is one agent at one timestep.

#pragma once

#include <array>
#include <string>

#include "role_forge/nn.hpp"
#include "role_forge/params.hpp"

namespace role_forge::roles {

inline constexpr int kRoleDim = 3;
inline constexpr double kVarianceFloor = 0.1;
inline constexpr int kRoleMlpHidden = 12;

inline const std::string kEncoderNet = "role_encoder";
inline const std::string kDecoderNet = "role_decoder";
inline const std::string kPosteriorNet = "traj_encoder";
inline const std::string kDissimilarityNet = "dissimilarity";

/// Value-level diagonal Gaussian over the role space.
struct RoleDistribution {
  std::array<double, kRoleDim> mu{};
  std::array<double, kRoleDim> sigma2{1.0, 1.0, 1.0};
};

/// Tape-level batch of role distributions: mu and sigma2 are [rows, 3].
struct RoleDistVars {
  Var mu;
  Var sigma2;

  int rows() const { return mu.shape().rows(); }
  RoleDistribution row(int r) const;
};

/// Hypernetwork output: per-row head weights W [rows, hidden * n_actions]
/// (each row a row-major [hidden, n_actions] block) and biases b [rows, n_actions].
struct HeadVars {
  Var W;
  Var b;
};

void init_role_encoder(ParamSet& params, int obs_dim, nn::Rng& rng);
void init_role_decoder(ParamSet& params, int hidden_dim, int n_actions, nn::Rng& rng);
void init_trajectory_posterior(ParamSet& params, int hidden_dim, int obs_dim, nn::Rng& rng);
void init_dissimilarity(ParamSet& params, int hidden_dim, nn::Rng& rng);

/// Splits a [rows, 6] raw output into mu (first 3) and
/// sigma2 = clamp_min(x^2, 0.1) (last 3).
RoleDistVars variance_head(Tape& tape, Var raw);

/// f(o; theta_rho): obs [rows, obs_dim] -> 12 (relu) -> 6.
RoleDistVars role_encode(ParamBinder& bind, Var obs);

/// rho = mu + sqrt(sigma2) * noise.
Var role_sample(Tape& tape, const RoleDistVars& dist, Var noise);

/// Per-row log density: [rows, 1].
Var gaussian_log_prob(Tape& tape, const RoleDistVars& dist, Var x);
/// Per-row KL(p || q): [rows, 1].
Var gaussian_kl(Tape& tape, const RoleDistVars& p, const RoleDistVars& q);
/// Per-row differential entropy: [rows, 1].
Var gaussian_entropy(Tape& tape, const RoleDistVars& dist);

double gaussian_log_prob(const RoleDistribution& dist, const std::array<double, kRoleDim>& x);
double gaussian_kl(const RoleDistribution& p, const RoleDistribution& q);
double gaussian_entropy(const RoleDistribution& dist);

/// q_xi(rho | tau^{t-1}, o^t): concat(h, obs) -> 12 (relu) -> 6 -> variance head.
RoleDistVars trajectory_posterior(ParamBinder& bind, Var h, Var obs);

/// Unsymmetrized d_phi: concat(h_i, h_j) -> 12 (relu) -> 1.
Var dissimilarity_raw(ParamBinder& bind, Var h_i, Var h_j);
/// 0.5 * (raw(h_i, h_j) + raw(h_j, h_i)): [rows, 1].
Var dissimilarity(ParamBinder& bind, Var h_i, Var h_j);

/// g(rho; theta_h): rho [rows, 3] -> 12 (relu) -> hidden * n_actions + n_actions.
HeadVars role_decode(ParamBinder& bind, Var rho, int hidden_dim, int n_actions);

}  // namespace role_forge::roles
