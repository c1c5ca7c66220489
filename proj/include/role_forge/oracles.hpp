// SPDX-License-Identifier: Apache-2.0
//
// Independent reference computations used by the tests and by `selftest`.
// Nothing here goes through the tape; every quantity is computed directly
// from its definition.

#pragma once

#include <array>
#include <random>
#include <span>
#include <vector>

#include "role_forge/episode.hpp"
#include "role_forge/model.hpp"
#include "role_forge/params.hpp"

namespace role_forge::oracles {

// --- Discrete role/trajectory/observation model --------------------------

/// Joint p(rho, tau, o) over small finite sets, stored [rho][tau][o].
struct DiscreteJoint {
  int n_rho = 4;
  int n_tau = 5;
  int n_o = 2;
  std::vector<double> p;

  double at(int r, int t, int o) const { return p[static_cast<std::size_t>((r * n_tau + t) * n_o + o)]; }
};

/// Conditional over rho given (tau, o), stored [tau][o][rho].
struct Conditional {
  int n_rho = 0;
  int n_tau = 0;
  int n_o = 0;
  std::vector<double> q;

  double at(int r, int t, int o) const { return q[static_cast<std::size_t>((t * n_o + o) * n_rho + r)]; }
};

DiscreteJoint random_joint(std::mt19937_64& rng, int n_rho = 4, int n_tau = 5, int n_o = 2);
/// I(rho; tau | o) by enumeration.
double conditional_mutual_information(const DiscreteJoint& joint);
/// p(rho | tau, o).
Conditional true_posterior(const DiscreteJoint& joint);
/// A random strictly positive conditional.
Conditional random_conditional(const DiscreteJoint& joint, std::mt19937_64& rng);
/// E_p[log q(rho | tau, o) - log p(rho | o)].
double variational_bound(const DiscreteJoint& joint, const Conditional& q);

// --- Diagonal Gaussians ---------------------------------------------------

using Vec3 = std::array<double, 3>;

double kl_closed_form(const Vec3& mu_p, const Vec3& var_p, const Vec3& mu_q, const Vec3& var_q);
double entropy_closed_form(const Vec3& var);

struct MonteCarlo {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Sample estimate of E_p[log p(x) - log q(x)].
MonteCarlo kl_monte_carlo(const Vec3& mu_p, const Vec3& var_p, const Vec3& mu_q, const Vec3& var_q, int samples,
                          std::mt19937_64& rng);

// --- Jensen step for the min relaxation -----------------------------------

double mean_of_min(std::span<const double> x, double u);
double min_of_mean(std::span<const double> x, double u);

// --- Tabular MDP -----------------------------------------------------------

/// Deterministic two-state, two-action MDP.
struct TwoStateMdp {
  std::array<std::array<double, 2>, 2> reward{};
  std::array<std::array<int, 2>, 2> next{};
};

/// Optimal action values by value iteration to `tol`.
std::array<std::array<double, 2>, 2> value_iteration(const TwoStateMdp& mdp, double gamma, double tol = 1e-14);

// --- Plain QMIX -------------------------------------------------------------

/// Squared TD loss of the role-free ablations computed episode by episode
/// with dense linear algebra: per-agent fc1/GRU/head, the hypernetwork mixer,
/// greedy targets from `target`, target = r on terminal steps.
double plain_qmix_loss(const ModelSpec& spec, const ParamSet& params, const ParamSet& target,
                       std::span<const Episode> episodes, double gamma);

}  // namespace role_forge::oracles
