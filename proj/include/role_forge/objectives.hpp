// SPDX-License-Identifier: Apache-2.0
//
// Training losses: the TD loss on the mixed value, the identifiability loss
// (KL between the role distribution and the trajectory posterior) and the
// specialization loss built from normalized cross log-densities and
// dissimilarities.

#pragma once

#include <span>
#include <utility>
#include <vector>

#include "role_forge/episode.hpp"
#include "role_forge/model.hpp"
#include "role_forge/params.hpp"

namespace role_forge {

/// Min-max constants per timestep, for cross log-densities and dissimilarities.
struct NormStats {
  std::vector<std::pair<double, double>> c;  // (min, max) per t
  std::vector<std::pair<double, double>> d;
};

struct LossOptions {
  double gamma = 0.99;
  double lambda_i = 1e-4;
  double lambda_d = 1e-2;
  /// Reuse these normalization constants instead of computing them.
  const NormStats* frozen_norm = nullptr;
  /// Receives the normalization constants that were used.
  NormStats* record_norm = nullptr;
};

struct LossBreakdown {
  double l_td = 0.0;
  double l_i = 0.0;
  double l_d = 0.0;
  double total = 0.0;
  /// Normalized terms of valid slices, pair-major within each (t, b).
  std::vector<double> c_norm;
  std::vector<double> d_norm;
  Var total_var;
};

/// (v - min) / (max - min); all zeros when max == min. Throws on non-finite input.
std::vector<double> minmax_normalize(std::span<const double> values);

/// Masked mean of squared errors between q_tot [rows, 1] and constant targets.
Var squared_td_error(Tape& tape, Var q_tot, const std::vector<double>& targets, const std::vector<double>& mask);

/// r + gamma * (1 - terminated) * max-mixed target value, t-major [T * B].
std::vector<double> td_targets(const ModelSpec& spec, const EpisodeBatch& batch, const ParamSet& target_params,
                               double gamma);

/// Mixed value of the taken actions, t-major [T * B, 1].
Var chosen_q_tot(ParamBinder& bind, const ModelSpec& spec, const EpisodeBatch& batch, const UnrollOutput& online);

/// Per-step loss entries in t-major order: mask[t * B + b].
std::vector<double> t_major_mask(const EpisodeBatch& batch);

Var td_loss(ParamBinder& bind, const ModelSpec& spec, const EpisodeBatch& batch, const ParamSet& target_params,
            double gamma, const UnrollOutput& online);

/// Mean over agents and valid steps of KL(role || posterior). The GRU state
/// feeding the posterior is detached.
Var loss_identifiable(ParamBinder& bind, const EpisodeBatch& batch, const UnrollOutput& online);

/// Given normalized terms c, d of shape [S, P] (P ordered pairs per slice)
/// and a 0/1 validity per slice, the masked mean over slices of
/// ||d||_F - sum_p min(c_p + d_p, 1).
Var specialize_core(Tape& tape, Var c_norm, Var d_norm, const std::vector<double>& slice_mask);

/// Per-row min-max normalization of x [T * B, P], where the constants for
/// timestep t pool every valid row t * B + b. Constants are not differentiated.
Var normalize_per_step(Tape& tape, Var x, int batch, const std::vector<double>& row_mask,
                       std::vector<std::pair<double, double>>& stats, bool frozen);

/// Raw pair terms for every (t, b) slice, [T * B, n (n - 1)]: c_ij is the
/// log-density of rho_i under agent j's posterior, d_ij the symmetrized
/// dissimilarity of the detached hidden states.
std::pair<Var, Var> pair_terms(ParamBinder& bind, const UnrollOutput& online);

Var loss_specialize(ParamBinder& bind, const EpisodeBatch& batch, const UnrollOutput& online,
                    const LossOptions& options, LossBreakdown* diagnostics = nullptr);

/// Forward pass plus all losses the ablation uses on the binder's tape.
/// A zero coefficient skips its loss and reports it as 0.
LossBreakdown total_loss(ParamBinder& bind, const ModelSpec& spec, const EpisodeBatch& batch,
                         const ParamSet& target_params, const LossOptions& options);

}  // namespace role_forge
