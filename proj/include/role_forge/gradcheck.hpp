// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of tape gradients.

#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "role_forge/params.hpp"

namespace role_forge {

struct GradCheckOptions {
  double h = 1e-5;
  /// Only parameters whose name passes the filter are perturbed (all when empty).
  std::function<bool(const std::string&)> filter;
  /// Check every `stride`-th element of each tensor.
  std::size_t stride = 1;
  /// A coordinate is treated as straddling a kink when its central difference
  /// disagrees with the analytic gradient and the two one-sided differences
  /// disagree with each other by at least this relative amount.
  double kink_tolerance = 1e-3;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

/// Scalar objective built on a fresh tape from the bound parameters.
using ScalarObjective = std::function<Var(ParamBinder&)>;

/// Compares backward() gradients against central differences, returning the
/// max over checked coordinates of |fd - analytic| / max(1, |analytic|).
/// Throws std::runtime_error naming the coordinate if f becomes non-finite.
GradCheckReport finite_diff_check(const ScalarObjective& f, ParamSet& params, const GradCheckOptions& options = {});

/// Evaluates f once and returns (value, gradients).
std::pair<double, ParamSet> value_and_grad(const ScalarObjective& f, const ParamSet& params);

}  // namespace role_forge
