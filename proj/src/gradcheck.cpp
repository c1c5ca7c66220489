// SPDX-License-Identifier: Apache-2.0

#include "role_forge/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace role_forge {

namespace {

double evaluate(const ScalarObjective& f, const ParamSet& params) {
  Tape tape;
  ParamBinder bind(tape, params, false);
  return f(bind).item();
}

}  // namespace

std::pair<double, ParamSet> value_and_grad(const ScalarObjective& f, const ParamSet& params) {
  Tape tape;
  ParamBinder bind(tape, params, true);
  Var loss = f(bind);
  tape.backward(loss);
  return {loss.item(), bind.gradients()};
}

GradCheckReport finite_diff_check(const ScalarObjective& f, ParamSet& params, const GradCheckOptions& options) {
  if (!(options.h > 0.0)) throw std::invalid_argument("finite_diff_check: h must be positive");
  const auto [f0, grads] = value_and_grad(f, params);
  if (!std::isfinite(f0)) throw std::runtime_error("finite_diff_check: objective is non-finite at the base point");

  GradCheckReport report;
  const double h = options.h;
  for (auto& [name, tensor] : params) {
    if (options.filter && !options.filter(name)) continue;
    const auto& g = grads.get(name).data;
    for (std::size_t i = 0; i < tensor.size(); i += std::max<std::size_t>(1, options.stride)) {
      const double saved = tensor.data[i];
      tensor.data[i] = saved + h;
      const double fp = evaluate(f, params);
      tensor.data[i] = saved - h;
      const double fm = evaluate(f, params);
      tensor.data[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw std::runtime_error("finite_diff_check: non-finite objective when perturbing " + name + "[" +
                                 std::to_string(i) + "]");
      const double central = (fp - fm) / (2.0 * h);
      const double scale = std::max(1.0, std::fabs(g[i]));
      const double err = std::fabs(central - g[i]) / scale;
      if (err > 1e-6) {
        const double forward = (fp - f0) / h;
        const double backward = (f0 - fm) / h;
        if (std::fabs(forward - backward) / scale > options.kink_tolerance && std::fabs(forward - backward) > err) {
          ++report.skipped_kinks;
          continue;
        }
      }
      ++report.checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace role_forge
