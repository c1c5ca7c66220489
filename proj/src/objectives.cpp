// SPDX-License-Identifier: Apache-2.0

#include "role_forge/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace role_forge {

std::vector<double> minmax_normalize(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("minmax_normalize: empty input");
  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("minmax_normalize: non-finite input");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  std::vector<double> out(values.size(), 0.0);
  if (*hi == *lo) return out;
  const double range = *hi - *lo;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / range;
  return out;
}

std::vector<double> t_major_mask(const EpisodeBatch& batch) {
  std::vector<double> m(static_cast<std::size_t>(batch.max_steps * batch.batch));
  for (int t = 0; t < batch.max_steps; ++t)
    for (int b = 0; b < batch.batch; ++b)
      m[static_cast<std::size_t>(t * batch.batch + b)] = batch.mask[batch.step_index(b, t)];
  return m;
}

Var squared_td_error(Tape& tape, Var q_tot, const std::vector<double>& targets, const std::vector<double>& mask) {
  const int rows = q_tot.shape().rows();
  if (static_cast<int>(targets.size()) != rows || static_cast<int>(mask.size()) != rows)
    throw ad::ShapeError("squared_td_error: " + std::to_string(rows) + " values vs " + std::to_string(targets.size()) +
                         " targets / " + std::to_string(mask.size()) + " mask entries");
  double count = 0.0;
  for (double m : mask) count += m;
  if (count <= 0.0) throw std::invalid_argument("td loss: batch holds no valid steps");
  Var err = tape.sub(q_tot, tape.constant(Tensor(Shape{rows, 1}, targets)));
  Var masked = tape.mul(tape.square(err), tape.constant(Tensor(Shape{rows, 1}, mask)));
  return tape.affine(tape.sum(masked), 1.0 / count, 0.0);
}

std::vector<double> td_targets(const ModelSpec& spec, const EpisodeBatch& batch, const ParamSet& target_params,
                               double gamma) {
  const int T = batch.max_steps;
  const int B = batch.batch;
  Tape tape;
  ParamBinder bind(tape, target_params, false);
  const UnrollOutput next = unroll(bind, spec, batch, T + 1, true);
  Var best = tape.reshape(tape.max_cols(next.q), Shape{(T + 1) * B, spec.n_agents});
  Var v_next = mixed_values(bind, spec, tape.slice_rows(best, B, (T + 1) * B), batch, 1, T);
  const auto& v = v_next.value();
  std::vector<double> y(static_cast<std::size_t>(T * B));
  for (int t = 0; t < T; ++t)
    for (int b = 0; b < B; ++b) {
      const std::size_t s = batch.step_index(b, t);
      const auto k = static_cast<std::size_t>(t * B + b);
      y[k] = batch.terminated[s] > 0.5 ? batch.rewards[s] : batch.rewards[s] + gamma * v[k];
    }
  return y;
}

Var chosen_q_tot(ParamBinder& bind, const ModelSpec& spec, const EpisodeBatch& batch, const UnrollOutput& online) {
  Tape& tape = bind.tape();
  const int T = batch.max_steps;
  const int B = batch.batch;
  const int n = spec.n_agents;
  if (online.steps < T) throw std::invalid_argument("chosen_q_tot: unroll shorter than the batch");
  std::vector<int> taken(static_cast<std::size_t>(T * B * n));
  for (int t = 0; t < T; ++t)
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < n; ++i)
        taken[static_cast<std::size_t>((t * B + b) * n + i)] =
            batch.actions[batch.step_index(b, t) * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)];
  Var q = online.steps == T ? online.q : tape.slice_rows(online.q, 0, T * B * n);
  Var q_taken = tape.reshape(tape.select_cols(q, std::move(taken)), Shape{T * B, n});
  return mixed_values(bind, spec, q_taken, batch, 0, T);
}

Var td_loss(ParamBinder& bind, const ModelSpec& spec, const EpisodeBatch& batch, const ParamSet& target_params,
            double gamma, const UnrollOutput& online) {
  if (batch.batch == 0 || batch.max_steps == 0) throw std::invalid_argument("td loss: empty batch");
  const auto targets = td_targets(spec, batch, target_params, gamma);
  return squared_td_error(bind.tape(), chosen_q_tot(bind, spec, batch, online), targets, t_major_mask(batch));
}

namespace {

std::vector<double> agent_rows_mask(const EpisodeBatch& batch, int steps) {
  const auto step_mask = t_major_mask(batch);
  std::vector<double> m;
  m.reserve(static_cast<std::size_t>(steps * batch.batch * batch.n_agents));
  for (int s = 0; s < steps * batch.batch; ++s)
    for (int i = 0; i < batch.n_agents; ++i) m.push_back(step_mask[static_cast<std::size_t>(s)]);
  return m;
}

roles::RoleDistVars posterior(ParamBinder& bind, const UnrollOutput& online) {
  return roles::trajectory_posterior(bind, bind.tape().detach(online.h_prev), online.obs);
}

}  // namespace

Var loss_identifiable(ParamBinder& bind, const EpisodeBatch& batch, const UnrollOutput& online) {
  if (!online.role.mu.valid()) throw std::logic_error("loss_identifiable: the model has no role machinery");
  Tape& tape = bind.tape();
  const auto mask = agent_rows_mask(batch, online.steps);
  double count = 0.0;
  for (double m : mask) count += m;
  if (count <= 0.0) throw std::invalid_argument("identifiability loss: batch holds no valid steps");
  Var kl = roles::gaussian_kl(tape, online.role, posterior(bind, online));
  Var masked = tape.mul(kl, tape.constant(Tensor(Shape{kl.shape().rows(), 1}, mask)));
  return tape.affine(tape.sum(masked), 1.0 / count, 0.0);
}

std::pair<Var, Var> pair_terms(ParamBinder& bind, const UnrollOutput& online) {
  Tape& tape = bind.tape();
  const int n = online.n_agents;
  const int slices = online.steps * online.batch;
  const int pairs = n * (n - 1);
  std::vector<int> idx_i, idx_j;
  idx_i.reserve(static_cast<std::size_t>(slices * pairs));
  idx_j.reserve(static_cast<std::size_t>(slices * pairs));
  for (int s = 0; s < slices; ++s)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) {
          idx_i.push_back(s * n + i);
          idx_j.push_back(s * n + j);
        }
  // The posterior enters the cross log-densities as a fixed density: only the
  // role (through rho) and the dissimilarity net are shaped by this loss. The
  // posterior is fitted by the identifiability loss alone.
  auto post = posterior(bind, online);
  post = {tape.detach(post.mu), tape.detach(post.sigma2)};
  const roles::RoleDistVars post_j{tape.gather_rows(post.mu, idx_j), tape.gather_rows(post.sigma2, idx_j)};
  Var c = roles::gaussian_log_prob(tape, post_j, tape.gather_rows(online.rho, idx_i));
  Var h = tape.detach(online.h_prev);
  Var d = roles::dissimilarity(bind, tape.gather_rows(h, idx_i), tape.gather_rows(h, idx_j));
  return {tape.reshape(c, Shape{slices, pairs}), tape.reshape(d, Shape{slices, pairs})};
}

Var normalize_per_step(Tape& tape, Var x, int batch, const std::vector<double>& row_mask,
                       std::vector<std::pair<double, double>>& stats, bool frozen) {
  const int rows = x.shape().rows();
  const int cols = x.shape().cols();
  const int steps = rows / batch;
  const auto& v = x.value();
  if (frozen && static_cast<int>(stats.size()) != steps)
    throw std::invalid_argument("normalize_per_step: frozen statistics cover " + std::to_string(stats.size()) +
                                " steps, need " + std::to_string(steps));
  if (!frozen) stats.assign(static_cast<std::size_t>(steps), {0.0, 0.0});

  Tensor lo(Shape{rows, cols}), range(Shape{rows, cols}, 1.0), keep(Shape{rows, cols}, 0.0);
  bool any_dropped = false;
  for (int t = 0; t < steps; ++t) {
    auto& [mn, mx] = stats[static_cast<std::size_t>(t)];
    if (!frozen) {
      mn = std::numeric_limits<double>::infinity();
      mx = -std::numeric_limits<double>::infinity();
      for (int b = 0; b < batch; ++b) {
        const int r = t * batch + b;
        if (row_mask[static_cast<std::size_t>(r)] <= 0.0) continue;
        for (int p = 0; p < cols; ++p) {
          const double val = v[static_cast<std::size_t>(r * cols + p)];
          if (!std::isfinite(val)) throw std::runtime_error("specialization loss: non-finite pair term");
          mn = std::min(mn, val);
          mx = std::max(mx, val);
        }
      }
      if (mn > mx) mn = mx = 0.0;  // no valid episode reaches this step
    }
    for (int b = 0; b < batch; ++b) {
      const int r = t * batch + b;
      const bool valid = row_mask[static_cast<std::size_t>(r)] > 0.0;
      any_dropped = any_dropped || !valid;
      for (int p = 0; p < cols; ++p) {
        const auto k = static_cast<std::size_t>(r * cols + p);
        lo.data[k] = mn;
        // A degenerate slice maps to 0: x - min is exactly 0 for its valid entries.
        range.data[k] = mx > mn ? mx - mn : 1.0;
        keep.data[k] = valid ? 1.0 : 0.0;
      }
    }
  }
  Var out = tape.div(tape.sub(x, tape.constant(std::move(lo))), tape.constant(std::move(range)));
  return any_dropped ? tape.mul(out, tape.constant(std::move(keep))) : out;
}

Var specialize_core(Tape& tape, Var c_norm, Var d_norm, const std::vector<double>& slice_mask) {
  if (!(c_norm.shape() == d_norm.shape()))
    throw ad::ShapeError("specialize_core: " + c_norm.shape().str() + " vs " + d_norm.shape().str());
  const int slices = c_norm.shape().rows();
  if (static_cast<int>(slice_mask.size()) != slices) throw ad::ShapeError("specialize_core: mask length mismatch");
  double count = 0.0;
  for (double m : slice_mask) count += m;
  if (count <= 0.0) throw std::invalid_argument("specialization loss: no valid slices");
  Var fro = tape.row_norm(d_norm);
  Var capped = tape.sum_cols(tape.min_scalar(tape.add(c_norm, d_norm), 1.0));
  Var per_slice = tape.mul(tape.sub(fro, capped), tape.constant(Tensor(Shape{slices, 1}, slice_mask)));
  return tape.affine(tape.sum(per_slice), 1.0 / count, 0.0);
}

Var loss_specialize(ParamBinder& bind, const EpisodeBatch& batch, const UnrollOutput& online,
                    const LossOptions& options, LossBreakdown* diagnostics) {
  Tape& tape = bind.tape();
  if (!online.role.mu.valid()) throw std::logic_error("loss_specialize: the model has no role machinery");
  if (online.n_agents < 2) return tape.constant(Tensor::scalar(0.0));
  const auto mask = t_major_mask(batch);
  auto [c, d] = pair_terms(bind, online);

  NormStats local;
  const bool frozen = options.frozen_norm != nullptr;
  if (frozen) local = *options.frozen_norm;
  Var c_norm = normalize_per_step(tape, c, online.batch, mask, local.c, frozen);
  Var d_norm = normalize_per_step(tape, d, online.batch, mask, local.d, frozen);
  if (options.record_norm) *options.record_norm = local;

  if (diagnostics) {
    const int pairs = c_norm.shape().cols();
    diagnostics->c_norm.clear();
    diagnostics->d_norm.clear();
    for (std::size_t s = 0; s < mask.size(); ++s) {
      if (mask[s] <= 0.0) continue;
      for (int p = 0; p < pairs; ++p) {
        diagnostics->c_norm.push_back(c_norm.value()[s * static_cast<std::size_t>(pairs) + static_cast<std::size_t>(p)]);
        diagnostics->d_norm.push_back(d_norm.value()[s * static_cast<std::size_t>(pairs) + static_cast<std::size_t>(p)]);
      }
    }
  }
  return specialize_core(tape, c_norm, d_norm, mask);
}

LossBreakdown total_loss(ParamBinder& bind, const ModelSpec& spec, const EpisodeBatch& batch,
                         const ParamSet& target_params, const LossOptions& options) {
  Tape& tape = bind.tape();
  LossBreakdown out;
  const UnrollOutput online = unroll(bind, spec, batch, batch.max_steps, true);
  Var total = td_loss(bind, spec, batch, target_params, options.gamma, online);
  out.l_td = total.item();
  if (uses_roles(spec.ablation) && options.lambda_i != 0.0) {
    Var li = loss_identifiable(bind, batch, online);
    out.l_i = li.item();
    total = tape.add(total, tape.affine(li, options.lambda_i, 0.0));
  }
  if (uses_roles(spec.ablation) && options.lambda_d != 0.0) {
    Var ld = loss_specialize(bind, batch, online, options, &out);
    out.l_d = ld.item();
    total = tape.add(total, tape.affine(ld, options.lambda_d, 0.0));
  }
  out.total = total.item();
  out.total_var = total;
  return out;
}

}  // namespace role_forge
