// SPDX-License-Identifier: Apache-2.0

#include "role_forge/model.hpp"

#include <functional>
#include <stdexcept>

namespace role_forge {

namespace {

const std::string kSharedNet = "agent";

using AgentFn = std::function<Var(const std::string& net, std::span<const Var> rows)>;

/// Runs `fn` separately on each agent's rows (row r belongs to agent r % n)
/// and restores the original row order.
Var per_agent(Tape& tape, const ModelSpec& spec, std::span<const Var> inputs, const AgentFn& fn) {
  const int n = spec.n_agents;
  const int rows = inputs.front().shape().rows();
  const int per = rows / n;
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::vector<int> idx(static_cast<std::size_t>(per));
    for (int k = 0; k < per; ++k) idx[static_cast<std::size_t>(k)] = k * n + i;
    std::vector<Var> subs;
    for (Var v : inputs) subs.push_back(tape.gather_rows(v, idx));
    outs.push_back(fn(utility_net(spec, i), subs));
  }
  Var stacked = tape.concat_rows(outs);
  std::vector<int> perm(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) perm[static_cast<std::size_t>(r)] = (r % n) * per + r / n;
  return tape.gather_rows(stacked, std::move(perm));
}

Var embed(ParamBinder& bind, const ModelSpec& spec, Var input) {
  if (spec.ablation != Ablation::kQmixNps) return mixing::utility_embed(bind, kSharedNet, input);
  const Var ins[] = {input};
  return per_agent(bind.tape(), spec, ins, [&](const std::string& net, std::span<const Var> rows) {
    return mixing::utility_embed(bind, net, rows[0]);
  });
}

Var recur(ParamBinder& bind, const ModelSpec& spec, Var x, Var h_prev) {
  if (spec.ablation != Ablation::kQmixNps) return nn::gru_cell(bind, kSharedNet + "/gru", x, h_prev);
  const Var ins[] = {x, h_prev};
  return per_agent(bind.tape(), spec, ins, [&](const std::string& net, std::span<const Var> rows) {
    return nn::gru_cell(bind, net + "/gru", rows[0], rows[1]);
  });
}

struct Heads {
  Var q;
  roles::RoleDistVars role;
  Var rho;
};

Heads heads(ParamBinder& bind, const ModelSpec& spec, Var h, Var obs, Var noise) {
  Tape& tape = bind.tape();
  Heads out;
  if (uses_roles(spec.ablation)) {
    out.role = roles::role_encode(bind, obs);
    out.rho = noise.valid() ? roles::role_sample(tape, out.role, noise) : out.role.mu;
    const auto head = roles::role_decode(bind, out.rho, spec.hidden_dim, spec.n_actions);
    out.q = mixing::generated_head_q(tape, h, head);
  } else if (spec.ablation == Ablation::kQmix) {
    out.q = mixing::shared_head_q(bind, kSharedNet, h);
  } else {
    const Var ins[] = {h};
    out.q = per_agent(tape, spec, ins, [&](const std::string& net, std::span<const Var> rows) {
      return mixing::shared_head_q(bind, net, rows[0]);
    });
  }
  return out;
}

void fill_input_row(const ModelSpec& spec, double* row, const double* obs, int last_action, int agent) {
  std::copy(obs, obs + spec.obs_dim, row);
  int col = spec.obs_dim;
  if (spec.input_last_action) {
    if (last_action >= 0) row[col + last_action] = 1.0;
    col += spec.n_actions;
  }
  if (spec.input_agent_id) row[col + agent] = 1.0;
}

}  // namespace

Ablation parse_ablation(const std::string& name) {
  if (name == "roma") return Ablation::kRoma;
  if (name == "td_only") return Ablation::kTdOnly;
  if (name == "td_plus_li") return Ablation::kTdPlusLi;
  if (name == "td_plus_ld") return Ablation::kTdPlusLd;
  if (name == "qmix") return Ablation::kQmix;
  if (name == "qmix_nps") return Ablation::kQmixNps;
  throw std::invalid_argument("unknown ablation '" + name +
                              "' (expected roma, td_only, td_plus_li, td_plus_ld, qmix or qmix_nps)");
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kRoma: return "roma";
    case Ablation::kTdOnly: return "td_only";
    case Ablation::kTdPlusLi: return "td_plus_li";
    case Ablation::kTdPlusLd: return "td_plus_ld";
    case Ablation::kQmix: return "qmix";
    case Ablation::kQmixNps: return "qmix_nps";
  }
  return "?";
}

bool uses_roles(Ablation a) { return a != Ablation::kQmix && a != Ablation::kQmixNps; }

ModelSpec make_model_spec(const envs::EnvContract& contract, Ablation ablation, bool input_last_action,
                          bool input_agent_id) {
  ModelSpec spec;
  spec.n_agents = contract.n_agents;
  spec.obs_dim = contract.obs_dim;
  spec.state_dim = contract.state_dim;
  spec.n_actions = contract.n_actions;
  spec.input_last_action = input_last_action;
  spec.input_agent_id = input_agent_id;
  spec.ablation = ablation;
  return spec;
}

std::string utility_net(const ModelSpec& spec, int agent) {
  return spec.ablation == Ablation::kQmixNps ? kSharedNet + "_" + std::to_string(agent) : kSharedNet;
}

ParamSet init_model(const ModelSpec& spec, std::uint64_t seed) {
  nn::Rng rng(seed);
  ParamSet params;
  const mixing::UtilityDims dims{spec.input_dim(), spec.embed_dim, spec.hidden_dim, spec.n_actions};
  if (spec.ablation == Ablation::kQmixNps) {
    for (int i = 0; i < spec.n_agents; ++i) mixing::init_utility(params, utility_net(spec, i), dims, true, rng);
  } else {
    mixing::init_utility(params, kSharedNet, dims, !uses_roles(spec.ablation), rng);
  }
  if (uses_roles(spec.ablation)) {
    roles::init_role_encoder(params, spec.obs_dim, rng);
    roles::init_role_decoder(params, spec.hidden_dim, spec.n_actions, rng);
    roles::init_trajectory_posterior(params, spec.hidden_dim, spec.obs_dim, rng);
    roles::init_dissimilarity(params, spec.hidden_dim, rng);
  }
  mixing::init_mixer(params, spec.state_dim, spec.n_agents, rng);
  return params;
}

Tensor utility_inputs(const ModelSpec& spec, const EpisodeBatch& batch, int t) {
  const int n = spec.n_agents;
  Tensor out(Shape{batch.batch * n, spec.input_dim()}, 0.0);
  for (int b = 0; b < batch.batch; ++b) {
    for (int i = 0; i < n; ++i) {
      int last = -1;
      if (t > 0 && t - 1 < batch.max_steps)
        last = batch.actions[batch.step_index(b, t - 1) * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)];
      double* row = out.data.data() + static_cast<std::size_t>(b * n + i) * static_cast<std::size_t>(spec.input_dim());
      fill_input_row(spec, row, batch.obs.data() + batch.obs_index(b, t, i), last, i);
    }
  }
  return out;
}

UnrollOutput unroll(ParamBinder& bind, const ModelSpec& spec, const EpisodeBatch& batch, int steps, bool use_noise) {
  if (steps < 1 || steps > batch.max_steps + 1)
    throw std::invalid_argument("unroll: steps " + std::to_string(steps) + " outside [1, " +
                                std::to_string(batch.max_steps + 1) + "]");
  if (batch.n_agents != spec.n_agents || batch.obs_dim != spec.obs_dim || batch.n_actions != spec.n_actions)
    throw ad::ShapeError("unroll: batch layout does not match the model");
  Tape& tape = bind.tape();
  const int n = spec.n_agents;
  const int per_step = batch.batch * n;
  const int rows = steps * per_step;
  const auto in_dim = static_cast<std::size_t>(spec.input_dim());
  const auto od = static_cast<std::size_t>(spec.obs_dim);

  Tensor inputs(Shape{rows, spec.input_dim()});
  Tensor obs(Shape{rows, spec.obs_dim});
  Tensor noise(Shape{rows, roles::kRoleDim});
  for (int t = 0; t < steps; ++t) {
    const Tensor step_in = utility_inputs(spec, batch, t);
    std::copy(step_in.data.begin(), step_in.data.end(),
              inputs.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(t * per_step) * in_dim));
    for (int b = 0; b < batch.batch; ++b) {
      for (int i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>((t * batch.batch + b) * n + i);
        const double* o = batch.obs.data() + batch.obs_index(b, t, i);
        std::copy(o, o + od, obs.data.begin() + static_cast<std::ptrdiff_t>(r * od));
        const std::size_t nz = batch.obs_index(b, t, i) / od * roles::kRoleDim;
        for (int k = 0; k < roles::kRoleDim; ++k)
          noise.data[r * roles::kRoleDim + static_cast<std::size_t>(k)] = batch.noise[nz + static_cast<std::size_t>(k)];
      }
    }
  }

  UnrollOutput out;
  out.steps = steps;
  out.batch = batch.batch;
  out.n_agents = n;
  out.obs = tape.constant(std::move(obs));
  Var x = embed(bind, spec, tape.constant(std::move(inputs)));

  Var h = tape.constant(Tensor(Shape{per_step, spec.hidden_dim}, 0.0));
  std::vector<Var> hs, h_prevs;
  hs.reserve(static_cast<std::size_t>(steps));
  h_prevs.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    h_prevs.push_back(h);
    h = recur(bind, spec, tape.slice_rows(x, t * per_step, (t + 1) * per_step), h);
    hs.push_back(h);
  }
  Var h_all = steps == 1 ? hs.front() : tape.concat_rows(hs);
  out.h_prev = steps == 1 ? h_prevs.front() : tape.concat_rows(h_prevs);

  Heads hd = heads(bind, spec, h_all, out.obs, use_noise ? tape.constant(std::move(noise)) : Var{});
  out.q = hd.q;
  out.role = hd.role;
  out.rho = hd.rho;
  return out;
}

ActOutput act_forward(const ParamSet& params, const ModelSpec& spec, const std::vector<std::vector<double>>& obs,
                      const std::vector<int>& last_actions, const Tensor& h_prev, const std::vector<double>& noise) {
  const int n = spec.n_agents;
  if (static_cast<int>(obs.size()) != n || static_cast<int>(last_actions.size()) != n)
    throw ad::ShapeError("act_forward: expected " + std::to_string(n) + " agents");
  if (!noise.empty() && noise.size() != static_cast<std::size_t>(n * roles::kRoleDim))
    throw ad::ShapeError("act_forward: noise must hold n * 3 values");
  Tape tape;
  ParamBinder bind(tape, params, false);
  Tensor inputs(Shape{n, spec.input_dim()}, 0.0);
  Tensor obs_t(Shape{n, spec.obs_dim});
  for (int i = 0; i < n; ++i) {
    const auto& o = obs[static_cast<std::size_t>(i)];
    if (static_cast<int>(o.size()) != spec.obs_dim) throw ad::ShapeError("act_forward: observation width mismatch");
    fill_input_row(spec, inputs.data.data() + static_cast<std::size_t>(i * spec.input_dim()), o.data(),
                   last_actions[static_cast<std::size_t>(i)], i);
    std::copy(o.begin(), o.end(), obs_t.data.begin() + static_cast<std::ptrdiff_t>(i * spec.obs_dim));
  }
  Var x = embed(bind, spec, tape.constant(std::move(inputs)));
  Var h = recur(bind, spec, x, tape.constant(h_prev));
  Var noise_v = noise.empty() ? Var{} : tape.constant(Tensor(Shape{n, roles::kRoleDim}, noise));
  Heads hd = heads(bind, spec, h, tape.constant(std::move(obs_t)), noise_v);

  ActOutput out;
  out.h = tape.value_tensor(h);
  const auto& q = hd.q.value();
  for (int i = 0; i < n; ++i) {
    out.q.emplace_back(q.begin() + i * spec.n_actions, q.begin() + (i + 1) * spec.n_actions);
    if (uses_roles(spec.ablation)) out.roles.push_back(hd.role.row(i));
  }
  return out;
}

Var mixed_values(ParamBinder& bind, const ModelSpec& spec, Var q_per_agent, const EpisodeBatch& batch, int first_step,
                 int steps) {
  const auto sd = static_cast<std::size_t>(spec.state_dim);
  Tensor states(Shape{steps * batch.batch, spec.state_dim});
  for (int t = 0; t < steps; ++t)
    for (int b = 0; b < batch.batch; ++b) {
      const double* s = batch.states.data() +
                        (static_cast<std::size_t>(b) * static_cast<std::size_t>(batch.max_steps + 1) +
                         static_cast<std::size_t>(first_step + t)) * sd;
      std::copy(s, s + sd, states.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(t * batch.batch + b) * sd));
    }
  return mixing::mix(bind, q_per_agent, bind.tape().constant(std::move(states)));
}

}  // namespace role_forge
