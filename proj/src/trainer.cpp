// SPDX-License-Identifier: Apache-2.0

#include "role_forge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <thread>

namespace role_forge {

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* field) {
    if (!ok) throw std::invalid_argument(std::string("config: ") + field + " out of range");
  };
  require(gamma >= 0.0 && gamma <= 1.0, "gamma");
  require(lr > 0.0, "lr");
  require(rms_alpha > 0.0 && rms_alpha < 1.0, "rms_alpha");
  require(rms_eps > 0.0, "rms_eps");
  require(lambda_i >= 0.0, "lambda_i");
  require(lambda_d >= 0.0, "lambda_d");
  require(eps_start >= 0.0 && eps_start <= 1.0, "eps_start");
  require(eps_end >= 0.0 && eps_end <= eps_start, "eps_end");
  require(eps_anneal_steps > 0, "eps_anneal_steps");
  require(n_parallel > 0, "n_parallel");
  require(batch_episodes > 0, "batch_episodes");
  require(buffer_capacity >= batch_episodes, "buffer_capacity");
  require(target_interval > 0, "target_interval");
  require(updates_per_round > 0, "updates_per_round");
  require(role_dim == roles::kRoleDim, "role_dim (only 3 is supported)");
  require(total_env_steps > 0, "total_env_steps");
  require(eval_interval >= 0, "eval_interval");
  require(eval_episodes > 0, "eval_episodes");
}

LossOptions loss_options(const TrainConfig& config) {
  LossOptions o;
  o.gamma = config.gamma;
  o.lambda_i = config.lambda_i;
  o.lambda_d = config.lambda_d;
  switch (config.ablation) {
    case Ablation::kRoma: break;
    case Ablation::kTdPlusLi: o.lambda_d = 0.0; break;
    case Ablation::kTdPlusLd: o.lambda_i = 0.0; break;
    case Ablation::kTdOnly:
    case Ablation::kQmix:
    case Ablation::kQmixNps:
      o.lambda_i = 0.0;
      o.lambda_d = 0.0;
      break;
  }
  return o;
}

double epsilon(const TrainConfig& config, std::int64_t env_steps) {
  const double frac = static_cast<double>(env_steps) / static_cast<double>(config.eps_anneal_steps);
  return std::max(config.eps_end, config.eps_start - (config.eps_start - config.eps_end) * frac);
}

double epsilon(std::int64_t env_steps) { return epsilon(TrainConfig{}, env_steps); }

OptimizerState make_optimizer(const ParamSet& params) { return OptimizerState{params.zeros_like()}; }

bool rmsprop_step(ParamSet& params, const ParamSet& grads, OptimizerState& state, double lr, double alpha, double eps) {
  if (!params.same_layout(grads) || !params.same_layout(state.v))
    throw std::invalid_argument("rmsprop_step: parameter, gradient and state layouts differ");
  if (!grads.all_finite()) {
    std::cerr << "rmsprop: non-finite gradient, update skipped\n";
    return false;
  }
  auto g_it = grads.begin();
  auto v_it = state.v.begin();
  for (auto& [name, theta] : params) {
    const auto& g = g_it->second.data;
    auto& v = v_it->second.data;
    for (std::size_t k = 0; k < theta.data.size(); ++k) {
      v[k] = alpha * v[k] + (1.0 - alpha) * g[k] * g[k];
      theta.data[k] -= lr * g[k] / (std::sqrt(v[k]) + eps);
    }
    ++g_it;
    ++v_it;
  }
  params.bump_version();
  return true;
}

bool target_sync(const ParamSet& params, ParamSet& target, std::uint64_t update, int interval) {
  if (interval <= 0 || update == 0 || update % static_cast<std::uint64_t>(interval) != 0) return false;
  target = params;
  return true;
}

int greedy_action(const std::vector<double>& q) {
  if (q.empty()) throw std::invalid_argument("greedy_action: no actions");
  // max_element keeps the first maximizer, i.e. the lowest index.
  return static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
}

std::vector<int> select_actions(const std::vector<std::vector<double>>& q, double eps, std::mt19937_64& rng) {
  std::vector<int> out;
  out.reserve(q.size());
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (const auto& qi : q) {
    const double u = coin(rng);
    std::uniform_int_distribution<int> any(0, static_cast<int>(qi.size()) - 1);
    const int random_action = any(rng);
    out.push_back(u < eps ? random_action : greedy_action(qi));
  }
  return out;
}

RolloutRecord run_episode(const ParamSet& params, const ModelSpec& spec, envs::EnvKind kind, ActMode mode,
                          const EpsilonSchedule& eps, std::uint64_t seed) {
  auto env = envs::make_env(kind);
  const auto& c = env->contract();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const bool sample_roles = mode == ActMode::kTrain && uses_roles(spec.ablation);

  RolloutRecord rec;
  Episode& e = rec.episode;
  e.n_agents = c.n_agents;
  e.obs_dim = c.obs_dim;
  e.state_dim = c.state_dim;
  e.n_actions = c.n_actions;
  e.seed = seed;

  std::vector<double> noise;
  auto record = [&](const envs::StepResult& s) {
    for (const auto& o : s.obs) e.obs.insert(e.obs.end(), o.begin(), o.end());
    e.states.insert(e.states.end(), s.state.begin(), s.state.end());
    noise.assign(static_cast<std::size_t>(c.n_agents * roles::kRoleDim), 0.0);
    if (sample_roles)
      for (double& z : noise) z = normal(rng);
    e.noise.insert(e.noise.end(), noise.begin(), noise.end());
    e.positions.push_back(env->positions());
  };

  envs::StepResult step = env->reset(seed);
  record(step);
  Tensor h(Shape{c.n_agents, spec.hidden_dim}, 0.0);
  std::vector<int> last(static_cast<std::size_t>(c.n_agents), -1);
  for (int t = 0; t < c.horizon && !step.done; ++t) {
    rec.hidden.push_back(h);
    ActOutput out = act_forward(params, spec, step.obs, last, h, sample_roles ? noise : std::vector<double>{});
    rec.roles.push_back(out.roles);
    const double eps_t = mode == ActMode::kEval ? 0.0 : eps(t);
    last = select_actions(out.q, eps_t, rng);
    h = std::move(out.h);
    step = env->step(last);
    e.actions.insert(e.actions.end(), last.begin(), last.end());
    e.rewards.push_back(step.reward);
    e.terminated.push_back(step.done ? 1 : 0);
    ++e.steps;
    record(step);
  }
  rec.hidden.push_back(h);
  return rec;
}

std::vector<Episode> collect_episodes(const ParamSet& params, const ModelSpec& spec, const TrainConfig& config,
                                      std::int64_t env_steps, const std::vector<std::uint64_t>& seeds) {
  const auto k = static_cast<std::int64_t>(seeds.size());
  std::vector<std::optional<Episode>> results(seeds.size());
  auto work = [&](std::size_t w) {
    try {
      const EpsilonSchedule eps = [&](int t) { return epsilon(config, env_steps + t * k); };
      results[w] = run_episode(params, spec, config.env_kind, ActMode::kTrain, eps, seeds[w]).episode;
    } catch (const std::exception& ex) {
      // Diagnostics go to stderr from the worker; the episode is dropped.
      std::cerr << "rollout worker " << w << " (seed " << seeds[w] << ") failed: " << ex.what() << '\n';
    }
  };
  if (config.single_thread || seeds.size() == 1) {
    for (std::size_t w = 0; w < seeds.size(); ++w) work(w);
  } else {
    std::vector<std::thread> workers;
    workers.reserve(seeds.size());
    for (std::size_t w = 0; w < seeds.size(); ++w) workers.emplace_back(work, w);
    for (auto& th : workers) th.join();
  }
  std::vector<Episode> out;
  for (auto& r : results)
    if (r) out.push_back(std::move(*r));
  return out;
}

EvalResult evaluate(const ParamSet& params, const ModelSpec& spec, envs::EnvKind kind, int episodes,
                    std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
  EvalResult out;
  double successes = 0.0;
  bool has_success = false;
  for (int ep = 0; ep < episodes; ++ep) {
    const auto rec = run_episode(params, spec, kind, ActMode::kEval, [](int) { return 0.0; },
                                 seed + static_cast<std::uint64_t>(ep));
    const double ret = rec.episode.episode_return();
    out.returns.push_back(ret);
    if (auto ok = envs::episode_success(kind, rec.episode.positions, ret)) {
      has_success = true;
      successes += *ok ? 1.0 : 0.0;
    }
    if (!uses_roles(spec.ablation)) continue;
    const auto duties = envs::ground_truth_partition(kind, rec.episode.positions);
    for (int t = 0; t < rec.episode.steps; ++t)
      for (int i = 0; i < spec.n_agents; ++i)
        out.roles.push_back(RoleRecord{ep, t, i, duties[static_cast<std::size_t>(i)],
                                       rec.roles[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)]});
  }
  double sum = 0.0;
  for (double r : out.returns) sum += r;
  out.mean_return = sum / episodes;
  if (has_success) out.success_rate = successes / episodes;
  return out;
}

DissimilarityGap dissimilarity_gap(const ParamSet& params, const ModelSpec& spec, envs::EnvKind kind, int episodes,
                                   std::uint64_t seed) {
  DissimilarityGap gap;
  if (!uses_roles(spec.ablation) || spec.n_agents < 2) return gap;
  const int n = spec.n_agents;
  double between = 0.0, within = 0.0;
  std::size_t n_between = 0, n_within = 0;
  for (int ep = 0; ep < episodes; ++ep) {
    const auto rec = run_episode(params, spec, kind, ActMode::kEval, [](int) { return 0.0; },
                                 seed + static_cast<std::uint64_t>(ep));
    const auto duties = envs::ground_truth_partition(kind, rec.episode.positions);
    std::vector<int> idx_i, idx_j;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) {
          idx_i.push_back(i);
          idx_j.push_back(j);
        }
    for (int t = 0; t < rec.episode.steps; ++t) {
      Tape tape;
      ParamBinder bind(tape, params, false);
      Var h = tape.constant(rec.hidden[static_cast<std::size_t>(t)]);
      Var d = roles::dissimilarity(bind, tape.gather_rows(h, idx_i), tape.gather_rows(h, idx_j));
      const auto& raw = d.value();
      const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
      if (*lo == *hi) continue;
      const auto norm = minmax_normalize(raw);
      for (std::size_t p = 0; p < norm.size(); ++p) {
        if (duties[static_cast<std::size_t>(idx_i[p])] == duties[static_cast<std::size_t>(idx_j[p])]) {
          within += norm[p];
          ++n_within;
        } else {
          between += norm[p];
          ++n_between;
        }
      }
    }
  }
  if (n_between > 0) gap.between = between / static_cast<double>(n_between);
  if (n_within > 0) gap.within = within / static_cast<double>(n_within);
  return gap;
}

Trainer::Trainer(TrainConfig config)
    : config_(std::move(config)),
      spec_(make_model_spec(envs::env_contract(config_.env_kind), config_.ablation, config_.input_last_action,
                            config_.input_agent_id)),
      buffer_(static_cast<std::size_t>(std::max(1, config_.buffer_capacity))) {
  config_.validate();
  state_.params = init_model(spec_, config_.seed);
  state_.target = state_.params;
  state_.optimizer = make_optimizer(state_.params);
  std::seed_seq seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32), 0x524fu};
  state_.rng.seed(seq);
}

LossBreakdown Trainer::loss_on(const EpisodeBatch& batch) const {
  Tape tape;
  ParamBinder bind(tape, state_.params, false);
  return total_loss(bind, spec_, batch, state_.target, loss_options(config_));
}

std::vector<MetricsRow> Trainer::round() {
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(config_.n_parallel));
  for (auto& s : seeds) s = state_.rng();
  auto episodes = collect_episodes(state_.params, spec_, config_, state_.env_steps, seeds);
  for (auto& e : episodes) {
    state_.env_steps += e.steps;
    buffer_.push(std::move(e));
  }
  std::vector<MetricsRow> rows;
  if (buffer_.size() < static_cast<std::size_t>(config_.batch_episodes)) return rows;
  for (int k = 0; k < config_.updates_per_round; ++k) rows.push_back(update());
  return rows;
}

MetricsRow Trainer::update() {
  const auto sample = buffer_.sample(static_cast<std::size_t>(config_.batch_episodes), state_.rng);
  const EpisodeBatch batch = make_batch(sample);
  Tape tape;
  ParamBinder bind(tape, state_.params, true);
  const LossBreakdown loss = total_loss(bind, spec_, batch, state_.target, loss_options(config_));
  if (!std::isfinite(loss.total))
    throw NonFiniteLoss("non-finite loss at update " + std::to_string(state_.updates + 1) + " (l_td " +
                        std::to_string(loss.l_td) + ", l_i " + std::to_string(loss.l_i) + ", l_d " +
                        std::to_string(loss.l_d) + ")");
  tape.backward(loss.total_var);
  rmsprop_step(state_.params, bind.gradients(), state_.optimizer, config_.lr, config_.rms_alpha, config_.rms_eps);
  ++state_.updates;
  target_sync(state_.params, state_.target, state_.updates, config_.target_interval);

  MetricsRow row;
  row.update = state_.updates;
  row.env_steps = state_.env_steps;
  row.l_td = loss.l_td;
  row.l_i = loss.l_i;
  row.l_d = loss.l_d;
  row.total = loss.total;
  row.eps = epsilon(config_, state_.env_steps);
  if (config_.eval_interval > 0 && state_.updates % static_cast<std::uint64_t>(config_.eval_interval) == 0) {
    const std::uint64_t eval_seed = config_.seed * 7919 + state_.updates;
    const auto ev = evaluate(state_.params, spec_, config_.env_kind, config_.eval_episodes, eval_seed);
    row.eval_return = ev.mean_return;
    row.eval_success = ev.success_rate;
    const auto gap = dissimilarity_gap(state_.params, spec_, config_.env_kind, 1, eval_seed);
    row.between_d = gap.between;
    row.within_d = gap.within;
  }
  return row;
}

void Trainer::run(const std::function<void(const MetricsRow&)>& on_update) {
  while (!done()) {
    for (const auto& row : round())
      if (on_update) on_update(row);
  }
}

}  // namespace role_forge
