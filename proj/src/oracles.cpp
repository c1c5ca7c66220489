// SPDX-License-Identifier: Apache-2.0

#include "role_forge/oracles.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace role_forge::oracles {

namespace {

std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> v(n);
  double total = 0.0;
  for (auto& x : v) total += (x = e(rng) + 1e-3);
  for (auto& x : v) x /= total;
  return v;
}

// p(rho | o) and p(tau, o) marginals.
struct Marginals {
  std::vector<double> rho_o;  // [rho][o]
  std::vector<double> o;      // [o]
  std::vector<double> tau_o;  // [tau][o]
};

Marginals marginals(const DiscreteJoint& j) {
  Marginals m{std::vector<double>(static_cast<std::size_t>(j.n_rho * j.n_o)), std::vector<double>(static_cast<std::size_t>(j.n_o)),
              std::vector<double>(static_cast<std::size_t>(j.n_tau * j.n_o))};
  for (int r = 0; r < j.n_rho; ++r)
    for (int t = 0; t < j.n_tau; ++t)
      for (int o = 0; o < j.n_o; ++o) {
        const double p = j.at(r, t, o);
        m.rho_o[static_cast<std::size_t>(r * j.n_o + o)] += p;
        m.o[static_cast<std::size_t>(o)] += p;
        m.tau_o[static_cast<std::size_t>(t * j.n_o + o)] += p;
      }
  return m;
}

}  // namespace

DiscreteJoint random_joint(std::mt19937_64& rng, int n_rho, int n_tau, int n_o) {
  DiscreteJoint j{n_rho, n_tau, n_o, {}};
  j.p = random_simplex(rng, static_cast<std::size_t>(n_rho * n_tau * n_o));
  return j;
}

double conditional_mutual_information(const DiscreteJoint& j) {
  const Marginals m = marginals(j);
  double mi = 0.0;
  for (int r = 0; r < j.n_rho; ++r)
    for (int t = 0; t < j.n_tau; ++t)
      for (int o = 0; o < j.n_o; ++o) {
        const double p = j.at(r, t, o);
        if (p <= 0.0) continue;
        // p(r,t,o) p(o) / (p(r,o) p(t,o))
        mi += p * std::log(p * m.o[static_cast<std::size_t>(o)] /
                           (m.rho_o[static_cast<std::size_t>(r * j.n_o + o)] *
                            m.tau_o[static_cast<std::size_t>(t * j.n_o + o)]));
      }
  return mi;
}

Conditional true_posterior(const DiscreteJoint& j) {
  const Marginals m = marginals(j);
  Conditional c{j.n_rho, j.n_tau, j.n_o, std::vector<double>(j.p.size())};
  for (int t = 0; t < j.n_tau; ++t)
    for (int o = 0; o < j.n_o; ++o)
      for (int r = 0; r < j.n_rho; ++r)
        c.q[static_cast<std::size_t>((t * j.n_o + o) * j.n_rho + r)] =
            j.at(r, t, o) / m.tau_o[static_cast<std::size_t>(t * j.n_o + o)];
  return c;
}

Conditional random_conditional(const DiscreteJoint& j, std::mt19937_64& rng) {
  Conditional c{j.n_rho, j.n_tau, j.n_o, {}};
  for (int k = 0; k < j.n_tau * j.n_o; ++k) {
    const auto row = random_simplex(rng, static_cast<std::size_t>(j.n_rho));
    c.q.insert(c.q.end(), row.begin(), row.end());
  }
  return c;
}

double variational_bound(const DiscreteJoint& j, const Conditional& q) {
  const Marginals m = marginals(j);
  double bound = 0.0;
  for (int r = 0; r < j.n_rho; ++r)
    for (int t = 0; t < j.n_tau; ++t)
      for (int o = 0; o < j.n_o; ++o) {
        const double p = j.at(r, t, o);
        if (p <= 0.0) continue;
        const double p_r_given_o =
            m.rho_o[static_cast<std::size_t>(r * j.n_o + o)] / m.o[static_cast<std::size_t>(o)];
        bound += p * (std::log(q.at(r, t, o)) - std::log(p_r_given_o));
      }
  return bound;
}

double kl_closed_form(const Vec3& mu_p, const Vec3& var_p, const Vec3& mu_q, const Vec3& var_q) {
  double kl = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double d = mu_p[k] - mu_q[k];
    kl += 0.5 * (std::log(var_q[k] / var_p[k]) + (var_p[k] + d * d) / var_q[k] - 1.0);
  }
  return kl;
}

double entropy_closed_form(const Vec3& var) {
  double h = 0.0;
  for (double v : var) h += 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * v);
  return h;
}

MonteCarlo kl_monte_carlo(const Vec3& mu_p, const Vec3& var_p, const Vec3& mu_q, const Vec3& var_q, int samples,
                          std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  auto log_density = [](const Vec3& mu, const Vec3& var, const Vec3& x) {
    double lp = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double d = x[k] - mu[k];
      lp += -0.5 * (std::log(2.0 * std::numbers::pi * var[k]) + d * d / var[k]);
    }
    return lp;
  };
  double sum = 0.0, sum_sq = 0.0;
  for (int s = 0; s < samples; ++s) {
    Vec3 x;
    for (int k = 0; k < 3; ++k) x[k] = mu_p[k] + std::sqrt(var_p[k]) * normal(rng);
    const double v = log_density(mu_p, var_p, x) - log_density(mu_q, var_q, x);
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / samples;
  const double var = std::max(0.0, sum_sq / samples - mean * mean);
  return {mean, std::sqrt(var / samples)};
}

double mean_of_min(std::span<const double> x, double u) {
  double s = 0.0;
  for (double v : x) s += std::min(v, u);
  return s / static_cast<double>(x.size());
}

double min_of_mean(std::span<const double> x, double u) {
  double s = 0.0;
  for (double v : x) s += v;
  return std::min(s / static_cast<double>(x.size()), u);
}

std::array<std::array<double, 2>, 2> value_iteration(const TwoStateMdp& mdp, double gamma, double tol) {
  std::array<std::array<double, 2>, 2> q{};
  for (int it = 0; it < 100000; ++it) {
    std::array<std::array<double, 2>, 2> next{};
    double delta = 0.0;
    for (int s = 0; s < 2; ++s)
      for (int a = 0; a < 2; ++a) {
        const int s2 = mdp.next[s][a];
        next[s][a] = mdp.reward[s][a] + gamma * std::max(q[s2][0], q[s2][1]);
        delta = std::max(delta, std::abs(next[s][a] - q[s][a]));
      }
    q = next;
    if (delta < tol) break;
  }
  return q;
}

// ---------------------------------------------------------------------------

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::RowVectorXd;

Mat mat(const ParamSet& p, const std::string& name) {
  const Tensor& t = p.get(name);
  const int rows = t.shape.rank() == 1 ? 1 : t.shape[0];
  return Eigen::Map<const Mat>(t.data.data(), rows, t.shape.cols());
}

RowVec vec(const ParamSet& p, const std::string& name) {
  const Tensor& t = p.get(name);
  return Eigen::Map<const RowVec>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}

RowVec dense(const ParamSet& p, const std::string& layer, const RowVec& x) {
  return x * mat(p, layer + "/W") + vec(p, layer + "/b");
}

RowVec relu(RowVec x) { return x.cwiseMax(0.0); }
RowVec sigmoid(const RowVec& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

// Per-agent utilities over one episode: q[t][i] is a row over actions,
// for t = 0 .. steps (the final row feeds the bootstrap).
std::vector<std::vector<RowVec>> agent_utilities(const ModelSpec& spec, const ParamSet& p, const Episode& e) {
  const int n = spec.n_agents;
  std::vector<std::vector<RowVec>> q(static_cast<std::size_t>(e.steps + 1), std::vector<RowVec>(static_cast<std::size_t>(n)));
  for (int i = 0; i < n; ++i) {
    const std::string net = spec.ablation == Ablation::kQmixNps ? "agent_" + std::to_string(i) : "agent";
    const std::string gru = net + "/gru";
    RowVec h = RowVec::Zero(spec.hidden_dim);
    for (int t = 0; t <= e.steps; ++t) {
      RowVec in = RowVec::Zero(spec.input_dim());
      for (int k = 0; k < spec.obs_dim; ++k)
        in[k] = e.obs[(static_cast<std::size_t>(t) * n + i) * spec.obs_dim + k];
      int col = spec.obs_dim;
      if (spec.input_last_action) {
        if (t > 0) in[col + e.actions[(static_cast<std::size_t>(t) - 1) * n + i]] = 1.0;
        col += spec.n_actions;
      }
      if (spec.input_agent_id) in[col + i] = 1.0;

      const RowVec x = relu(dense(p, net + "/fc1", in));
      const RowVec r = sigmoid(x * mat(p, gru + "/W_r") + h * mat(p, gru + "/U_r") + vec(p, gru + "/b_r"));
      const RowVec z = sigmoid(x * mat(p, gru + "/W_z") + h * mat(p, gru + "/U_z") + vec(p, gru + "/b_z"));
      const RowVec c = (x * mat(p, gru + "/W_h") + r.cwiseProduct(h) * mat(p, gru + "/U_h") + vec(p, gru + "/b_h"))
                           .array()
                           .tanh()
                           .matrix();
      h = (RowVec::Ones(spec.hidden_dim) - z).cwiseProduct(h) + z.cwiseProduct(c);
      q[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] = dense(p, net + "/head", h);
    }
  }
  return q;
}

double mixed(const ParamSet& p, const RowVec& state, const RowVec& q_locals) {
  const int n = static_cast<int>(q_locals.size());
  const int e = 32;
  const RowVec w1 = dense(p, "mixer/hyper_w1/fc2", relu(dense(p, "mixer/hyper_w1/fc1", state))).cwiseAbs();
  const RowVec b1 = dense(p, "mixer/hyper_b1/fc1", state);
  const RowVec w2 = dense(p, "mixer/hyper_w2/fc2", relu(dense(p, "mixer/hyper_w2/fc1", state))).cwiseAbs();
  const RowVec b2 = dense(p, "mixer/hyper_b2/fc2", relu(dense(p, "mixer/hyper_b2/fc1", state)));
  const Mat W1 = Eigen::Map<const Mat>(w1.data(), n, e);
  const RowVec hidden = relu(q_locals * W1 + b1);
  return hidden.dot(w2) + b2[0];
}

}  // namespace

double plain_qmix_loss(const ModelSpec& spec, const ParamSet& params, const ParamSet& target,
                       std::span<const Episode> episodes, double gamma) {
  if (uses_roles(spec.ablation)) throw std::invalid_argument("plain_qmix_loss: role-conditioned ablation");
  const int n = spec.n_agents;
  double sum = 0.0;
  double count = 0.0;
  for (const Episode& e : episodes) {
    const auto q = agent_utilities(spec, params, e);
    const auto q_next = agent_utilities(spec, target, e);
    auto state = [&](int t) {
      return RowVec(Eigen::Map<const RowVec>(e.states.data() + static_cast<std::size_t>(t) * spec.state_dim, spec.state_dim));
    };
    for (int t = 0; t < e.steps; ++t) {
      RowVec taken(n), best(n);
      for (int i = 0; i < n; ++i) {
        taken[i] = q[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)][e.actions[static_cast<std::size_t>(t) * n + i]];
        best[i] = q_next[static_cast<std::size_t>(t) + 1][static_cast<std::size_t>(i)].maxCoeff();
      }
      const double r = e.rewards[static_cast<std::size_t>(t)];
      const double y = e.terminated[static_cast<std::size_t>(t)] ? r : r + gamma * mixed(target, state(t + 1), best);
      const double err = mixed(params, state(t), taken) - y;
      sum += err * err;
      count += 1.0;
    }
  }
  if (count == 0.0) throw std::invalid_argument("plain_qmix_loss: no steps");
  return sum / count;
}

}  // namespace role_forge::oracles
