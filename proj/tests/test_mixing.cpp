// SPDX-License-Identifier: Apache-2.0

#include <random>

#include "doctest.h"
#include "role_forge/checks.hpp"
#include "role_forge/gradcheck.hpp"
#include "role_forge/mixing.hpp"
#include "role_forge/model.hpp"

using namespace role_forge;

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(s);
  for (auto& v : t.data) v = n(rng);
  return t;
}

void zero_prefix(ParamSet& p, const std::string& prefix) {
  for (auto& [name, t] : p)
    if (name.rfind(prefix, 0) == 0) std::fill(t.data.begin(), t.data.end(), 0.0);
}

constexpr int kRows = 3;
constexpr mixing::UtilityDims kDims{6, 8, 5, 3};

// Utility network plus a per-row generated head stored as ordinary parameters.
ParamSet utility_fixture(std::uint64_t seed) {
  ParamSet p;
  nn::Rng rng(seed);
  mixing::init_utility(p, "agent", kDims, false, rng);
  std::mt19937_64 g(seed + 1);
  p.add("head/W", random_tensor(Shape{kRows, kDims.hidden_dim * kDims.n_actions}, g, 0.5));
  p.add("head/b", random_tensor(Shape{kRows, kDims.n_actions}, g, 0.5));
  return p;
}

mixing::UtilityOutput run_utility(ParamBinder& b, const Tensor& x, const Tensor& h) {
  Tape& t = b.tape();
  return mixing::utility_forward(b, "agent", t.constant(x), t.constant(h), {b("head/W"), b("head/b")});
}

}  // namespace

TEST_CASE("utility network with a zero head outputs zero q-values") {
  ParamSet p = utility_fixture(1);
  zero_prefix(p, "head/");
  std::mt19937_64 g(2);
  Tape t;
  ParamBinder b(t, p);
  const auto out = run_utility(b, random_tensor(Shape{kRows, 6}, g), random_tensor(Shape{kRows, 5}, g));
  for (double q : out.q.value()) CHECK(q == 0.0);
}

TEST_CASE("identical inputs and heads give identical q-values") {
  ParamSet p = utility_fixture(3);
  Tensor& W = p.get_mut("head/W");
  Tensor& bias = p.get_mut("head/b");
  for (int r = 1; r < kRows; ++r) {
    for (int c = 0; c < W.shape.cols(); ++c) W.at(r, c) = W.at(0, c);
    for (int c = 0; c < bias.shape.cols(); ++c) bias.at(r, c) = bias.at(0, c);
  }
  std::mt19937_64 g(4);
  const Tensor x1 = random_tensor(Shape{1, 6}, g), h1 = random_tensor(Shape{1, 5}, g);
  Tensor x(Shape{kRows, 6}), h(Shape{kRows, 5});
  for (int r = 0; r < kRows; ++r) {
    std::copy(x1.data.begin(), x1.data.end(), x.data.begin() + r * 6);
    std::copy(h1.data.begin(), h1.data.end(), h.data.begin() + r * 5);
  }
  Tape t;
  ParamBinder b(t, p);
  const auto& q = run_utility(b, x, h).q.value();
  for (int r = 1; r < kRows; ++r)
    for (int a = 0; a < 3; ++a) CHECK(q[std::size_t(r * 3 + a)] == q[std::size_t(a)]);
}

TEST_CASE("utility gradients w.r.t. shared parameters and the head") {
  ParamSet p = utility_fixture(5);
  std::mt19937_64 g(6);
  const Tensor x = random_tensor(Shape{kRows, 6}, g), h = random_tensor(Shape{kRows, 5}, g, 0.5);
  const auto report = finite_diff_check([&](ParamBinder& b) { return b.tape().sum(run_utility(b, x, h).q); }, p);
  CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("zero mixer parameters give zero weights and zero q_tot") {
  ParamSet p;
  nn::Rng rng(7);
  mixing::init_mixer(p, 9, 4, rng);
  for (auto& [name, t] : p) std::fill(t.data.begin(), t.data.end(), 0.0);
  std::mt19937_64 g(8);
  Tape t;
  ParamBinder b(t, p);
  const Var state = t.constant(random_tensor(Shape{5, 9}, g));
  const auto w = mixing::mixing_hypernet(b, state, 4);
  for (double v : w.w1.value()) CHECK(v == 0.0);
  for (double v : w.w2.value()) CHECK(v == 0.0);
  for (double v : mixing::mix(t, w, t.constant(random_tensor(Shape{5, 4}, g, 10.0))).value()) CHECK(v == 0.0);
}

TEST_CASE("generated mixing weights are non-negative over 1000 states") {
  ParamSet p;
  nn::Rng rng(9);
  mixing::init_mixer(p, 9, 4, rng);
  std::mt19937_64 g(10);
  Tape t;
  ParamBinder b(t, p);
  const auto w = mixing::mixing_hypernet(b, t.constant(random_tensor(Shape{1000, 9}, g, 3.0)), 4);
  for (double v : w.w1.value()) CHECK(v >= 0.0);
  for (double v : w.w2.value()) CHECK(v >= 0.0);
}

TEST_CASE("zero weights leave only b2") {
  Tape t;
  const mixing::MixingVars w{t.constant(Tensor(Shape{2, 64})), t.constant(Tensor(Shape{2, 32}, 0.7)),
                             t.constant(Tensor(Shape{2, 32})), t.constant(Tensor::matrix(2, 1, {1.25, -3.5}))};
  const auto q = mixing::mix(t, w, t.constant(Tensor::matrix(2, 2, {4, -9, 100, 2})));
  CHECK(q.value() == std::vector<double>{1.25, -3.5});
}

TEST_CASE("single agent with unit first layer and e1 output gives relu(q)") {
  Tensor w2(Shape{1, 32});
  w2.at(0, 0) = 1.0;
  for (double q1 : {-2.0, -0.1, 0.0, 0.3, 5.0}) {
    Tape t;
    const mixing::MixingVars w{t.constant(Tensor(Shape{1, 32}, 1.0)), t.constant(Tensor(Shape{1, 32})), t.constant(w2),
                               t.constant(Tensor(Shape{1, 1}))};
    CHECK(mixing::mix(t, w, t.constant(Tensor::matrix(1, 1, {q1}))).item() == std::max(q1, 0.0));
  }
}

TEST_CASE("raising any local utility never lowers q_tot") {
  const auto result = checks::mixer_monotonicity(1000);
  INFO(result.detail);
  CHECK(result.passed);

  ParamSet p;
  nn::Rng rng(11);
  mixing::init_mixer(p, 6, 3, rng);
  std::mt19937_64 g(12);
  const Tensor state = random_tensor(Shape{200, 6}, g), q = random_tensor(Shape{200, 3}, g, 3.0);
  auto eval = [&](const Tensor& qs) {
    Tape t;
    ParamBinder b(t, p, false);
    return mixing::mix(b, t.constant(qs), t.constant(state)).value();
  };
  const auto base = eval(q);
  for (int i = 0; i < 3; ++i) {
    Tensor up = q;
    for (int r = 0; r < 200; ++r) up.at(r, i) += 1.0;
    const auto raised = eval(up);
    for (std::size_t r = 0; r < base.size(); ++r) CHECK(raised[r] >= base[r]);
  }
}

TEST_CASE("mixer gradients w.r.t. the hypernetworks") {
  ParamSet p;
  nn::Rng rng(13);
  mixing::init_mixer(p, 5, 3, rng);
  std::mt19937_64 g(14);
  const Tensor state = random_tensor(Shape{4, 5}, g), q = random_tensor(Shape{4, 3}, g);
  const auto report = finite_diff_check(
      [&](ParamBinder& b) { return b.tape().sum(mixing::mix(b, b.tape().constant(q), b.tape().constant(state))); }, p);
  CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("plain QMIX agents with identical inputs act identically") {
  envs::EnvContract c{3, 4, 6, 3, 5};
  const ModelSpec spec = make_model_spec(c, Ablation::kQmix, true, false);
  const ParamSet params = init_model(spec, 15);
  const std::vector<std::vector<double>> obs(3, {0.1, -0.4, 0.9, 0.0});
  const auto out = act_forward(params, spec, obs, {1, 1, 1}, Tensor(Shape{3, spec.hidden_dim}), {});
  CHECK(out.q[1] == out.q[0]);
  CHECK(out.q[2] == out.q[0]);
}
