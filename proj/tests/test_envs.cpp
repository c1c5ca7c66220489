// SPDX-License-Identifier: Apache-2.0

#include <random>

#include "doctest.h"
#include "role_forge/checks.hpp"
#include "role_forge/envs.hpp"

using namespace role_forge::envs;

namespace {

const EnvKind kAll[] = {EnvKind::kFormation, EnvKind::kSacrifice, EnvKind::kHarvest};

struct Rollout {
  std::vector<StepResult> steps;
  std::vector<std::vector<int>> trace;
  double ret = 0.0;
};

Rollout random_rollout(EnvKind kind, std::uint64_t seed) {
  auto env = make_env(kind);
  const auto& c = env->contract();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, c.n_actions - 1);
  Rollout r;
  r.steps.push_back(env->reset(seed));
  r.trace.push_back(env->positions());
  while (!r.steps.back().done) {
    std::vector<int> joint(std::size_t(c.n_agents));
    for (auto& a : joint) a = pick(rng);
    r.steps.push_back(env->step(joint));
    r.trace.push_back(env->positions());
    r.ret += r.steps.back().reward;
  }
  return r;
}

}  // namespace

TEST_CASE("reset configurations") {
  auto f = make_env(EnvKind::kFormation);
  f->reset(0);
  CHECK(f->positions() == std::vector<int>{5, 6, 5, 6, 5, 6});

  auto s = make_env(EnvKind::kSacrifice);
  const auto r = s->reset(0);
  CHECK(s->positions() == std::vector<int>{0, 0, 0, 0});
  CHECK_FALSE(r.done);
  CHECK(r.reward == 0.0);

  auto h = make_env(EnvKind::kHarvest);
  h->reset(0);
  CHECK(h->positions() == std::vector<int>(4, harvest::kStartCell));
  CHECK(harvest::kClass[0] == 0);
  CHECK(harvest::kClass[3] == 1);
}

TEST_CASE("contracts match the emitted vectors") {
  for (EnvKind kind : kAll) {
    CAPTURE(env_kind_name(kind));
    auto env = make_env(kind);
    const auto& c = env->contract();
    CHECK(c.n_agents == env_contract(kind).n_agents);
    const auto r = env->reset(1);
    REQUIRE(int(r.obs.size()) == c.n_agents);
    for (const auto& o : r.obs) CHECK(int(o.size()) == c.obs_dim);
    CHECK(int(r.state.size()) == c.state_dim);
    CHECK(parse_env_kind(env_kind_name(kind)) == kind);
  }
  CHECK_THROWS(parse_env_kind("starcraft"));
}

TEST_CASE("sacrifice gate blocks crossing while the plate is empty") {
  auto env = make_env(EnvKind::kSacrifice);
  env->reset(0);
  for (int k = 0; k < 4; ++k) env->step(std::vector<int>(4, line_action::kRight));
  REQUIRE(env->positions() == std::vector<int>(4, 4));
  env->step(std::vector<int>(4, line_action::kRight));
  CHECK(env->positions() == std::vector<int>(4, 4));
}

TEST_CASE("sacrifice: one plate-holder and three runners is optimal") {
  auto env = make_env(EnvKind::kSacrifice);
  env->reset(0);
  std::vector<std::vector<int>> trace{env->positions()};
  double ret = 0;
  for (int t = 0; t < sacrifice::kHorizon; ++t) {
    const int holder = t < 2 ? line_action::kRight : line_action::kStay;
    const auto r = env->step({holder, line_action::kRight, line_action::kRight, line_action::kRight});
    trace.push_back(env->positions());
    ret += r.reward;
    CHECK(r.done == (t + 1 == sacrifice::kHorizon));
  }
  CHECK(ret == 0.75);
  CHECK(optimal_return_oracle(EnvKind::kSacrifice) == 0.75);
  CHECK(episode_success(EnvKind::kSacrifice, trace, ret) == std::optional<bool>(true));
  const auto labels = ground_truth_partition(EnvKind::kSacrifice, trace);
  CHECK(labels == std::vector<int>{0, 1, 1, 1});
}

TEST_CASE("formation: all slots held gives 0.99 and six labels") {
  CHECK(formation::step_reward({1, 3, 5, 7, 9, 11}) == doctest::Approx(0.99).epsilon(1e-15));
  CHECK(formation::step_reward({0, 0, 0, 0, 0, 0}) == doctest::Approx(-0.01).epsilon(1e-15));
  const std::vector<std::vector<int>> trace{{5, 6, 5, 6, 5, 6}, {1, 3, 5, 7, 9, 11}};
  auto labels = ground_truth_partition(EnvKind::kFormation, trace);
  std::sort(labels.begin(), labels.end());
  CHECK(std::unique(labels.begin(), labels.end()) == labels.end());
  CHECK(episode_success(EnvKind::kFormation, trace, 0.0) == std::optional<bool>(true));
}

TEST_CASE("formation optimum") {
  // Movement of one cell per step bounds how many slots can be held:
  // 2, 3, 4, 5 after steps 1 to 4 and all 6 from step 5 on.
  const double bound = (2 + 3 + 4 + 5) / 6.0 + 16.0 - 20 * formation::kStepCost;
  CHECK(optimal_return_oracle(EnvKind::kFormation) == doctest::Approx(bound).epsilon(1e-12));
}

TEST_CASE("harvest rewards and optimum") {
  auto env = make_env(EnvKind::kHarvest);
  env->reset(0);
  using namespace grid_action;
  // Agents 0 (A) and 2 (B) walk to the type-a cell at row 1, column 0.
  for (const auto& joint : {std::vector<int>{kLeft, kPick, kLeft, kPick}, {kLeft, kPick, kLeft, kPick},
                            {kUp, kPick, kUp, kPick}})
    CHECK(env->step(joint).reward == 0.0);
  REQUIRE(env->positions()[0] == harvest::kResourceCell[0]);
  CHECK(env->step({kPick, kPick, kPick, kPick}).reward == harvest::kMatched);
  // Respawn pending for one more step.
  CHECK(env->step({kPick, kPick, kPick, kPick}).reward == 0.0);
  // Agent 0 steps away, so the class-B agent gets the type-a resource.
  CHECK(env->step({kRight, kPick, kPick, kPick}).reward == harvest::kMismatched);
}

TEST_CASE("harvest optimum is four matched resources every other step") {
  // Reaching a resource takes 3 moves; each resource then yields at most one
  // pick per respawn period over the remaining 12 steps.
  CHECK(optimal_return_oracle(EnvKind::kHarvest) == 4 * 6 * harvest::kMatched);
  std::vector<std::vector<int>> trace{{12, 12, 12, 12}};
  CHECK(ground_truth_partition(EnvKind::kHarvest, trace) == std::vector<int>{0, 0, 1, 1});
  CHECK_FALSE(episode_success(EnvKind::kHarvest, trace, 3.0).has_value());
}

TEST_CASE("invalid actions are rejected") {
  for (EnvKind kind : kAll) {
    auto env = make_env(kind);
    const int n = env->contract().n_agents, A = env->contract().n_actions;
    env->reset(0);
    std::vector<int> joint(std::size_t(n), 0);
    joint[0] = A;
    CHECK_THROWS_AS(env->step(joint), InvalidAction);
    joint[0] = -1;
    CHECK_THROWS_AS(env->step(joint), InvalidAction);
    CHECK_THROWS_AS(env->step(std::vector<int>(std::size_t(n + 1), 0)), InvalidAction);
  }
}

TEST_CASE("same seed and actions give bit-identical results") {
  for (EnvKind kind : kAll) {
    const auto a = random_rollout(kind, 17), b = random_rollout(kind, 17);
    REQUIRE(a.steps.size() == b.steps.size());
    for (std::size_t t = 0; t < a.steps.size(); ++t) {
      CHECK(a.steps[t].obs == b.steps[t].obs);
      CHECK(a.steps[t].state == b.steps[t].state);
      CHECK(a.steps[t].reward == b.steps[t].reward);
    }
  }
}

TEST_CASE("episodes end at the horizon and rewards stay in bounds") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    for (EnvKind kind : kAll) {
      const auto r = random_rollout(kind, seed);
      CHECK(int(r.steps.size()) == env_contract(kind).horizon + 1);
      for (std::size_t t = 1; t < r.steps.size(); ++t) {
        const double rew = r.steps[t].reward;
        if (kind == EnvKind::kFormation) CHECK((rew >= -0.01 && rew <= 0.99));
        if (kind == EnvKind::kHarvest) CHECK((rew >= 0.0 && rew <= 4.0));
      }
      if (kind == EnvKind::kSacrifice) CHECK((r.ret >= 0.0 && r.ret <= 1.0));
    }
  }
}

TEST_CASE("nobody passes the gate without someone on the plate") {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const auto r = random_rollout(EnvKind::kSacrifice, seed);
    for (std::size_t t = 1; t < r.trace.size(); ++t)
      for (std::size_t i = 0; i < 4; ++i) {
        const bool crossed = r.trace[t - 1][i] <= sacrifice::kGateWest && r.trace[t][i] > sacrifice::kGateWest;
        if (!crossed) continue;
        const auto& before = r.trace[t - 1];
        CHECK(std::find(before.begin(), before.end(), sacrifice::kPlate) != before.end());
      }
  }
}

TEST_CASE("step after the horizon is refused") {
  auto env = make_env(EnvKind::kSacrifice);
  env->reset(0);
  for (int t = 0; t < sacrifice::kHorizon; ++t) env->step(std::vector<int>(4, line_action::kStay));
  CHECK_THROWS(env->step(std::vector<int>(4, line_action::kStay)));
}

TEST_CASE("hand simulations in the self-test pass") {
  const auto r = role_forge::checks::env_simulations();
  INFO(r.detail);
  CHECK(r.passed);
}
