// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "role_forge/checks.hpp"
#include "role_forge/trainer.hpp"

using namespace role_forge;

namespace {

Episode tagged_episode(const ModelSpec& spec, std::uint64_t tag, int steps = 3) {
  Episode e = checks::synthetic_episodes(spec, 1, steps, tag).front();
  e.seed = tag;
  return e;
}

TrainConfig small_config(envs::EnvKind kind, Ablation ablation, bool single_thread = true) {
  TrainConfig c;
  c.env_kind = kind;
  c.ablation = ablation;
  c.n_parallel = 2;
  c.batch_episodes = 4;
  c.buffer_capacity = 50;
  c.target_interval = 5;
  c.total_env_steps = 200;
  c.eval_interval = 5;
  c.eval_episodes = 2;
  c.single_thread = single_thread;
  c.seed = 3;
  return c;
}

std::vector<MetricsRow> run_rows(const TrainConfig& c) {
  Trainer trainer(c);
  std::vector<MetricsRow> rows;
  trainer.run([&](const MetricsRow& r) { rows.push_back(r); });
  return rows;
}

bool same_row(const MetricsRow& a, const MetricsRow& b) {
  return a.update == b.update && a.env_steps == b.env_steps && a.l_td == b.l_td && a.l_i == b.l_i &&
         a.l_d == b.l_d && a.total == b.total && a.eps == b.eps && a.eval_return == b.eval_return &&
         a.eval_success == b.eval_success && a.between_d == b.between_d && a.within_d == b.within_d;
}

}  // namespace

TEST_CASE("replay buffer evicts oldest first") {
  const ModelSpec spec = checks::micro_spec();
  ReplayBuffer buf(3);
  for (std::uint64_t k = 0; k < 5; ++k) buf.push(tagged_episode(spec, k));
  CHECK(buf.size() == 3);
  CHECK(buf.inserted() == 5);
  std::vector<std::uint64_t> tags;
  for (const auto& e : buf.contents()) tags.push_back(e->seed);
  CHECK(tags == std::vector<std::uint64_t>{2, 3, 4});
}

TEST_CASE("replay sampling draws distinct episodes, uniformly, and round-trips exactly") {
  const ModelSpec spec = checks::micro_spec();
  ReplayBuffer buf(10);
  std::vector<Episode> originals;
  for (std::uint64_t k = 0; k < 10; ++k) {
    originals.push_back(tagged_episode(spec, k));
    buf.push(originals.back());
  }
  std::mt19937_64 rng(1);
  std::vector<int> hits(10, 0);
  for (int draw = 0; draw < 2000; ++draw) {
    const auto s = buf.sample(4, rng);
    std::set<std::uint64_t> seen;
    for (const auto& e : s) {
      seen.insert(e->seed);
      ++hits[e->seed];
      CHECK(*e == originals[e->seed]);
    }
    CHECK(seen.size() == 4);
  }
  // Each episode is expected 800 times; allow a generous 5-sigma band.
  for (int h : hits) CHECK(std::abs(h - 800) < 5 * std::sqrt(800.0 * 0.6));
  CHECK_THROWS(buf.sample(11, rng));
}

TEST_CASE("batch masks are prefixes and padding is zero") {
  const ModelSpec spec = checks::micro_spec();
  const auto episodes = checks::synthetic_episodes(spec, 4, 5, 2);
  const EpisodeBatch batch = make_batch(episodes);
  CHECK(batch.max_steps == 5);
  for (int b = 0; b < batch.batch; ++b) {
    bool open = true;
    for (int t = 0; t < batch.max_steps; ++t) {
      const double m = batch.mask[batch.step_index(b, t)];
      if (!open) CHECK(m == 0.0);
      if (m == 0.0) {
        open = false;
        CHECK(batch.rewards[batch.step_index(b, t)] == 0.0);
      }
    }
    CHECK(batch.mask[batch.step_index(b, episodes[std::size_t(b)].steps - 1)] == 1.0);
  }
}

TEST_CASE("epsilon schedule") {
  CHECK(epsilon(0) == 1.0);
  CHECK(epsilon(50000) == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(epsilon(25000) == doctest::Approx(0.525).epsilon(1e-15));
  CHECK(epsilon(1000000) == doctest::Approx(0.05).epsilon(1e-15));
}

TEST_CASE("action selection: uniform at eps 1, greedy at eps 0, ties to the lowest index") {
  std::mt19937_64 rng(4);
  const std::vector<std::vector<double>> q{{0.0, 5.0, 1.0}};
  std::array<int, 3> counts{};
  constexpr int N = 10000;
  for (int k = 0; k < N; ++k) ++counts[std::size_t(select_actions(q, 1.0, rng)[0])];
  double chi2 = 0;
  for (int c : counts) chi2 += std::pow(c - N / 3.0, 2) / (N / 3.0);
  CHECK(chi2 < 9.21);  // df = 2, p = 0.01

  for (int k = 0; k < 100; ++k) CHECK(select_actions(q, 0.0, rng)[0] == 1);
  CHECK(greedy_action({2.0, 3.0, 3.0, 1.0}) == 1);
  CHECK(greedy_action({0.0, 0.0, 0.0}) == 0);
}

TEST_CASE("rmsprop arithmetic") {
  ParamSet p, g;
  p.add("w", Tensor::scalar(0.0));
  g.add("w", Tensor::scalar(1.0));
  OptimizerState s = make_optimizer(p);
  REQUIRE(rmsprop_step(p, g, s, 5e-4, 0.99, 1e-5));
  CHECK(p.get("w")[0] == doctest::Approx(-4.99950004999500e-3).epsilon(1e-13));
  const double theta1 = -5e-4 / (std::sqrt(0.01) + 1e-5);
  CHECK(std::abs(p.get("w")[0] - theta1) <= 1e-15);
  REQUIRE(rmsprop_step(p, g, s, 5e-4, 0.99, 1e-5));
  const double v2 = 0.99 * 0.01 + 0.01 * 1.0;
  CHECK(std::abs(s.v.get("w")[0] - v2) <= 1e-15);
  CHECK(std::abs(p.get("w")[0] - (theta1 - 5e-4 / (std::sqrt(v2) + 1e-5))) <= 1e-15);

  const double before = p.get("w")[0];
  g.get_mut("w")[0] = 0.0;
  REQUIRE(rmsprop_step(p, g, s, 5e-4, 0.99, 1e-5));
  CHECK(p.get("w")[0] == before);
  CHECK(s.v.get("w")[0] == doctest::Approx(0.99 * v2).epsilon(1e-15));
}

TEST_CASE("rmsprop skips non-finite gradients") {
  ParamSet p, g;
  p.add("w", Tensor::scalar(1.0));
  g.add("w", Tensor::scalar(std::nan("")));
  OptimizerState s = make_optimizer(p);
  CHECK_FALSE(rmsprop_step(p, g, s, 5e-4, 0.99, 1e-5));
  CHECK(p.get("w")[0] == 1.0);
  CHECK(s.v.get("w")[0] == 0.0);
}

TEST_CASE("target sync copies only on the interval") {
  ParamSet p, t;
  p.add("w", Tensor::scalar(2.0));
  t.add("w", Tensor::scalar(1.0));
  CHECK_FALSE(target_sync(p, t, 199, 200));
  CHECK(t.get("w")[0] == 1.0);
  CHECK(target_sync(p, t, 200, 200));
  CHECK(t.get("w")[0] == 2.0);
}

TEST_CASE("greedy rollouts are deterministic and ignore the mixer") {
  const ModelSpec spec = make_model_spec(envs::env_contract(envs::EnvKind::kSacrifice), Ablation::kRoma);
  const ParamSet params = init_model(spec, 5);
  ParamSet poisoned = params;
  for (auto& [name, t] : poisoned)
    if (name.rfind("mixer/", 0) == 0 || name.rfind("traj_encoder/", 0) == 0 || name.rfind("dissimilarity/", 0) == 0)
      std::fill(t.data.begin(), t.data.end(), std::nan(""));
  const auto zero = [](int) { return 0.0; };
  const auto a = run_episode(params, spec, envs::EnvKind::kSacrifice, ActMode::kEval, zero, 1);
  const auto b = run_episode(params, spec, envs::EnvKind::kSacrifice, ActMode::kEval, zero, 2);
  const auto c = run_episode(poisoned, spec, envs::EnvKind::kSacrifice, ActMode::kTrain,
                             [](int) { return 0.3; }, 7);
  const auto d = run_episode(params, spec, envs::EnvKind::kSacrifice, ActMode::kTrain, [](int) { return 0.3; }, 7);
  CHECK(a.episode.actions == b.episode.actions);
  CHECK(c.episode == d.episode);
}

TEST_CASE("zero-head policy never succeeds on sacrifice") {
  const ModelSpec spec = make_model_spec(envs::env_contract(envs::EnvKind::kSacrifice), Ablation::kRoma);
  ParamSet params = init_model(spec, 6);
  for (auto& [name, t] : params)
    if (name.rfind("role_decoder/", 0) == 0) std::fill(t.data.begin(), t.data.end(), 0.0);
  const std::uint64_t before = params.checksum();
  const auto r = evaluate(params, spec, envs::EnvKind::kSacrifice, 4, 9);
  CHECK(r.success_rate == std::optional<double>(0.0));
  CHECK(params.checksum() == before);
  for (const auto& rec : r.roles)
    for (double s : rec.dist.sigma2) CHECK(s >= 0.1);
}

TEST_CASE("parallel and single-thread collection agree") {
  TrainConfig c = small_config(envs::EnvKind::kHarvest, Ablation::kRoma);
  c.n_parallel = 4;
  const ModelSpec spec = make_model_spec(envs::env_contract(c.env_kind), c.ablation);
  const ParamSet params = init_model(spec, 8);
  const std::vector<std::uint64_t> seeds{11, 12, 13, 14};
  c.single_thread = true;
  const auto serial = collect_episodes(params, spec, c, 1000, seeds);
  const auto serial_again = collect_episodes(params, spec, c, 1000, seeds);
  c.single_thread = false;
  const auto parallel = collect_episodes(params, spec, c, 1000, seeds);
  REQUIRE(serial.size() == 4);
  CHECK(serial == serial_again);
  CHECK(serial == parallel);
}

TEST_CASE("dissimilarity gap values are normalized") {
  const ModelSpec spec = make_model_spec(envs::env_contract(envs::EnvKind::kHarvest), Ablation::kRoma);
  const auto gap = dissimilarity_gap(init_model(spec, 10), spec, envs::EnvKind::kHarvest, 2, 3);
  REQUIRE(gap.between.has_value());
  REQUIRE(gap.within.has_value());
  CHECK((*gap.between >= 0.0 && *gap.between <= 1.0));
  CHECK((*gap.within >= 0.0 && *gap.within <= 1.0));
}

TEST_CASE("single-thread training is bit-reproducible") {
  const TrainConfig c = small_config(envs::EnvKind::kSacrifice, Ablation::kRoma);
  const auto a = run_rows(c), b = run_rows(c);
  REQUIRE(!a.empty());
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(same_row(a[k], b[k]));
  for (const auto& r : a) CHECK(r.total == r.l_td + 1e-4 * r.l_i + 1e-2 * r.l_d);
}

TEST_CASE("plain QMIX reports no role losses") {
  const auto rows = run_rows(small_config(envs::EnvKind::kSacrifice, Ablation::kQmix));
  REQUIRE(!rows.empty());
  for (const auto& r : rows) {
    CHECK(r.l_i == 0.0);
    CHECK(r.l_d == 0.0);
    CHECK(r.total == r.l_td);
  }
}

TEST_CASE("ablations zero the right coefficients") {
  TrainConfig c;
  c.ablation = Ablation::kTdOnly;
  CHECK(loss_options(c).lambda_i == 0.0);
  CHECK(loss_options(c).lambda_d == 0.0);
  c.ablation = Ablation::kTdPlusLi;
  CHECK(loss_options(c).lambda_i == 1e-4);
  CHECK(loss_options(c).lambda_d == 0.0);
  c.ablation = Ablation::kTdPlusLd;
  CHECK(loss_options(c).lambda_i == 0.0);
  CHECK(loss_options(c).lambda_d == 1e-2);
  c.ablation = Ablation::kRoma;
  CHECK(loss_options(c).lambda_i == 1e-4);
  CHECK(loss_options(c).lambda_d == 1e-2);
}

TEST_CASE("config validation names the bad field") {
  TrainConfig c;
  c.batch_episodes = 0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("batch_episodes"), std::invalid_argument);
  c = TrainConfig{};
  c.gamma = 1.5;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("gamma"), std::invalid_argument);
}
