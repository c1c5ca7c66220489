// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "role_forge/gradcheck.hpp"
#include "role_forge/nn.hpp"
#include "role_forge/roles.hpp"

using namespace role_forge;
using roles::RoleDistribution;

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(s);
  for (auto& v : t.data) v = n(rng);
  return t;
}

void zero_all(ParamSet& p) {
  for (auto& [name, t] : p) std::fill(t.data.begin(), t.data.end(), 0.0);
}

ParamSet gru_params(int in, int hidden, std::uint64_t seed) {
  ParamSet p;
  nn::Rng rng(seed);
  nn::init_gru(p, "g", {in, hidden}, rng);
  return p;
}

}  // namespace

TEST_CASE("layer init respects the fan-in bound and zero biases") {
  ParamSet p;
  nn::Rng rng(3);
  nn::init_layer(p, "net/fc1", {4, 3, nn::Activation::kNone}, rng);
  const Tensor& W = p.get("net/fc1/W");
  CHECK(W.shape == Shape{4, 3});
  for (double w : W.data) CHECK(std::abs(w) < 0.5);
  CHECK(p.get("net/fc1/b").data == std::vector<double>{0, 0, 0});
}

TEST_CASE("GRU parameter census") {
  const ParamSet p = gru_params(10, 64, 1);
  for (const char* g : {"r", "z", "h"}) {
    CHECK(p.get(std::string("g/W_") + g).shape == Shape{10, 64});
    CHECK(p.get(std::string("g/U_") + g).shape == Shape{64, 64});
    CHECK(p.get(std::string("g/b_") + g).shape == Shape{64});
  }
  CHECK(p.size() == 9);
}

TEST_CASE("initialization is deterministic per seed") {
  CHECK(gru_params(5, 8, 42) == gru_params(5, 8, 42));
  CHECK_FALSE(gru_params(5, 8, 42) == gru_params(5, 8, 43));
}

TEST_CASE("mlp_forward with zero weights is zero and with identity is the input") {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor(Shape{3, 4}, rng);
  const auto layers = nn::two_layer(4, 12, 2);
  ParamSet p;
  nn::init_mlp(p, "m", layers, rng);
  zero_all(p);
  {
    Tape t;
    ParamBinder b(t, p);
    for (double v : nn::mlp_forward(b, "m", layers, t.constant(x)).value()) CHECK(v == 0.0);
  }
  ParamSet id;
  Tensor I(Shape{4, 4});
  for (int i = 0; i < 4; ++i) I.at(i, i) = 1.0;
  id.add("m/fc1/W", I);
  id.add("m/fc1/b", Tensor(Shape{4}));
  const std::vector<nn::LayerSpec> single{{4, 4, nn::Activation::kNone}};
  Tape t;
  ParamBinder b(t, id);
  CHECK(nn::mlp_forward(b, "m", single, t.constant(x)).value() == x.data);
}

TEST_CASE("mlp_forward rejects a mismatched input width") {
  nn::Rng rng(1);
  const auto layers = nn::two_layer(4, 12, 2);
  ParamSet p;
  nn::init_mlp(p, "m", layers, rng);
  Tape t;
  ParamBinder b(t, p);
  CHECK_THROWS_AS(nn::mlp_forward(b, "m", layers, t.constant(Tensor(Shape{2, 5}))), ad::ShapeError);
}

TEST_CASE("mlp and GRU gradients pass the finite-difference check") {
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor(Shape{3, 4}, rng), h = random_tensor(Shape{3, 6}, rng, 0.5);
  const auto layers = nn::two_layer(4, 12, 2);
  ParamSet p;
  nn::init_mlp(p, "m", layers, rng);
  nn::init_gru(p, "g", {4, 6}, rng);
  auto mlp = finite_diff_check(
      [&](ParamBinder& b) { return b.tape().sum(nn::mlp_forward(b, "m", layers, b.tape().constant(x))); }, p);
  CHECK(mlp.max_rel_error < 1e-6);
  auto gru = finite_diff_check(
      [&](ParamBinder& b) {
        Tape& t = b.tape();
        return t.sum(nn::gru_cell(b, "g", t.constant(x), t.constant(h)));
      },
      p);
  CHECK(gru.max_rel_error < 1e-5);
}

TEST_CASE("zero-parameter GRU halves the hidden state") {
  ParamSet p = gru_params(3, 4, 2);
  zero_all(p);
  std::mt19937_64 rng(6);
  const Tensor v = random_tensor(Shape{1, 4}, rng);
  Tape t;
  ParamBinder b(t, p);
  const Var h1 = nn::gru_cell(b, "g", t.constant(random_tensor(Shape{1, 3}, rng)), t.constant(v));
  for (std::size_t i = 0; i < 4; ++i) CHECK(h1.value()[i] == doctest::Approx(0.5 * v.data[i]).epsilon(1e-15));

  const Var h0 = nn::gru_cell(b, "g", t.constant(random_tensor(Shape{1, 3}, rng)), t.constant(Tensor(Shape{1, 4})));
  for (double x : h0.value()) CHECK(x == 0.0);

  std::vector<Var> xs;
  for (int k = 0; k < 5; ++k) xs.push_back(t.constant(random_tensor(Shape{1, 3}, rng)));
  const auto hs = nn::gru_unroll(b, "g", xs, t.constant(v));
  for (std::size_t step = 0; step < hs.size(); ++step)
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(hs[step].value()[i] == doctest::Approx(v.data[i] / std::pow(2.0, double(step + 1))).epsilon(1e-14));
}

TEST_CASE("gru_unroll: one step equals the cell, chaining, order matters, empty rejected") {
  const ParamSet p = gru_params(3, 5, 9);
  std::mt19937_64 rng(10);
  std::vector<Tensor> xs;
  for (int k = 0; k < 6; ++k) xs.push_back(random_tensor(Shape{2, 3}, rng));
  const Tensor h0 = random_tensor(Shape{2, 5}, rng, 0.3);

  Tape t;
  ParamBinder b(t, p);
  std::vector<Var> xv;
  for (const auto& x : xs) xv.push_back(t.constant(x));
  const auto full = nn::gru_unroll(b, "g", xv, t.constant(h0));

  const std::vector<Var> first{xv[0]};
  CHECK(nn::gru_unroll(b, "g", first, t.constant(h0))[0].value() ==
        nn::gru_cell(b, "g", xv[0], t.constant(h0)).value());

  const std::vector<Var> a(xv.begin(), xv.begin() + 2), c(xv.begin() + 2, xv.end());
  const auto left = nn::gru_unroll(b, "g", a, t.constant(h0));
  const auto right = nn::gru_unroll(b, "g", c, t.constant(t.value_tensor(left.back())));
  CHECK(right.back().value() == full.back().value());

  std::vector<Var> reversed(xv.rbegin(), xv.rend());
  CHECK(nn::gru_unroll(b, "g", reversed, t.constant(h0)).back().value() != full.back().value());

  CHECK_THROWS(nn::gru_unroll(b, "g", std::vector<Var>{}, t.constant(h0)));
}

TEST_CASE("role encoder: zero parameters hit the variance floor; the clamp always holds") {
  ParamSet p;
  nn::Rng rng(4);
  roles::init_role_encoder(p, 7, rng);
  std::mt19937_64 g(8);
  const Tensor obs = random_tensor(Shape{50, 7}, g, 3.0);
  {
    Tape t;
    ParamBinder b(t, p);
    const auto d = roles::role_encode(b, t.constant(obs));
    for (double s : d.sigma2.value()) CHECK(s >= 0.1);
  }
  zero_all(p);
  Tape t;
  ParamBinder b(t, p);
  const auto d = roles::role_encode(b, t.constant(obs));
  for (double m : d.mu.value()) CHECK(m == 0.0);
  for (double s : d.sigma2.value()) CHECK(s == 0.1);
}

TEST_CASE("role sampling") {
  Tape t;
  roles::RoleDistVars d{t.constant(Tensor::matrix(1, 3, {0, 0, 0})), t.constant(Tensor::matrix(1, 3, {1, 1, 1}))};
  CHECK(roles::role_sample(t, d, t.constant(Tensor::matrix(1, 3, {1, -1, 2}))).value() ==
        std::vector<double>{1, -1, 2});
  roles::RoleDistVars e{t.constant(Tensor::matrix(1, 3, {0.3, -2, 4})), t.constant(Tensor::matrix(1, 3, {2, 3, 4}))};
  CHECK(roles::role_sample(t, e, t.constant(Tensor(Shape{1, 3}))).value() == std::vector<double>{0.3, -2, 4});
}

TEST_CASE("reparameterized samples have the requested moments") {
  constexpr int N = 1'000'000;
  const std::array<double, 3> mu{0.5, 0, 0}, s2{0.1, 0.2, 0.4};
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n;
  Tensor noise(Shape{N, 3});
  for (auto& v : noise.data) v = n(rng);
  Tensor m(Shape{N, 3}), v(Shape{N, 3});
  for (int r = 0; r < N; ++r)
    for (int k = 0; k < 3; ++k) m.at(r, k) = mu[k], v.at(r, k) = s2[k];
  Tape t;
  const Var rho = roles::role_sample(t, {t.constant(m), t.constant(v)}, t.constant(noise));
  const auto& x = rho.value();
  for (int k = 0; k < 3; ++k) {
    double sum = 0, sq = 0;
    for (int r = 0; r < N; ++r) sum += x[std::size_t(r) * 3 + k];
    const double mean = sum / N;
    for (int r = 0; r < N; ++r) sq += std::pow(x[std::size_t(r) * 3 + k] - mean, 2);
    const double var = sq / (N - 1);
    CHECK(std::abs(mean - mu[k]) < 4 * std::sqrt(s2[k] / N));
    CHECK(std::abs(var - s2[k]) < 0.05 * s2[k]);
  }
}

TEST_CASE("log density values") {
  const RoleDistribution standard{};
  CHECK(roles::gaussian_log_prob(standard, {0, 0, 0}) == doctest::Approx(-2.756815599614018).epsilon(1e-12));

  const RoleDistribution d{{0.2, -1.0, 3.0}, {0.4, 1.5, 0.1}};
  double peak = 0;
  for (double s : d.sigma2) peak -= 0.5 * std::log(2 * std::numbers::pi * s);
  CHECK(roles::gaussian_log_prob(d, d.mu) == doctest::Approx(peak).epsilon(1e-14));

  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 100; ++trial) {
    std::array<double, 3> x{};
    double quad = 0;
    for (int k = 0; k < 3; ++k) {
      x[k] = d.mu[k] + n(rng);
      quad += std::pow(x[k] - d.mu[k], 2) / (2 * d.sigma2[k]);
    }
    CHECK(roles::gaussian_log_prob(d, x) - roles::gaussian_log_prob(d, d.mu) == doctest::Approx(-quad).epsilon(1e-10));
  }
}

TEST_CASE("one-dimensional marginal density integrates to one") {
  for (double s2 : {0.1, 1.0, 3.7}) {
    const double sigma = std::sqrt(s2), mu = 0.8;
    // Composite Simpson over [-10 sigma, 10 sigma] on dimension 0; the other
    // two dimensions are held at their means and divided out.
    const RoleDistribution d{{mu, 0, 0}, {s2, 1, 1}};
    const double rest = 2 * (-0.5 * std::log(2 * std::numbers::pi));
    const int M = 20000;
    const double a = mu - 10 * sigma, h = 20 * sigma / M;
    double acc = 0;
    for (int k = 0; k <= M; ++k) {
      const double w = (k == 0 || k == M) ? 1 : (k % 2 ? 4 : 2);
      acc += w * std::exp(roles::gaussian_log_prob(d, {a + k * h, 0, 0}) - rest);
    }
    CHECK(std::abs(acc * h / 3 - 1.0) < 1e-6);
  }
}

TEST_CASE("KL closed-form examples") {
  const RoleDistribution p{{0.1, 0.2, 0.3}, {0.5, 1.2, 0.1}};
  CHECK(std::abs(roles::gaussian_kl(p, p)) < 1e-12);
  CHECK(roles::gaussian_kl({{1, 1, 1}, {1, 1, 1}}, {}) == doctest::Approx(1.5).epsilon(1e-12));
  const double per_dim = 0.5 * std::log(10.0) + 0.05 - 0.5;
  CHECK(per_dim == doctest::Approx(0.701293).epsilon(1e-6));
  CHECK(roles::gaussian_kl({{0, 0, 0}, {0.1, 0.1, 0.1}}, {}) == doctest::Approx(3 * per_dim).epsilon(1e-12));

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2, 2), v(0.1, 3);
  for (int trial = 0; trial < 200; ++trial) {
    RoleDistribution a, b;
    for (int k = 0; k < 3; ++k) a.mu[k] = u(rng), b.mu[k] = u(rng), a.sigma2[k] = v(rng), b.sigma2[k] = v(rng);
    CHECK(roles::gaussian_kl(a, b) >= 0.0);
  }
}

TEST_CASE("entropy values") {
  const double floor_dim = 0.5 * std::log(2 * std::numbers::pi * std::numbers::e * 0.1);
  CHECK(roles::gaussian_entropy({{0, 0, 0}, {0.1, 0.1, 0.1}}) == doctest::Approx(3 * floor_dim).epsilon(1e-14));
  CHECK(floor_dim > 0.0);
  const RoleDistribution d{{0, 0, 0}, {0.3, 0.7, 1.1}};
  RoleDistribution doubled = d;
  doubled.sigma2[1] *= 2;
  CHECK(roles::gaussian_entropy(doubled) - roles::gaussian_entropy(d) ==
        doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("tape-level Gaussian utilities agree with the value-level ones") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-2, 2), v(0.1, 3);
  Tensor pm(Shape{5, 3}), ps(Shape{5, 3}), qm(Shape{5, 3}), qs(Shape{5, 3}), x(Shape{5, 3});
  for (std::size_t i = 0; i < 15; ++i) pm[i] = u(rng), qm[i] = u(rng), x[i] = u(rng), ps[i] = v(rng), qs[i] = v(rng);
  Tape t;
  const roles::RoleDistVars p{t.constant(pm), t.constant(ps)}, q{t.constant(qm), t.constant(qs)};
  const Var kl = roles::gaussian_kl(t, p, q), ent = roles::gaussian_entropy(t, p), lp = roles::gaussian_log_prob(t, p, t.constant(x));
  for (int r = 0; r < 5; ++r) {
    const std::array<double, 3> xr{x.at(r, 0), x.at(r, 1), x.at(r, 2)};
    CHECK(kl.value()[r] == doctest::Approx(roles::gaussian_kl(p.row(r), q.row(r))).epsilon(1e-13));
    CHECK(ent.value()[r] == doctest::Approx(roles::gaussian_entropy(p.row(r))).epsilon(1e-13));
    CHECK(lp.value()[r] == doctest::Approx(roles::gaussian_log_prob(p.row(r), xr)).epsilon(1e-13));
  }
}

TEST_CASE("trajectory posterior: zero parameters, clamp, and KL gradients") {
  ParamSet p;
  nn::Rng rng(21);
  roles::init_role_encoder(p, 4, rng);
  roles::init_trajectory_posterior(p, 8, 4, rng);
  std::mt19937_64 g(22);
  const Tensor h = random_tensor(Shape{6, 8}, g, 0.5), o = random_tensor(Shape{6, 4}, g);
  {
    Tape t;
    ParamBinder b(t, p);
    for (double s : roles::trajectory_posterior(b, t.constant(h), t.constant(o)).sigma2.value()) CHECK(s >= 0.1);
  }
  const auto report = finite_diff_check(
      [&](ParamBinder& b) {
        Tape& t = b.tape();
        const auto prior = roles::role_encode(b, t.constant(o));
        const auto post = roles::trajectory_posterior(b, t.constant(h), t.constant(o));
        return t.sum(roles::gaussian_kl(t, prior, post));
      },
      p);
  CHECK(report.max_rel_error < 1e-4);

  ParamSet z = p;
  zero_all(z);
  Tape t;
  ParamBinder b(t, z);
  const auto d = roles::trajectory_posterior(b, t.constant(h), t.constant(o));
  for (double m : d.mu.value()) CHECK(m == 0.0);
  for (double s : d.sigma2.value()) CHECK(s == 0.1);
}

TEST_CASE("dissimilarity is symmetric and vanishes with zero parameters") {
  ParamSet p;
  nn::Rng rng(31);
  roles::init_dissimilarity(p, 8, rng);
  std::mt19937_64 g(32);
  const Tensor hi = random_tensor(Shape{10, 8}, g), hj = random_tensor(Shape{10, 8}, g);
  {
    Tape t;
    ParamBinder b(t, p);
    CHECK(roles::dissimilarity(b, t.constant(hi), t.constant(hj)).value() ==
          roles::dissimilarity(b, t.constant(hj), t.constant(hi)).value());
    const auto same = roles::dissimilarity(b, t.constant(hi), t.constant(hi)).value();
    const auto raw = roles::dissimilarity_raw(b, t.constant(hi), t.constant(hi)).value();
    for (std::size_t r = 0; r < same.size(); ++r) CHECK(same[r] == doctest::Approx(raw[r]).epsilon(1e-15));
  }
  zero_all(p);
  Tape t;
  ParamBinder b(t, p);
  for (double v : roles::dissimilarity(b, t.constant(hi), t.constant(hj)).value()) CHECK(v == 0.0);
}

TEST_CASE("role decoder: census, zero parameters, reparameterization gradients") {
  ParamSet p;
  nn::Rng rng(41);
  roles::init_role_encoder(p, 5, rng);
  roles::init_role_decoder(p, 64, 3, rng);
  std::mt19937_64 g(42);
  const Tensor obs = random_tensor(Shape{2, 5}, g), noise = random_tensor(Shape{2, 3}, g);
  {
    Tape t;
    ParamBinder b(t, p);
    const auto head = roles::role_decode(b, t.constant(Tensor(Shape{1, 3})), 64, 3);
    CHECK(head.W.shape().numel() + head.b.shape().numel() == 195);
  }
  GradCheckOptions opts;
  opts.filter = [](const std::string& name) { return name.rfind(roles::kEncoderNet, 0) == 0; };
  const auto report = finite_diff_check(
      [&](ParamBinder& b) {
        Tape& t = b.tape();
        const auto d = roles::role_encode(b, t.constant(obs));
        const auto head = roles::role_decode(b, roles::role_sample(t, d, t.constant(noise)), 64, 3);
        return t.add(t.sum(t.tanh(head.W)), t.sum(head.b));
      },
      p, opts);
  CHECK(report.max_rel_error < 1e-4);
  CHECK(report.checked > 0);

  zero_all(p);
  Tape t;
  ParamBinder b(t, p);
  const auto head = roles::role_decode(b, t.constant(noise), 64, 3);
  for (double w : head.W.value()) CHECK(w == 0.0);
  for (double w : head.b.value()) CHECK(w == 0.0);
}
