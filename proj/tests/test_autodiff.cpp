// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "role_forge/autodiff.hpp"
#include "role_forge/gradcheck.hpp"

using namespace role_forge;
using ad::DomainError;
using ad::ShapeError;

namespace {

using Build = std::function<Var(Tape&, const std::vector<Var>&)>;

Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (auto& v : t.data) v = u(rng);
  return t;
}

// Scalar projection sum(out * w) with a fixed random w.
double project(Tape& tape, Var out, const Tensor& w, Var* loss = nullptr) {
  Var l = tape.sum(tape.mul(out, tape.constant(w)));
  if (loss) *loss = l;
  return l.item();
}

// Max relative error of backward() against central differences, skipping
// coordinates whose one-sided differences disagree (a kink inside the step).
double primitive_error(const Build& build, std::vector<Tensor> inputs, std::mt19937_64& rng) {
  Tensor w;
  {
    Tape tape;
    std::vector<Var> vars;
    for (auto& t : inputs) vars.push_back(tape.constant(t));
    w = random_tensor(build(tape, vars).shape(), rng);
  }
  Tape tape;
  std::vector<Var> vars;
  for (auto& t : inputs) vars.push_back(tape.variable(t));
  Var loss;
  const double f0 = project(tape, build(tape, vars), w, &loss);
  tape.backward(loss);

  auto eval = [&]() {
    Tape t2;
    std::vector<Var> v2;
    for (auto& t : inputs) v2.push_back(t2.constant(t));
    return project(t2, build(t2, v2), w);
  };
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& g = vars[k].grad();
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k].data[i];
      inputs[k].data[i] = saved + h;
      const double fp = eval();
      inputs[k].data[i] = saved - h;
      const double fm = eval();
      inputs[k].data[i] = saved;
      const double fwd = (fp - f0) / h, bwd = (f0 - fm) / h;
      if (std::abs(fwd - bwd) > 1e-3 * std::max(1.0, std::abs(g[i]))) continue;  // straddles a kink
      worst = std::max(worst, std::abs((fp - fm) / (2 * h) - g[i]) / std::max(1.0, std::abs(g[i])));
    }
  }
  return worst;
}

struct Case {
  const char* name;
  std::vector<Shape> shapes;
  Build build;
  double lo = -2.0;
  double hi = 2.0;
  double tol = 1e-6;
};

}  // namespace

TEST_CASE("every primitive's backward matches central differences on 100 random inputs") {
  const std::vector<Case> cases{
      {"matmul", {Shape{3, 4}, Shape{4, 2}}, [](Tape& t, const auto& v) { return t.matmul(v[0], v[1]); }},
      {"add_bias", {Shape{3, 4}, Shape{4}}, [](Tape& t, const auto& v) { return t.add_bias(v[0], v[1]); }},
      {"add", {Shape{2, 3}, Shape{2, 3}}, [](Tape& t, const auto& v) { return t.add(v[0], v[1]); }},
      {"sub", {Shape{2, 3}, Shape{2, 3}}, [](Tape& t, const auto& v) { return t.sub(v[0], v[1]); }},
      {"mul", {Shape{2, 3}, Shape{2, 3}}, [](Tape& t, const auto& v) { return t.mul(v[0], v[1]); }},
      {"div", {Shape{2, 3}, Shape{2, 3}}, [](Tape& t, const auto& v) { return t.div(v[0], t.affine(t.square(v[1]), 1.0, 0.5)); }},
      {"affine", {Shape{5}}, [](Tape& t, const auto& v) { return t.affine(v[0], -1.5, 0.25); }},
      {"sigmoid", {Shape{5}}, [](Tape& t, const auto& v) { return t.sigmoid(v[0]); }},
      {"tanh", {Shape{5}}, [](Tape& t, const auto& v) { return t.tanh(v[0]); }},
      {"exp", {Shape{5}}, [](Tape& t, const auto& v) { return t.exp(v[0]); }},
      {"log", {Shape{5}}, [](Tape& t, const auto& v) { return t.log(v[0]); }, 0.2, 3.0},
      {"square", {Shape{5}}, [](Tape& t, const auto& v) { return t.square(v[0]); }},
      {"sqrt", {Shape{5}}, [](Tape& t, const auto& v) { return t.sqrt(v[0]); }, 0.2, 3.0},
      {"sum", {Shape{2, 3}}, [](Tape& t, const auto& v) { return t.sum(v[0]); }},
      {"mean", {Shape{2, 3}}, [](Tape& t, const auto& v) { return t.mean(v[0]); }},
      {"sum_cols", {Shape{3, 4}}, [](Tape& t, const auto& v) { return t.sum_cols(v[0]); }},
      {"concat_cols", {Shape{3, 2}, Shape{3, 1}}, [](Tape& t, const auto& v) { return t.concat_cols({v[0], v[1]}); }},
      {"concat_rows", {Shape{1, 3}, Shape{2, 3}},
       [](Tape& t, const auto& v) {
         const std::vector<Var> parts{v[0], v[1]};
         return t.concat_rows(parts);
       }},
      {"slice_cols", {Shape{3, 4}}, [](Tape& t, const auto& v) { return t.slice_cols(v[0], 1, 3); }},
      {"slice_rows", {Shape{4, 2}}, [](Tape& t, const auto& v) { return t.slice_rows(v[0], 1, 3); }},
      {"gather_rows", {Shape{3, 2}}, [](Tape& t, const auto& v) { return t.gather_rows(v[0], {2, 0, 2, 1}); }},
      {"select_cols", {Shape{3, 4}}, [](Tape& t, const auto& v) { return t.select_cols(v[0], {3, 0, 1}); }},
      {"max_cols", {Shape{3, 4}}, [](Tape& t, const auto& v) { return t.max_cols(v[0]); }, -2.0, 2.0, 1e-4},
      {"relu", {Shape{6}}, [](Tape& t, const auto& v) { return t.relu(v[0]); }, -2.0, 2.0, 1e-4},
      {"min_scalar", {Shape{6}}, [](Tape& t, const auto& v) { return t.min_scalar(v[0], 0.3); }, -2.0, 2.0, 1e-4},
      {"clamp_min", {Shape{6}}, [](Tape& t, const auto& v) { return t.clamp_min(v[0], 0.1); }, -2.0, 2.0, 1e-4},
      {"abs", {Shape{6}}, [](Tape& t, const auto& v) { return t.abs(v[0]); }, -2.0, 2.0, 1e-4},
      {"frobenius_norm", {Shape{2, 3}}, [](Tape& t, const auto& v) { return t.frobenius_norm(v[0]); }},
      {"row_norm", {Shape{3, 4}}, [](Tape& t, const auto& v) { return t.row_norm(v[0]); }},
      {"row_matvec", {Shape{2, 3}, Shape{2, 6}}, [](Tape& t, const auto& v) { return t.row_matvec(v[0], v[1]); }},
      {"reshape", {Shape{2, 3}}, [](Tape& t, const auto& v) { return t.reshape(v[0], Shape{3, 2}); }},
  };
  std::mt19937_64 rng(1);
  for (const auto& c : cases) {
    CAPTURE(c.name);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<Tensor> inputs;
      for (const auto& s : c.shapes) inputs.push_back(random_tensor(s, rng, c.lo, c.hi));
      worst = std::max(worst, primitive_error(c.build, inputs, rng));
    }
    CHECK(worst < c.tol);
  }
}

TEST_CASE("hand-derived gradients") {
  SUBCASE("x^2 at 3") {
    Tape t;
    Var x = t.variable(Tensor::scalar(3.0));
    t.backward(t.square(x));
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));
  }
  SUBCASE("sum(sigmoid(x)) at 0") {
    Tape t;
    Var x = t.variable(Tensor(Shape{4}, 0.0));
    t.backward(t.sum(t.sigmoid(x)));
    for (double g : x.grad()) CHECK(g == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("min(x, 1)") {
    for (auto [x0, expected] : {std::pair{2.0, 0.0}, {0.5, 1.0}, {1.0, 1.0}}) {
      Tape t;
      Var x = t.variable(Tensor::scalar(x0));
      t.backward(t.min_scalar(x, 1.0));
      CHECK(x.grad()[0] == expected);
    }
  }
}

TEST_CASE("kink conventions") {
  Tape t;
  Var x = t.variable(Tensor::matrix(1, 1, {0.0}));
  Var y = t.variable(Tensor::matrix(1, 1, {0.1}));
  Var z = t.variable(Tensor::matrix(1, 1, {0.0}));
  t.backward(t.sum(t.concat_cols({t.relu(x), t.clamp_min(y, 0.1), t.abs(z)})));
  CHECK(x.grad()[0] == 0.0);  // relu'(0) = 0
  CHECK(y.grad()[0] == 1.0);  // clamp at the tie passes the gradient
  CHECK(z.grad()[0] == 0.0);  // abs'(0) = 0
}

TEST_CASE("max_cols routes the gradient to the first maximizer") {
  Tape t;
  Var x = t.variable(Tensor::matrix(1, 3, {1.0, 2.0, 2.0}));
  t.backward(t.sum(t.max_cols(x)));
  CHECK(x.grad() == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("domain and shape errors") {
  Tape t;
  CHECK_THROWS_AS(t.log(t.constant(Tensor::scalar(0.0))), DomainError);
  CHECK_THROWS_AS(t.log(t.constant(Tensor::scalar(-1.0))), DomainError);
  CHECK_THROWS_AS(t.sqrt(t.constant(Tensor::scalar(-1.0))), DomainError);
  CHECK_THROWS_AS(t.matmul(t.constant(Tensor(Shape{2, 3})), t.constant(Tensor(Shape{2, 3}))), ShapeError);
  CHECK_THROWS_AS(t.add(t.constant(Tensor(Shape{2, 3})), t.constant(Tensor(Shape{3, 2}))), ShapeError);
}

TEST_CASE("repeated forward/backward passes give identical gradients") {
  std::mt19937_64 rng(4);
  const Tensor a = random_tensor(Shape{3, 4}, rng), b = random_tensor(Shape{4, 2}, rng);
  auto run = [&]() {
    Tape t;
    Var x = t.variable(a), y = t.variable(b);
    t.backward(t.sum(t.tanh(t.matmul(x, y))));
    return std::pair{x.grad(), t.value(t.tanh(t.matmul(t.constant(a), t.constant(b))))};
  };
  CHECK(run() == run());

  Tape t;
  Var x = t.variable(a), y = t.variable(b);
  Var loss = t.sum(t.tanh(t.matmul(x, y)));
  t.backward(loss);
  const auto first = x.grad();
  t.zero_grad();
  t.backward(loss);
  CHECK(x.grad() == first);
}

TEST_CASE("finite_diff_check on a quadratic") {
  std::mt19937_64 rng(9);
  ParamSet p;
  p.add("x", random_tensor(Shape{10}, rng));
  const auto report = finite_diff_check(
      [](ParamBinder& b) {
        Tape& t = b.tape();
        return t.sum(t.square(b("x")));
      },
      p);
  CHECK(report.max_rel_error < 1e-7);
  CHECK(report.checked == 10);
}

TEST_CASE("finite_diff_check names a non-finite coordinate") {
  ParamSet p;
  p.add("x", Tensor(Shape{1}, std::vector<double>{1e-6}));
  GradCheckOptions opts;
  opts.h = 1e-3;
  CHECK_THROWS_AS(finite_diff_check([](ParamBinder& b) { return b.tape().sum(b.tape().log(b("x"))); }, p, opts),
                  std::exception);
}
