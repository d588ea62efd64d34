#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "larar/autodiff.hpp"
#include "larar/errors.hpp"
#include "larar/losses.hpp"
#include "support.hpp"

using namespace larar;
using larar::testing::central_difference;
using larar::testing::close_rel;
using larar::testing::random_tensor;

namespace {

// Random input with entries bounded away from zero, either sign.
Tensor away_from_zero(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  Tensor t(r, c);
  for (double& v : t.values()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

struct UnaryCase {
  std::string name;
  std::function<ad::Var(const ad::Var&)> op;
  std::function<Tensor(std::mt19937_64&)> input;
};

struct BinaryCase {
  std::string name;
  std::function<ad::Var(const ad::Var&, const ad::Var&)> op;
  std::function<Tensor(std::mt19937_64&)> a;
  std::function<Tensor(std::mt19937_64&)> b;
};

double projected(const ad::Var& out, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += out.value()[i] * r[i];
  return s;
}

void check_against_fd(std::vector<ad::Var>& leaves, const std::function<ad::Var()>& build,
                      std::mt19937_64& rng, const std::string& name) {
  const ad::Var out0 = build();
  const Tensor r = random_tensor(out0.shape().rows, out0.shape().cols, rng);
  const ad::Var root = ad::sum(ad::mul(out0, ad::Var::constant(r)));
  const ad::GradMap grads = ad::backward(root);
  for (ad::Var& leaf : leaves) {
    const Tensor fd = central_difference(leaf, [&] {
      ad::NoGradGuard guard;
      return projected(build(), r);
    });
    const Tensor g = grads.get(leaf);
    for (std::size_t i = 0; i < fd.size(); ++i) {
      INFO(name << " element " << i << ": analytic " << g[i] << " vs fd " << fd[i]);
      CHECK(close_rel(g[i], fd[i], 1e-4));
    }
  }
}

}  // namespace

TEST_CASE("forward op examples") {
  const ad::Var x = ad::Var::constant(Tensor(1, 3, {-1.0, 0.0, 2.0}));
  const Tensor r = ad::relu(x).value();
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);

  CHECK(ad::sigmoid(ad::Var::constant(Tensor::scalar(0.0))).value().item() == 0.5);

  const ad::Var m = ad::matmul(ad::Var::constant(Tensor(2, 3, 1.0)), ad::Var::constant(Tensor(3, 1, 1.0)));
  CHECK(m.shape() == Shape{2, 1});
  CHECK(m.value()[0] == 3.0);
  CHECK(m.value()[1] == 3.0);
}

TEST_CASE("shape mismatch names the op and both shapes") {
  const ad::Var a = ad::Var::constant(Tensor(2, 3));
  const ad::Var b = ad::Var::constant(Tensor(2, 2));
  try {
    (void)ad::matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("2x2") != std::string::npos);
  }
  CHECK_THROWS_AS((void)ad::add(a, b), ShapeError);
}

TEST_CASE("non-finite results raise instead of propagating") {
  const ad::Var z = ad::Var::constant(Tensor::scalar(0.0));
  CHECK_THROWS_AS((void)ad::log(z), NonFiniteError);
  CHECK_THROWS_AS((void)ad::reciprocal(z), NonFiniteError);
  CHECK(ad::reciprocal_safe(z).value().item() == 0.0);
}

TEST_CASE("gradient of sum of squares") {
  ad::Var x = ad::Var::leaf(Tensor(1, 3, {1.0, 2.0, 3.0}));
  const ad::GradMap g = ad::backward(ad::sum(ad::square(x)));
  const Tensor gx = g.get(x);
  CHECK(gx[0] == 2.0);
  CHECK(gx[1] == 4.0);
  CHECK(gx[2] == 6.0);
}

TEST_CASE("logistic BCE input gradient is sigma(z) - y") {
  ad::Var x = ad::Var::leaf(Tensor::scalar(0.0));
  const ad::Var w = ad::Var::constant(Tensor::scalar(1.0));
  const ad::Var b = ad::Var::constant(Tensor::scalar(0.0));
  const Tensor y = labels_column(std::vector<int>{1});
  auto build = [&] { return bce(ad::sigmoid(ad::add(ad::matmul(x, w), b)), y); };
  const ad::GradMap g = ad::backward(build());
  CHECK(g.get(x).item() == doctest::Approx(-0.5).epsilon(1e-12));
  const Tensor fd = central_difference(x, [&] {
    ad::NoGradGuard guard;
    return build().value().item();
  });
  CHECK(fd.item() == doctest::Approx(-0.5).epsilon(1e-8));
}

TEST_CASE("unreachable leaves are absent and read as zero") {
  ad::Var x = ad::Var::leaf(Tensor(1, 2, {1.0, 2.0}));
  ad::Var unused = ad::Var::leaf(Tensor(2, 2, 7.0));
  const ad::GradMap g = ad::backward(ad::sum(x));
  CHECK(g.contains(x));
  CHECK_FALSE(g.contains(unused));
  CHECK(bit_equal(g.get(unused), Tensor(2, 2, 0.0)));
}

TEST_CASE("constants and no-grad regions record nothing") {
  ad::Var x = ad::Var::leaf(Tensor::scalar(2.0));
  ad::Var y;
  {
    ad::NoGradGuard guard;
    CHECK_FALSE(ad::grad_enabled());
    y = ad::square(x);
  }
  CHECK(ad::grad_enabled());
  CHECK_FALSE(y.requires_grad());
  CHECK(ad::backward(ad::sum(y)).size() == 0);
}

TEST_CASE("mutating a leaf after recording makes the graph stale") {
  ad::Var x = ad::Var::leaf(Tensor(1, 2, {1.0, 2.0}));
  const ad::Var root = ad::sum(ad::square(x));
  x.assign(Tensor(1, 2, {3.0, 4.0}));
  CHECK_THROWS_AS((void)ad::backward(root), StaleGraphError);
}

TEST_CASE("gradients accumulate over shared subexpressions") {
  ad::Var x = ad::Var::leaf(Tensor::scalar(3.0));
  const ad::Var y = ad::mul(x, x);
  const ad::GradMap g = ad::backward(ad::add(y, y));
  CHECK(g.get(x).item() == 12.0);
}

TEST_CASE("backward is linear in the root") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    ad::Var x = ad::Var::leaf(random_tensor(3, 4, rng));
    ad::Var w = ad::Var::leaf(random_tensor(4, 2, rng));
    auto r1 = [&] { return ad::sum(ad::sigmoid(ad::matmul(x, w))); };
    auto r2 = [&] { return ad::sum(ad::square(ad::matmul(x, w))); };
    const ad::GradMap a = ad::backward(r1());
    const ad::GradMap b = ad::backward(r2());
    const ad::GradMap ab = ad::backward(ad::add(r1(), r2()));
    for (const ad::Var* leaf : {&x, &w}) {
      const Tensor ga = a.get(*leaf);
      const Tensor gb = b.get(*leaf);
      const Tensor gab = ab.get(*leaf);
      for (std::size_t i = 0; i < gab.size(); ++i) CHECK(gab[i] == doctest::Approx(ga[i] + gb[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("first-order op gradients match central differences over 100 seeds") {
  const std::vector<UnaryCase> unary = {
      {"relu", [](const ad::Var& a) { return ad::relu(a); },
       [](std::mt19937_64& r) { return away_from_zero(3, 4, r, 0.1, 2.0); }},
      {"sigmoid", [](const ad::Var& a) { return ad::sigmoid(a); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r, -3, 3); }},
      {"log", [](const ad::Var& a) { return ad::log(a); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r, 0.5, 2.0); }},
      {"square", [](const ad::Var& a) { return ad::square(a); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); }},
      {"sqrt", [](const ad::Var& a) { return ad::sqrt(a); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r, 0.5, 2.0); }},
      {"reciprocal", [](const ad::Var& a) { return ad::reciprocal(a); },
       [](std::mt19937_64& r) { return away_from_zero(3, 4, r, 0.5, 2.0); }},
      {"reciprocal_safe", [](const ad::Var& a) { return ad::reciprocal_safe(a); },
       [](std::mt19937_64& r) { return away_from_zero(3, 4, r, 0.5, 2.0); }},
      {"clamp", [](const ad::Var& a) { return ad::clamp(a, -0.5, 0.5); },
       [](std::mt19937_64& r) {
         Tensor t = away_from_zero(3, 4, r, 0.1, 1.0);
         for (double& v : t.values()) {
           if (std::abs(std::abs(v) - 0.5) < 0.05) v *= 0.5;
         }
         return t;
       }},
      {"transpose", [](const ad::Var& a) { return ad::transpose(a); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); }},
      {"scale", [](const ad::Var& a) { return ad::scale(a, -1.75); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); }},
      {"add_scalar", [](const ad::Var& a) { return ad::add_scalar(a, 0.3); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); }},
      {"neg", [](const ad::Var& a) { return ad::neg(a); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); }},
      {"sum_rows", [](const ad::Var& a) { return ad::sum_rows(a); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); }},
      {"sum_cols", [](const ad::Var& a) { return ad::sum_cols(a); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); }},
      {"sum", [](const ad::Var& a) { return ad::sum(a); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); }},
      {"mean", [](const ad::Var& a) { return ad::mean(a); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); }},
      {"l2_norm_rows", [](const ad::Var& a) { return ad::l2_norm_rows(a); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); }},
      {"broadcast_rows", [](const ad::Var& a) { return ad::broadcast_rows(a, 3); },
       [](std::mt19937_64& r) { return random_tensor(1, 4, r); }},
      {"broadcast_cols", [](const ad::Var& a) { return ad::broadcast_cols(a, 4); },
       [](std::mt19937_64& r) { return random_tensor(3, 1, r); }},
      {"broadcast_scalar", [](const ad::Var& a) { return ad::broadcast_scalar(a, 3, 4); },
       [](std::mt19937_64& r) { return random_tensor(1, 1, r); }},
  };
  const std::vector<BinaryCase> binary = {
      {"matmul", [](const ad::Var& a, const ad::Var& b) { return ad::matmul(a, b); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); },
       [](std::mt19937_64& r) { return random_tensor(4, 2, r); }},
      {"add", [](const ad::Var& a, const ad::Var& b) { return ad::add(a, b); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); }},
      {"sub", [](const ad::Var& a, const ad::Var& b) { return ad::sub(a, b); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); }},
      {"mul", [](const ad::Var& a, const ad::Var& b) { return ad::mul(a, b); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); }},
      {"div", [](const ad::Var& a, const ad::Var& b) { return ad::div(a, b); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); },
       [](std::mt19937_64& r) { return away_from_zero(3, 4, r, 0.5, 2.0); }},
      {"add_row", [](const ad::Var& a, const ad::Var& b) { return ad::add_row(a, b); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); },
       [](std::mt19937_64& r) { return random_tensor(1, 4, r); }},
      {"mul_row", [](const ad::Var& a, const ad::Var& b) { return ad::mul_row(a, b); },
       [](std::mt19937_64& r) { return random_tensor(3, 4, r); },
       [](std::mt19937_64& r) { return random_tensor(1, 4, r); }},
  };

  for (const UnaryCase& c : unary) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed);
      std::vector<ad::Var> leaves = {ad::Var::leaf(c.input(rng))};
      check_against_fd(leaves, [&] { return c.op(leaves[0]); }, rng, c.name);
    }
  }
  for (const BinaryCase& c : binary) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed);
      std::vector<ad::Var> leaves = {ad::Var::leaf(c.a(rng)), ad::Var::leaf(c.b(rng))};
      check_against_fd(leaves, [&] { return c.op(leaves[0], leaves[1]); }, rng, c.name);
    }
  }
}

TEST_CASE("third power: second derivative at 2 is 12") {
  ad::Var x = ad::Var::leaf(Tensor::scalar(2.0));
  const ad::Var f = ad::mul(ad::square(x), x);
  const std::vector<ad::Var> wrt = {x};
  const std::vector<ad::Var> g1 = ad::grad(f, wrt, {.create_graph = true, .seed = {}});
  CHECK(g1[0].value().item() == 12.0);
  const std::vector<ad::Var> g2 = ad::grad(g1[0], wrt);
  CHECK(g2[0].value().item() == doctest::Approx(12.0).epsilon(1e-14));
}

TEST_CASE("gradient-norm penalty of a quadratic") {
  ad::Var x = ad::Var::leaf(Tensor(1, 2, {1.0, 1.0}));
  const ad::Var a = ad::Var::constant(Tensor(2, 2, {2.0, 0.0, 0.0, 4.0}));
  const ad::Var f = ad::scale(ad::sum(ad::mul(ad::matmul(x, a), x)), 0.5);

  const std::vector<ad::Var> wrt = {x};
  const std::vector<ad::Var> gx = ad::grad(f, wrt, {.create_graph = true, .seed = {}});
  CHECK(gx[0].value()[0] == doctest::Approx(2.0));
  CHECK(gx[0].value()[1] == doctest::Approx(4.0));
  CHECK(ad::sum(ad::square(gx[0])).value().item() == doctest::Approx(20.0));

  const ad::GradMap gg = ad::grad_of_grad(f, x, wrt);
  const Tensor h = gg.get(x);
  CHECK(h[0] == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(h[1] == doctest::Approx(32.0).epsilon(1e-12));
}

TEST_CASE("grad_of_grad matches finite differences of backward on small nets") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    ad::Var x = ad::Var::leaf(random_tensor(4, 2, rng));
    ad::Var w1 = ad::Var::leaf(random_tensor(2, 3, rng));
    ad::Var b1 = ad::Var::leaf(random_tensor(1, 3, rng, -0.1, 0.1));
    ad::Var w2 = ad::Var::leaf(random_tensor(3, 1, rng));
    const Tensor y = labels_column(std::vector<int>{0, 1, 1, 0});

    auto root = [&] {
      const ad::Var h = ad::relu(ad::add_row(ad::matmul(x, w1), b1));
      return ad::sum(bce_per_sample(ad::sigmoid(ad::matmul(h, w2)), y));
    };
    std::vector<ad::Var> outer = {w1, b1, w2};
    const ad::GradMap gg = ad::grad_of_grad(root(), x, outer);
    auto penalty = [&] {
      const Tensor g = ad::backward(root()).get(x);
      double s = 0.0;
      for (double v : g.values()) s += v * v;
      return s;
    };
    for (ad::Var& leaf : outer) {
      const Tensor fd = central_difference(leaf, penalty);
      const Tensor an = gg.get(leaf);
      for (std::size_t i = 0; i < fd.size(); ++i) {
        INFO("seed " << seed << " element " << i);
        CHECK(close_rel(an[i], fd[i], 1e-3, 1e-7));
      }
    }
  }
}

TEST_CASE("custom ops differentiate once and refuse create_graph") {
  auto cube = std::make_shared<ad::CustomOp>();
  cube->name = "cube";
  cube->forward = [](const Tensor& in) {
    Tensor out = in;
    for (double& v : out.values()) v = v * v * v;
    return out;
  };
  cube->backward = [](const Tensor& in, const Tensor&, const Tensor& g) {
    Tensor out = g;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= 3.0 * in[i] * in[i];
    return out;
  };
  ad::Var x = ad::Var::leaf(Tensor(1, 2, {1.0, -2.0}));
  const ad::Var y = ad::apply_custom(cube, x);
  CHECK(y.value()[1] == -8.0);
  const Tensor g = ad::backward(ad::sum(y)).get(x);
  CHECK(g[0] == 3.0);
  CHECK(g[1] == 12.0);

  const std::vector<ad::Var> wrt = {x};
  try {
    (void)ad::grad(ad::sum(ad::apply_custom(cube, x)), wrt, {.create_graph = true, .seed = {}});
    FAIL("expected UnsupportedSecondOrderError");
  } catch (const UnsupportedSecondOrderError& e) {
    CHECK(std::string(e.what()).find("cube") != std::string::npos);
  }
}
