#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "larar/attacks.hpp"
#include "larar/errors.hpp"
#include "larar/losses.hpp"
#include "support.hpp"

using namespace larar;
using larar::testing::logistic_toy;
using larar::testing::plain_network;
using larar::testing::quick_model;
using larar::testing::random_tensor;
using larar::testing::set;
using larar::testing::synth_splits;

namespace {

std::vector<int> random_labels(std::size_t n, std::mt19937_64& rng) {
  std::bernoulli_distribution b(0.5);
  std::vector<int> y(n);
  for (int& v : y) v = b(rng) ? 1 : 0;
  return y;
}

double linf(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double mean_bce(const NetworkParams& p, const Tensor& x, std::span<const int> y) {
  ad::NoGradGuard guard;
  return bce(forward(p, x, Mode::kEval).output, labels_column(y)).value().item();
}

}  // namespace

TEST_CASE("FGSM on the logistic toy") {
  const NetworkParams p = logistic_toy();
  const std::vector<int> y = {1};
  const Tensor x = Tensor::scalar(0.0);
  CHECK(loss_input_gradient(p, x, y).item() == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(fgsm(p, x, y, 0.1).item() == -0.1);
}

TEST_CASE("zero budget leaves inputs untouched") {
  std::mt19937_64 rng(1);
  const NetworkParams p = plain_network(4, {5}, false, 1);
  const Tensor x = random_tensor(20, 4, rng);
  const std::vector<int> y = random_labels(20, rng);
  CHECK(bit_equal(fgsm(p, x, y, 0.0), x));
  AttackConfig cfg{.epsilon = 0.0, .alpha = 0.01, .iterations = 5, .random_init = true, .seed = 3};
  CHECK(bit_equal(pgd(p, x, y, cfg), x));
}

TEST_CASE("single full-step PGD without random start is FGSM") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    std::mt19937_64 rng(seed);
    const NetworkParams p = plain_network(3, {4, 3}, false, seed);
    const Tensor x = random_tensor(8, 3, rng, -2, 2);
    const std::vector<int> y = random_labels(8, rng);
    const double eps = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
    AttackConfig cfg{.epsilon = eps, .alpha = eps, .iterations = 1, .random_init = false, .seed = seed};
    CHECK(bit_equal(pgd(p, x, y, cfg), fgsm(p, x, y, eps)));
  }
}

TEST_CASE("every attack output and PGD iterate stays inside the epsilon ball") {
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const NetworkParams p = plain_network(6, {5}, false, seed);
    const Tensor x = random_tensor(20, 6, rng, -50, 50);
    const std::vector<int> y = random_labels(20, rng);
    const double eps = std::uniform_real_distribution<double>(1e-6, 0.5)(rng);
    CHECK(linf(fgsm(p, x, y, eps), x) <= eps);
    AttackConfig cfg{.epsilon = eps, .alpha = eps / 3.0, .iterations = 5, .random_init = true, .seed = seed};
    (void)pgd(p, x, y, cfg, [&](int, const Tensor& it) {
      CHECK(linf(it, x) <= eps);
      ++checked;
    });
  }
  CHECK(checked == 50 * 6);
}

TEST_CASE("projection holds in floating point for awkward magnitudes") {
  const Tensor x(1, 4, {1e8 + 0.1, -3.3, 0.7, 123456.789});
  const Tensor far(1, 4, {1e9, -1e9, 1e9, -1e9});
  for (double eps : {0.1, 0.3, 1e-7, 0.01}) {
    const Tensor p = project_linf(far, x, eps);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(p[i] - x[i]) <= eps);
  }
}

TEST_CASE("attacks are deterministic") {
  std::mt19937_64 rng(5);
  const NetworkParams p = plain_network(4, {6}, false, 5);
  const Tensor x = random_tensor(30, 4, rng);
  const std::vector<int> y = random_labels(30, rng);
  CHECK(bit_equal(fgsm(p, x, y, 0.3), fgsm(p, x, y, 0.3)));
  AttackConfig cfg;
  cfg.seed = 17;
  CHECK(bit_equal(pgd(p, x, y, cfg), pgd(p, x, y, cfg)));
}

TEST_CASE("FGSM does not decrease the logistic loss") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    NetworkParams p = logistic_toy();
    const double w = std::uniform_real_distribution<double>(-3, 3)(rng);
    const double b = std::uniform_real_distribution<double>(-1, 1)(rng);
    p.output.weight.assign(Tensor::scalar(w));
    p.output.bias.assign(Tensor::scalar(b));
    const Tensor x = Tensor::scalar(std::uniform_real_distribution<double>(-3, 3)(rng));
    const std::vector<int> y = {std::bernoulli_distribution(0.5)(rng) ? 1 : 0};
    const Tensor adv = fgsm(p, x, y, 0.2);
    CHECK(mean_bce(p, adv, y) >= mean_bce(p, x, y) - 1e-9);
  }
}

TEST_CASE("PGD reaches at least the FGSM loss on a trained model") {
  const Splits s = synth_splits(1000, 5, 1.5, 2);
  const NetworkParams p = quick_model(ModelKind::kVanilla, s.train, 3, 2);
  const Tensor x = s.train.x.slice_rows(0, 500);
  const std::vector<int> y(s.train.y.begin(), s.train.y.begin() + 500);
  const double eps = 0.3;
  AttackConfig cfg{.epsilon = eps, .alpha = 2.5 * eps / 10.0, .iterations = 10, .random_init = true, .seed = 1};
  CHECK(mean_bce(p, pgd(p, x, y, cfg), y) >= mean_bce(p, fgsm(p, x, y, eps), y));
}

TEST_CASE("transfer attack identities") {
  const Splits s = synth_splits(400, 4, 1.5, 4);
  const NetworkParams target = quick_model(ModelKind::kBaseAdvnn, s.train, 2, 4);
  const NetworkParams other = quick_model(ModelKind::kVanilla, s.train, 2, 5);
  AttackConfig cfg;
  cfg.seed = 9;

  const TransferResult self = transfer_attack(target, target, s.test.x, s.test.y, cfg);
  CHECK(self.accuracy == accuracy(predict_labels(target, pgd(target, s.test.x, s.test.y, cfg)), s.test.y));

  cfg.epsilon = 0.0;
  const TransferResult none = transfer_attack(other, target, s.test.x, s.test.y, cfg);
  CHECK(none.accuracy == accuracy(predict_labels(target, s.test.x), s.test.y));
  CHECK(bit_equal(none.adversarial, s.test.x));

  const NetworkParams narrow = init_network(ModelKind::kVanilla, 3, 0);
  CHECK_THROWS_AS((void)transfer_attack(narrow, target, s.test.x, s.test.y, cfg), ShapeError);
}

TEST_CASE("attack configuration and inputs are validated") {
  const NetworkParams p = logistic_toy();
  const Tensor x(2, 1, 0.0);
  const std::vector<int> y = {1, 0};
  CHECK_THROWS_AS((void)fgsm(p, x, y, -0.1), AttackError);
  CHECK_THROWS_AS((void)pgd(p, x, y, AttackConfig{.epsilon = 0.1, .alpha = 0.0}), AttackError);
  CHECK_THROWS_AS((void)pgd(p, x, y, AttackConfig{.epsilon = 0.1, .alpha = 0.1, .iterations = 0}), AttackError);
  CHECK_THROWS_AS((void)fgsm(p, x, std::vector<int>{1}, 0.1), ShapeError);
}

TEST_CASE("zero gradient coordinates are not perturbed") {
  NetworkParams p = plain_network(2, {}, false, 0, ModelKind::kBaseAdvnn);
  set(p.output.weight, {1.0, 0.0});
  set(p.output.bias, {0.0});
  const Tensor adv = fgsm(p, Tensor(1, 2, {0.5, 0.5}), std::vector<int>{1}, 0.1);
  CHECK(adv[0] == 0.4);
  CHECK(adv[1] == 0.5);
}
