#include "larar/attacks.hpp"

#include <cmath>
#include <random>

#include "larar/errors.hpp"
#include "larar/losses.hpp"

namespace larar {

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw AttackError("attack epsilon must be >= 0");
  if (iterations < 1) throw AttackError("PGD needs at least one iteration");
  if (!(alpha > 0.0)) throw AttackError("PGD step size must be > 0");
}

Tensor loss_input_gradient(const NetworkParams& params, const Tensor& x, std::span<const int> y) {
  if (y.size() != x.rows()) {
    throw ShapeError("attack: " + std::to_string(y.size()) + " labels for " + std::to_string(x.rows()) +
                     " samples");
  }
  try {
    ad::Var input = ad::Var::leaf(x);
    ForwardTrace t = forward(params, input, Mode::kEval);
    ad::Var loss = ad::sum(bce_per_sample(t.output, labels_column(y)));
    const ad::Var wrt[] = {input};
    return ad::grad(loss, wrt)[0].value();
  } catch (const NonFiniteError& e) {
    throw AttackError(std::string("non-finite input gradient: ") + e.what());
  }
}

Tensor project_linf(const Tensor& candidate, const Tensor& x, double eps) {
  if (candidate.shape() != x.shape()) {
    throw ShapeError("project_linf: " + to_string(candidate.shape()) + " vs " + to_string(x.shape()));
  }
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double base = x[i];
    double hi = base + eps;
    while (hi - base > eps) hi = std::nextafter(hi, -INFINITY);
    double lo = base - eps;
    while (base - lo > eps) lo = std::nextafter(lo, INFINITY);
    const double c = candidate[i];
    out[i] = c > hi ? hi : (c < lo ? lo : c);
  }
  return out;
}

namespace {

// One signed step followed by projection. Coordinates with zero gradient
// are left exactly where they were.
Tensor signed_step(const Tensor& current, const Tensor& grad, const Tensor& origin, double step,
                   double eps) {
  Tensor cand = current;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    if (grad[i] > 0.0) {
      cand[i] = current[i] + step;
    } else if (grad[i] < 0.0) {
      cand[i] = current[i] - step;
    }
  }
  return project_linf(cand, origin, eps);
}

}  // namespace

Tensor fgsm(const NetworkParams& params, const Tensor& x, std::span<const int> y, double epsilon) {
  if (!(epsilon >= 0.0)) throw AttackError("attack epsilon must be >= 0");
  if (epsilon == 0.0) return x;
  const Tensor g = loss_input_gradient(params, x, y);
  return signed_step(x, g, x, epsilon, epsilon);
}

Tensor pgd(const NetworkParams& params, const Tensor& x, std::span<const int> y,
           const AttackConfig& cfg, const IterateCallback& on_iterate) {
  cfg.validate();
  Tensor cur = x;
  if (cfg.random_init && cfg.epsilon > 0.0) {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> u(-cfg.epsilon, cfg.epsilon);
    for (double& v : cur.values()) v += u(rng);
    cur = project_linf(cur, x, cfg.epsilon);
  }
  if (on_iterate) on_iterate(0, cur);
  for (int k = 1; k <= cfg.iterations; ++k) {
    if (cfg.epsilon == 0.0) break;
    const Tensor g = loss_input_gradient(params, cur, y);
    cur = signed_step(cur, g, x, cfg.alpha, cfg.epsilon);
    if (on_iterate) on_iterate(k, cur);
  }
  return cur;
}

double accuracy(std::span<const int> predictions, std::span<const int> truth) {
  if (predictions.size() != truth.size() || truth.empty()) {
    throw ShapeError("accuracy: prediction/label size mismatch or empty input");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predictions[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

TransferResult transfer_attack(const NetworkParams& surrogate, const NetworkParams& target,
                               const Tensor& x, std::span<const int> y, const AttackConfig& cfg) {
  if (surrogate.input_dim() != target.input_dim()) {
    throw ShapeError("transfer_attack: surrogate input dim " + std::to_string(surrogate.input_dim()) +
                     " != target input dim " + std::to_string(target.input_dim()));
  }
  TransferResult r;
  r.adversarial = pgd(surrogate, x, y, cfg);
  r.predictions = predict_labels(target, r.adversarial);
  r.accuracy = accuracy(r.predictions, y);
  return r;
}

}  // namespace larar
