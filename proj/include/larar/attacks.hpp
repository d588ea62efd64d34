#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "larar/model.hpp"
#include "larar/tensor.hpp"

namespace larar {

// l-infinity attack budget and PGD schedule. Epsilon is measured in
// standardized feature units. Adversarial features are never clamped to a
// data box, only to the epsilon ball.
struct AttackConfig {
  double epsilon = 0.3;
  double alpha = 0.01;
  int iterations = 10;
  bool random_init = true;
  std::uint64_t seed = 0;

  void validate() const;
};

// Gradient of the summed per-sample BCE with respect to the input, with the
// model in eval mode. Row i is the gradient of sample i's own loss.
Tensor loss_input_gradient(const NetworkParams& params, const Tensor& x, std::span<const int> y);

// Clamps `candidate` into the l-infinity ball of radius eps around x so that
// |candidate - x| <= eps holds when evaluated in floating point.
Tensor project_linf(const Tensor& candidate, const Tensor& x, double eps);

Tensor fgsm(const NetworkParams& params, const Tensor& x, std::span<const int> y, double epsilon);

using IterateCallback = std::function<void(int iteration, const Tensor& x_adv)>;

// Iterate 0 is the (optionally randomized) start point.
Tensor pgd(const NetworkParams& params, const Tensor& x, std::span<const int> y,
           const AttackConfig& cfg, const IterateCallback& on_iterate = {});

struct TransferResult {
  Tensor adversarial;
  std::vector<int> predictions;
  double accuracy = 0.0;
};

// Crafts PGD examples on the surrogate and scores them on the target.
TransferResult transfer_attack(const NetworkParams& surrogate, const NetworkParams& target,
                               const Tensor& x, std::span<const int> y, const AttackConfig& cfg);

double accuracy(std::span<const int> predictions, std::span<const int> truth);

}  // namespace larar
