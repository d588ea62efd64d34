#pragma once

#include <span>

#include "larar/autodiff.hpp"
#include "larar/model.hpp"

namespace larar {

// Probabilities are clipped to [kProbClip, 1 - kProbClip] inside BCE.
inline constexpr double kProbClip = 1e-12;

// n labels in {0, 1} as an n x 1 tensor.
Tensor labels_column(std::span<const int> y);

// Binary cross-entropy of each row, n x 1.
ad::Var bce_per_sample(const ad::Var& prob, const Tensor& y);
// Batch mean of bce_per_sample, 1 x 1.
ad::Var bce(const ad::Var& prob, const Tensor& y);

struct LossWeights {
  double aux = 0.2;
  double ga = 1.0;
  double fs = 0.5;
  double beta = 0.3;
};

// Mean of the clean and adversarial BCE.
ad::Var loss_ce(const ad::Var& prob_clean, const ad::Var& prob_adv, const Tensor& y);

// Sum over hidden layers of the aux-head BCE on clean activations.
ad::Var loss_aux(const ForwardTrace& clean, const Tensor& y);

// Per-sample input gradients of the BCE, recorded so that they can be
// differentiated again. `trace.input` must be a leaf that requires grad.
ad::Var input_gradients(const ForwardTrace& trace, const Tensor& y);

// Batch mean of the squared distance between clean and adversarial
// per-sample input gradients. Differentiable with respect to the network
// parameters. Both traces need leaf inputs that require grad.
ad::Var loss_ga(const ForwardTrace& clean, const ForwardTrace& adv, const Tensor& y);

// Convenience form that runs its own forward passes.
ad::Var loss_ga(const NetworkParams& params, const Tensor& x, const Tensor& x_adv,
                std::span<const int> y, Mode mode);

// Batch mean of the squared distance between final hidden activations.
ad::Var loss_fs(const ForwardTrace& clean, const ForwardTrace& adv);

// beta * sum_l w_l * lvs_l. Each entry is 1 x 1.
ad::Var loss_lvs(std::span<const ad::Var> lvs, std::span<const ad::Var> layer_weights, double beta);

}  // namespace larar
