#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "larar/autodiff.hpp"
#include "larar/data.hpp"
#include "larar/losses.hpp"
#include "larar/model.hpp"

namespace larar {

// Terms of the composite objective beyond the cross-entropy.
//
// lvs_penalty: the LVS term is differentiated into the network parameters.
// adaptive_weights: the layer weights are optimized. With adaptive_weights
// alone the LVS values enter as constants, so only the weights move.
struct Components {
  bool aux = false;
  bool ga = false;
  bool fs = false;
  bool lvs_penalty = false;
  bool adaptive_weights = false;

  // vanilla: none. base-advnn: ga + fs. larar: all five.
  static Components for_kind(ModelKind kind);
  bool uses_lvs() const noexcept { return lvs_penalty || adaptive_weights; }
  friend bool operator==(const Components&, const Components&) = default;
};

struct TrainConfig {
  int epochs = 20;
  std::size_t batch_size = 64;
  double learning_rate = 0.001;
  double epsilon_max = 0.3;
  int pgd_iterations = 10;
  double pgd_step = 0.01;
  bool pgd_random_init = true;
  std::uint64_t seed = 0;
  bool curriculum = true;
  // Clamp layer weights at zero after every step.
  bool clamp_layer_weights = false;
  // Defaults to Components::for_kind of the model being trained.
  std::optional<Components> components;

  void validate() const;
};

// Deterministic 64-bit seed derivation (splitmix64 chain).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

// eps_max * epoch / epochs for epoch in 1..epochs.
double curriculum_epsilon(double epsilon_max, int epoch, int epochs);

struct LossBreakdown {
  ad::Var total;
  ad::Var ce;
  ad::Var aux;  // zero constants when the term is off
  ad::Var ga;
  ad::Var fs;
  ad::Var lvs;
  std::vector<ad::Var> layer_lvs;  // batch LVS per hidden layer, empty without LVS terms
};

// Assembles the weighted objective from clean and adversarial train-mode
// traces. GA needs both traces to have leaf inputs that require grad.
LossBreakdown assemble_loss(const NetworkParams& params, const ForwardTrace& clean,
                            const ForwardTrace& adv, std::span<const int> y,
                            const Components& components, const LossWeights& weights);

// Runs both train-mode forward passes and assemble_loss. Running statistics
// are left untouched.
LossBreakdown batch_loss(const NetworkParams& params, const Tensor& x, const Tensor& x_adv,
                         std::span<const int> y, const Components& components,
                         const LossWeights& weights);

// Clean cross-entropy used by the vanilla loop.
ad::Var vanilla_loss(const NetworkParams& params, const Tensor& x, std::span<const int> y);

struct EpochLog {
  int epoch = 0;
  double epsilon = 0.0;
  // Batch means over the epoch.
  double loss_total = 0.0;
  double loss_ce = 0.0;
  double loss_aux = 0.0;
  double loss_ga = 0.0;
  double loss_fs = 0.0;
  double loss_lvs = 0.0;
  std::vector<double> lvs;            // per layer, batch-mean LVS averaged over batches
  std::vector<double> layer_weights;  // snapshot at the end of the epoch
  // max over batches and layers of |dL/dw_l - beta * LVS_l|
  double max_weight_grad_residual = 0.0;
};

struct TrainResult {
  NetworkParams params;
  std::vector<EpochLog> epochs;
  Components components;
  std::int64_t optimizer_steps = 0;
};

// Trains from the given initial parameters.
TrainResult train(NetworkParams init, const FeatureMatrix& data, const TrainConfig& cfg,
                  const LossWeights& weights = {});

// Trains the standard architecture of `kind`, initialized from cfg.seed.
TrainResult train(ModelKind kind, const FeatureMatrix& data, const TrainConfig& cfg,
                  const LossWeights& weights = {});

// One row per epoch: epoch, eps, loss parts, lvs_1..lvs_L, w_1..w_L.
void write_epoch_csv(std::span<const EpochLog> logs, const std::filesystem::path& path);

}  // namespace larar
