#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "larar/attacks.hpp"
#include "larar/autodiff.hpp"
#include "larar/model.hpp"

namespace larar {

inline constexpr double kLvsEpsilon = 1e-8;

// Relative activation shift of each sample:
//   |h_adv - h_clean|_2 / (|h_clean|_2 + 1e-8), n x 1.
ad::Var lvs_per_sample(const ad::Var& clean, const ad::Var& adv);
// Batch mean of lvs_per_sample, 1 x 1.
ad::Var lvs_batch(const ad::Var& clean, const ad::Var& adv);

struct LvsReport {
  std::vector<double> batch;                    // per layer
  std::vector<std::vector<double>> per_sample;  // [layer][sample]
  int epoch = -1;
};

// Both traces must come from the same parameters, batch order and mode.
LvsReport compute_lvs(const ForwardTrace& clean, const ForwardTrace& adv);

struct LayerThreshold {
  double mean = 0.0;
  double stddev = 0.0;  // population formula
  double max = 0.0;
  double tau = 0.0;     // max(mean + k * stddev, lambda * max)
};

// Needs at least two scores.
LayerThreshold threshold_from_scores(std::span<const double> scores, double k, double lambda);

enum class DetectionMode { kPaired, kProxy };

// Thresholds for both scoring modes.
//
// Proxy mode scores a single input by the relative distance of its hidden
// activations from the calibration-mean activation. Paired mode scores the
// LVS between an input and a clean reference; its clean distribution is
// measured on benign uniform-noise perturbations of the calibration samples
// with the attack epsilon.
struct CalibrationStats {
  double k = 2.5;
  double lambda = 1.2;
  std::size_t calibration_size = 0;
  double noise_epsilon = 0.0;
  std::vector<Tensor> mean_activation;  // per layer, 1 x d_l
  std::vector<LayerThreshold> proxy;
  std::vector<LayerThreshold> paired;

  bool calibrated() const noexcept { return !proxy.empty(); }
  std::vector<double> taus(DetectionMode mode) const;
};

CalibrationStats calibrate_thresholds(const NetworkParams& params, const Tensor& calibration_x,
                                      const AttackConfig& attack, double k = 2.5,
                                      double lambda = 1.2);

// [layer][sample] proxy scores.
std::vector<std::vector<double>> proxy_scores(const NetworkParams& params, const Tensor& x,
                                              const CalibrationStats& stats);

struct DetectionVerdict {
  bool flagged = false;
  std::vector<std::size_t> triggering_layers;  // 1-based
  std::vector<double> scores;                  // per layer
};

DetectionVerdict verdict_from_scores(std::span<const double> scores, std::span<const double> taus);

// One verdict per row of x. Paired mode needs x_ref of the same shape.
std::vector<DetectionVerdict> detect(const NetworkParams& params, const Tensor& x,
                                     const CalibrationStats& stats, DetectionMode mode,
                                     const Tensor* x_ref = nullptr);

// Batch-level rule: flag when any layer's batch LVS exceeds its threshold.
bool detect_batch(const LvsReport& report, const CalibrationStats& stats, DetectionMode mode);

struct EarlyExitResult {
  std::vector<int> labels;
  // 1..L for an auxiliary exit, L + 1 when the full network was needed.
  std::vector<std::size_t> exit_layer;
  std::vector<std::size_t> macs;  // multiply-accumulates spent per sample

  double early_exit_fraction(std::size_t num_hidden) const;
  double mean_macs() const;
};

// Exits at the first auxiliary head with p >= threshold or p <= 1 - threshold.
EarlyExitResult early_exit_infer(const NetworkParams& params, const Tensor& x,
                                 double confidence_threshold = 0.95);

}  // namespace larar
