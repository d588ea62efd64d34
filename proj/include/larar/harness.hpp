#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "larar/attacks.hpp"
#include "larar/data.hpp"
#include "larar/losses.hpp"
#include "larar/training.hpp"

namespace larar {

// Positive class is label 1 (attack traffic).
struct Metrics {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

Metrics compute_metrics(std::span<const int> predictions, std::span<const int> truth);

// 1 - adversarial accuracy. clean_acc is only range-checked.
double attack_success_rate(double clean_acc, double adv_acc);

enum class Condition : std::uint8_t { kClean, kFgsm, kPgd, kTransfer };

std::string_view to_string(Condition c) noexcept;
Condition parse_condition(std::string_view name);
inline constexpr Condition kAllConditions[] = {Condition::kClean, Condition::kFgsm, Condition::kPgd,
                                               Condition::kTransfer};

struct Cell {
  std::string row;  // model kind or ablation variant
  Condition condition = Condition::kClean;
  std::vector<Metrics> per_seed;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;  // sample standard deviation over seeds
  double precision_mean = 0.0;
  double recall_mean = 0.0;
  double f1_mean = 0.0;

  // 1 - accuracy_mean; meaningful for attacked conditions.
  double asr() const { return 1.0 - accuracy_mean; }
};

struct EarlyExitStats {
  double threshold = 0.95;
  std::vector<double> fraction;   // per seed
  std::vector<double> mean_macs;  // per seed
  std::vector<double> agreement;  // per seed, on exited samples
  std::size_t full_macs = 0;
};

struct RunLog {
  std::string row;
  std::uint64_t seed = 0;
  std::vector<EpochLog> epochs;
  std::vector<double> final_layer_weights;
};

struct EvalReport {
  static constexpr int kSchemaVersion = 1;
  std::string experiment;  // "comparison" or "ablation"
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> rows;
  std::vector<Condition> conditions;
  std::vector<Cell> cells;  // row-major over rows x conditions
  std::optional<EarlyExitStats> early_exit;
  std::vector<RunLog> runs;
  // Resolved settings as key/value pairs, emitted in order.
  std::vector<std::pair<std::string, std::string>> settings;

  const Cell& cell(std::string_view row, Condition c) const;
  const Cell* find(std::string_view row, Condition c) const;
};

struct ExperimentConfig {
  TrainConfig train;
  LossWeights weights;
  AttackConfig attack;  // evaluation attack; its seed is replaced per run
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<Condition> conditions = {kAllConditions[0], kAllConditions[1], kAllConditions[2],
                                       kAllConditions[3]};
  std::vector<ModelKind> models = {ModelKind::kVanilla, ModelKind::kBaseAdvnn, ModelKind::kLarar};
  double early_exit_threshold = 0.95;
};

// Scores one model under one condition. Transfer needs pre-crafted examples.
Metrics evaluate_condition(const NetworkParams& params, const Tensor& x, std::span<const int> y, Condition c,
                           const AttackConfig& attack, const Tensor* transfer_x = nullptr);

using TrainedHook = std::function<void(std::string_view row, std::uint64_t seed, const TrainResult&)>;

// Trains every requested model per seed on splits.train and scores the
// requested conditions on splits.test. Transfer examples are crafted on a
// separately seeded vanilla surrogate.
EvalReport run_comparison(const Splits& splits, const ExperimentConfig& cfg, const TrainedHook& hook = {});

inline constexpr std::string_view kAblationVariants[] = {"base",           "lvs-only",     "adaptive-only",
                                                         "auxiliary-only", "lvs+adaptive", "all"};

// Components for a named variant; the model has aux heads iff aux is on.
Components ablation_components(std::string_view variant);

// One PGD cell per variant, same seeds and data for every variant.
EvalReport run_ablation(const Splits& splits, const ExperimentConfig& cfg,
                        std::span<const std::string> variants, const TrainedHook& hook = {});

// Seed used for the evaluation attacks of a run.
std::uint64_t attack_seed(std::uint64_t run_seed);
// Seed of the vanilla surrogate used for transfer attacks.
std::uint64_t surrogate_seed(std::uint64_t run_seed);

}  // namespace larar
