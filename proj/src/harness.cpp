#include "larar/harness.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "larar/errors.hpp"
#include "larar/vulnerability.hpp"

namespace larar {

Metrics compute_metrics(std::span<const int> predictions, std::span<const int> truth) {
  if (truth.empty()) throw ShapeError("compute_metrics: empty input");
  if (predictions.size() != truth.size()) {
    throw ShapeError("compute_metrics: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(truth.size()) + " labels");
  }
  Metrics m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predictions[i] == 1;
    const bool t = truth[i] == 1;
    if (p && t) ++m.tp;
    if (p && !t) ++m.fp;
    if (!p && t) ++m.fn;
    if (!p && !t) ++m.tn;
  }
  const auto d = [](std::size_t v) { return static_cast<double>(v); };
  m.accuracy = d(m.tp + m.tn) / d(truth.size());
  m.precision = m.tp + m.fp > 0 ? d(m.tp) / d(m.tp + m.fp) : 0.0;
  m.recall = m.tp + m.fn > 0 ? d(m.tp) / d(m.tp + m.fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

double attack_success_rate(double clean_acc, double adv_acc) {
  if (!(clean_acc >= 0.0 && clean_acc <= 1.0) || !(adv_acc >= 0.0 && adv_acc <= 1.0)) {
    throw Error("attack_success_rate: accuracies must lie in [0, 1]");
  }
  return 1.0 - adv_acc;
}

std::string_view to_string(Condition c) noexcept {
  switch (c) {
    case Condition::kClean: return "clean";
    case Condition::kFgsm: return "fgsm";
    case Condition::kPgd: return "pgd";
    case Condition::kTransfer: return "transfer";
  }
  return "unknown";
}

Condition parse_condition(std::string_view name) {
  for (Condition c : kAllConditions) {
    if (to_string(c) == name) return c;
  }
  throw Error("unknown condition '" + std::string(name) + "' (expected clean, fgsm, pgd or transfer)");
}

const Cell* EvalReport::find(std::string_view row, Condition c) const {
  for (const Cell& cell : cells) {
    if (cell.row == row && cell.condition == c) return &cell;
  }
  return nullptr;
}

const Cell& EvalReport::cell(std::string_view row, Condition c) const {
  const Cell* found = find(row, c);
  if (!found) throw Error("report has no cell " + std::string(row) + "/" + std::string(to_string(c)));
  return *found;
}

std::uint64_t attack_seed(std::uint64_t run_seed) { return mix_seed(run_seed, 0xa77ac4ULL); }
std::uint64_t surrogate_seed(std::uint64_t run_seed) { return mix_seed(run_seed, 0x5066a7eULL); }

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

void finalize(Cell& c) {
  std::vector<double> acc, prec, rec, f1;
  for (const Metrics& m : c.per_seed) {
    acc.push_back(m.accuracy);
    prec.push_back(m.precision);
    rec.push_back(m.recall);
    f1.push_back(m.f1);
  }
  c.accuracy_mean = mean_of(acc);
  c.accuracy_std = sample_std(acc);
  c.precision_mean = mean_of(prec);
  c.recall_mean = mean_of(rec);
  c.f1_mean = mean_of(f1);
}

void validate(const Splits& splits, const ExperimentConfig& cfg) {
  if (cfg.seeds.empty()) throw Error("experiment needs at least one seed");
  if (cfg.conditions.empty()) throw Error("experiment needs at least one condition");
  if (splits.train.rows() == 0 || splits.test.rows() == 0) throw DataError("experiment needs train and test rows");
  cfg.train.validate();
  cfg.attack.validate();
}

AttackConfig eval_attack(const ExperimentConfig& cfg, std::uint64_t seed) {
  AttackConfig a = cfg.attack;
  a.seed = attack_seed(seed);
  return a;
}

template <typename F>
auto annotated(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw Error(where + ": " + e.what());
  }
}

std::vector<std::pair<std::string, std::string>> describe(const ExperimentConfig& cfg) {
  const auto num = [](double v) { return fmt::format("{}", v); };
  return {
      {"epochs", std::to_string(cfg.train.epochs)},
      {"batch_size", std::to_string(cfg.train.batch_size)},
      {"learning_rate", num(cfg.train.learning_rate)},
      {"epsilon_max", num(cfg.train.epsilon_max)},
      {"pgd_iterations", std::to_string(cfg.train.pgd_iterations)},
      {"pgd_step", num(cfg.train.pgd_step)},
      {"curriculum", cfg.train.curriculum ? "true" : "false"},
      {"lambda_aux", num(cfg.weights.aux)},
      {"lambda_ga", num(cfg.weights.ga)},
      {"lambda_fs", num(cfg.weights.fs)},
      {"beta", num(cfg.weights.beta)},
      {"attack_epsilon", num(cfg.attack.epsilon)},
      {"attack_alpha", num(cfg.attack.alpha)},
      {"attack_iterations", std::to_string(cfg.attack.iterations)},
      {"attack_random_init", cfg.attack.random_init ? "true" : "false"},
  };
}

}  // namespace

Metrics evaluate_condition(const NetworkParams& params, const Tensor& x, std::span<const int> y, Condition c,
                           const AttackConfig& attack, const Tensor* transfer_x) {
  switch (c) {
    case Condition::kClean: return compute_metrics(predict_labels(params, x), y);
    case Condition::kFgsm: return compute_metrics(predict_labels(params, fgsm(params, x, y, attack.epsilon)), y);
    case Condition::kPgd: return compute_metrics(predict_labels(params, pgd(params, x, y, attack)), y);
    case Condition::kTransfer:
      if (!transfer_x) throw Error("transfer condition needs surrogate examples");
      return compute_metrics(predict_labels(params, *transfer_x), y);
  }
  throw Error("unhandled condition");
}

EvalReport run_comparison(const Splits& splits, const ExperimentConfig& cfg, const TrainedHook& hook) {
  validate(splits, cfg);
  if (cfg.models.empty()) throw Error("comparison needs at least one model");
  const Tensor& x = splits.test.x;
  const std::vector<int>& y = splits.test.y;
  const bool want_transfer =
      std::find(cfg.conditions.begin(), cfg.conditions.end(), Condition::kTransfer) != cfg.conditions.end();

  EvalReport report;
  report.experiment = "comparison";
  report.seeds = cfg.seeds;
  report.conditions = cfg.conditions;
  report.settings = describe(cfg);
  for (ModelKind m : cfg.models) report.rows.emplace_back(to_string(m));
  for (const std::string& row : report.rows) {
    for (Condition c : cfg.conditions) report.cells.push_back({.row = row, .condition = c});
  }
  const auto slot = [&](std::size_t model, std::size_t cond) -> Cell& {
    return report.cells[model * cfg.conditions.size() + cond];
  };

  for (std::uint64_t seed : cfg.seeds) {
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    const AttackConfig atk = eval_attack(cfg, seed);

    std::optional<Tensor> transfer_x;
    if (want_transfer) {
      TrainConfig sc = tc;
      sc.seed = surrogate_seed(seed);
      transfer_x = annotated("surrogate/seed " + std::to_string(seed), [&] {
        TrainResult surrogate = train(ModelKind::kVanilla, splits.train, sc, cfg.weights);
        return pgd(surrogate.params, x, y, atk);
      });
    }

    for (std::size_t mi = 0; mi < cfg.models.size(); ++mi) {
      const ModelKind kind = cfg.models[mi];
      const std::string where = std::string(to_string(kind)) + "/seed " + std::to_string(seed);
      spdlog::info("training {}", where);
      TrainResult r = annotated(where, [&] { return train(kind, splits.train, tc, cfg.weights); });
      if (hook) hook(to_string(kind), seed, r);
      report.runs.push_back({.row = std::string(to_string(kind)),
                             .seed = seed,
                             .epochs = r.epochs,
                             .final_layer_weights = r.params.layer_weight_values()});

      for (std::size_t ci = 0; ci < cfg.conditions.size(); ++ci) {
        const Condition c = cfg.conditions[ci];
        const std::string cell_where = where + "/" + std::string(to_string(c));
        const Metrics m = annotated(cell_where, [&] {
          return evaluate_condition(r.params, x, y, c, atk, transfer_x ? &*transfer_x : nullptr);
        });
        slot(mi, ci).per_seed.push_back(m);
      }

      if (kind == ModelKind::kLarar && r.params.has_aux()) {
        if (!report.early_exit) {
          report.early_exit = EarlyExitStats{.threshold = cfg.early_exit_threshold,
                                             .full_macs = full_forward_macs(r.params.arch)};
        }
        const EarlyExitResult ee = early_exit_infer(r.params, x, cfg.early_exit_threshold);
        const std::vector<int> full = predict_labels(r.params, x);
        std::size_t exited = 0, agree = 0;
        for (std::size_t i = 0; i < full.size(); ++i) {
          if (ee.exit_layer[i] <= r.params.num_hidden()) {
            ++exited;
            agree += ee.labels[i] == full[i] ? 1 : 0;
          }
        }
        report.early_exit->fraction.push_back(ee.early_exit_fraction(r.params.num_hidden()));
        report.early_exit->mean_macs.push_back(ee.mean_macs());
        report.early_exit->agreement.push_back(
            exited ? static_cast<double>(agree) / static_cast<double>(exited) : 1.0);
      }
    }
  }
  for (Cell& c : report.cells) finalize(c);
  return report;
}

Components ablation_components(std::string_view v) {
  Components c = Components::for_kind(ModelKind::kBaseAdvnn);
  if (v == "base") return c;
  if (v == "lvs-only") {
    c.lvs_penalty = true;
  } else if (v == "adaptive-only") {
    c.adaptive_weights = true;
  } else if (v == "auxiliary-only") {
    c.aux = true;
  } else if (v == "lvs+adaptive") {
    c.lvs_penalty = true;
    c.adaptive_weights = true;
  } else if (v == "all") {
    c = Components::for_kind(ModelKind::kLarar);
  } else {
    throw Error("unknown ablation variant '" + std::string(v) +
                "' (expected base, lvs-only, adaptive-only, auxiliary-only, lvs+adaptive or all)");
  }
  return c;
}

EvalReport run_ablation(const Splits& splits, const ExperimentConfig& cfg,
                        std::span<const std::string> variants, const TrainedHook& hook) {
  validate(splits, cfg);
  if (variants.empty()) throw Error("ablation needs at least one variant");
  std::vector<Components> comps;
  for (const std::string& v : variants) comps.push_back(ablation_components(v));

  EvalReport report;
  report.experiment = "ablation";
  report.seeds = cfg.seeds;
  report.conditions = {Condition::kPgd};
  report.settings = describe(cfg);
  for (const std::string& v : variants) {
    report.rows.push_back(v);
    report.cells.push_back({.row = v, .condition = Condition::kPgd});
  }
  const Tensor& x = splits.test.x;
  const std::vector<int>& y = splits.test.y;

  for (std::uint64_t seed : cfg.seeds) {
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    const AttackConfig atk = eval_attack(cfg, seed);
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      const std::string where = variants[vi] + "/seed " + std::to_string(seed);
      spdlog::info("training {}", where);
      tc.components = comps[vi];
      const ModelKind kind = comps[vi].aux ? ModelKind::kLarar : ModelKind::kBaseAdvnn;
      TrainResult r = annotated(where, [&] { return train(kind, splits.train, tc, cfg.weights); });
      if (hook) hook(variants[vi], seed, r);
      report.runs.push_back({.row = variants[vi],
                             .seed = seed,
                             .epochs = r.epochs,
                             .final_layer_weights = r.params.layer_weight_values()});
      report.cells[vi].per_seed.push_back(
          annotated(where + "/pgd", [&] { return evaluate_condition(r.params, x, y, Condition::kPgd, atk); }));
    }
  }
  for (Cell& c : report.cells) finalize(c);
  return report;
}

}  // namespace larar
