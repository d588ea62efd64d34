// larar: train, attack, evaluate and inspect layer-wise adversarially
// regularized intrusion detectors.

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "larar/checkpoint.hpp"
#include "larar/errors.hpp"
#include "larar/harness.hpp"
#include "larar/report.hpp"
#include "larar/run_config.hpp"

#ifndef LARAR_GIT_DESCRIBE
#define LARAR_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using namespace larar;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flags override the config file, which overrides the defaults.
struct Flags {
  std::string config;
  std::optional<std::string> model, csv, cache, synth, label_column, positive_label, out, formats, seeds,
      conditions, variants, mode;
  std::optional<double> train_fraction, calibration_fraction, lr, epsilon, pgd_step, lambda_aux, lambda_ga,
      lambda_fs, beta, attack_epsilon, attack_alpha, k, lambda, early_exit_threshold;
  std::optional<int> epochs, pgd_iterations, attack_iterations;
  std::optional<std::size_t> batch_size;
  std::optional<std::uint64_t> split_seed;
  bool no_curriculum = false;
  bool clamp_weights = false;
  bool no_stratify = false;
  bool no_random_init = false;

  // Subcommand specific.
  std::string checkpoint;
  std::string surrogate;
  std::string method = "pgd";
  std::string save_adversarial;
  std::string detect_attack = "none";
  std::string detect_output;
};

void add_data_flags(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "INI config file")->check(CLI::ExistingFile);
  app->add_option("--data", f.csv, "CSV dataset path");
  app->add_option("--cache", f.cache, "preprocessed cache written by `ingest`");
  app->add_option("--synth", f.synth, "synthetic dataset, e.g. n=2000,d=10,sep=6");
  app->add_option("--label-column", f.label_column, "label column name");
  app->add_option("--positive-label", f.positive_label, "label value mapped to 1 for string labels");
  app->add_option("--train-fraction", f.train_fraction, "train share of the data");
  app->add_option("--calibration-fraction", f.calibration_fraction, "share of train held out for calibration");
  app->add_option("--split-seed", f.split_seed, "split shuffling seed");
  app->add_flag("--no-stratify", f.no_stratify, "plain random split");
  app->add_option("--out", f.out, "output directory (default $LARAR_OUT_DIR or ./larar-out)");
  app->add_option("--seeds", f.seeds, "comma-separated run seeds");
}

void add_train_flags(CLI::App* app, Flags& f) {
  app->add_option("--model", f.model, "vanilla, base-advnn or larar");
  app->add_option("--epochs", f.epochs, "training epochs");
  app->add_option("--batch-size", f.batch_size, "mini-batch size");
  app->add_option("--lr", f.lr, "Adam learning rate");
  app->add_option("--epsilon", f.epsilon, "maximum training perturbation");
  app->add_option("--pgd-iterations", f.pgd_iterations, "PGD steps during training");
  app->add_option("--pgd-step", f.pgd_step, "PGD step size during training");
  app->add_flag("--no-curriculum", f.no_curriculum, "train at the full epsilon from epoch 1");
  app->add_flag("--clamp-weights", f.clamp_weights, "clamp layer weights at zero");
  app->add_option("--lambda-aux", f.lambda_aux, "auxiliary loss weight");
  app->add_option("--lambda-ga", f.lambda_ga, "gradient alignment weight");
  app->add_option("--lambda-fs", f.lambda_fs, "feature smoothing weight");
  app->add_option("--beta", f.beta, "layer vulnerability penalty weight");
}

void add_attack_flags(CLI::App* app, Flags& f) {
  app->add_option("--attack-epsilon", f.attack_epsilon, "evaluation attack budget");
  app->add_option("--attack-alpha", f.attack_alpha, "evaluation PGD step size");
  app->add_option("--attack-iterations", f.attack_iterations, "evaluation PGD steps");
  app->add_flag("--no-random-init", f.no_random_init, "start PGD at the clean input");
  app->add_option("--formats", f.formats, "report formats: json,markdown,csv");
}

void add_detection_flags(CLI::App* app, Flags& f) {
  app->add_option("--k", f.k, "threshold multiplier on the standard deviation");
  app->add_option("--lambda", f.lambda, "threshold multiplier on the calibration maximum");
  app->add_option("--mode", f.mode, "detection mode: paired or proxy");
  app->add_option("--early-exit-threshold", f.early_exit_threshold, "aux-head confidence for early exit");
}

template <typename T, typename U>
void overlay(const std::optional<T>& flag, U& target) {
  if (flag) target = *flag;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

RunConfig resolve(const Flags& f, RunConfig base = {}) {
  if (const char* env = std::getenv("LARAR_OUT_DIR"); env && base.out_dir.empty()) base.out_dir = env;
  RunConfig c = f.config.empty() ? std::move(base) : load_config(f.config, std::move(base));
  // A data source on the command line replaces any source from the file.
  if (f.csv || f.cache || f.synth) c.data.csv.clear(), c.data.cache.clear(), c.data.synth.reset();
  overlay(f.csv, c.data.csv);
  overlay(f.cache, c.data.cache);
  if (f.synth) c.data.synth = parse_synth_spec(*f.synth);
  overlay(f.label_column, c.data.hints.label_column);
  if (f.positive_label) c.data.hints.positive_label = *f.positive_label;
  overlay(f.train_fraction, c.split.train_fraction);
  overlay(f.calibration_fraction, c.split.calibration_fraction);
  overlay(f.split_seed, c.split.seed);
  if (f.no_stratify) c.split.stratified = false;
  overlay(f.out, c.out_dir);
  if (f.seeds) {
    c.seeds.clear();
    for (const std::string& s : split_csv(*f.seeds)) {
      try {
        c.seeds.push_back(std::stoull(s));
      } catch (const std::exception&) {
        throw UsageError("--seeds: '" + s + "' is not an unsigned integer");
      }
    }
    if (c.seeds.empty()) throw UsageError("--seeds needs at least one seed");
  }
  if (f.model) {
    parse_model_kind(*f.model);
    c.model = *f.model;
  }
  overlay(f.epochs, c.train.epochs);
  overlay(f.batch_size, c.train.batch_size);
  overlay(f.lr, c.train.learning_rate);
  overlay(f.epsilon, c.train.epsilon_max);
  overlay(f.pgd_iterations, c.train.pgd_iterations);
  overlay(f.pgd_step, c.train.pgd_step);
  if (f.no_curriculum) c.train.curriculum = false;
  if (f.clamp_weights) c.train.clamp_layer_weights = true;
  overlay(f.lambda_aux, c.weights.aux);
  overlay(f.lambda_ga, c.weights.ga);
  overlay(f.lambda_fs, c.weights.fs);
  overlay(f.beta, c.weights.beta);
  overlay(f.attack_epsilon, c.attack.epsilon);
  overlay(f.attack_alpha, c.attack.alpha);
  overlay(f.attack_iterations, c.attack.iterations);
  if (f.no_random_init) c.attack.random_init = false;
  overlay(f.k, c.detection.k);
  overlay(f.lambda, c.detection.lambda);
  if (f.mode) c.detection.mode = parse_detection_mode(*f.mode);
  overlay(f.early_exit_threshold, c.detection.early_exit_threshold);
  if (f.formats) c.formats = split_csv(*f.formats);
  if (f.conditions) c.conditions = split_csv(*f.conditions);
  if (f.variants) c.variants = split_csv(*f.variants);
  for (const std::string& fmt_name : c.formats) parse_report_format(fmt_name);
  if (c.out_dir.empty()) c.out_dir = "larar-out";
  return c;
}

void require_data(const RunConfig& c) {
  if (c.data.empty()) throw UsageError("no dataset: pass --data PATH, --cache PATH or --synth n=..,d=..,sep=..");
}

fs::path prepare_out(const RunConfig& c, std::string_view command) {
  const fs::path dir = c.out_dir;
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "config.ini", std::ios::trunc);
    f << to_ini(c);
    if (!f) throw Error("cannot write " + (dir / "config.ini").string());
  }
  nlohmann::ordered_json run = {{"command", command},
                                {"seeds", c.seeds},
                                {"git_describe", LARAR_GIT_DESCRIBE},
                                {"config", "config.ini"}};
  std::ofstream f(dir / "run.json", std::ios::trunc);
  f << run.dump(2) << '\n';
  if (!f) throw Error("cannot write " + (dir / "run.json").string());
  return dir;
}

void emit_all(const EvalReport& report, const RunConfig& c, const fs::path& dir, std::string_view stem) {
  for (const std::string& name : c.formats) {
    const ReportFormat f = parse_report_format(name);
    fs::path path;
    switch (f) {
      case ReportFormat::kJson: path = dir / fmt::format("{}.json", stem); break;
      case ReportFormat::kMarkdown: path = dir / fmt::format("{}.md", stem); break;
      case ReportFormat::kCsv: path = dir / "epochs"; break;
    }
    emit_report(report, f, path);
    spdlog::info("wrote {}", path.string());
  }
}

int cmd_train(const Flags& f) {
  RunConfig c = resolve(f);
  require_data(c);
  const fs::path dir = prepare_out(c, "train");
  const Splits splits = load_splits(c);
  TrainConfig tc = c.train;
  tc.seed = c.seeds.front();
  const ModelKind kind = parse_model_kind(c.model);
  spdlog::info("training {} on {} rows x {} features (seed {})", c.model, splits.train.rows(), splits.train.cols(),
               tc.seed);
  TrainResult r = train(kind, splits.train, tc, c.weights);
  AttackConfig calib_attack = c.attack;
  calib_attack.seed = attack_seed(tc.seed);
  Checkpoint ckpt{.params = r.params,
                  .calibration = calibrate_thresholds(r.params, splits.calibration.x, calib_attack, c.detection.k,
                                                      c.detection.lambda),
                  .metadata = to_ini(c)};
  save_checkpoint(ckpt, dir / "model.larar");
  write_epoch_csv(r.epochs, dir / "epochs.csv");
  const double clean = accuracy(predict_labels(r.params, splits.test.x), splits.test.y);
  std::cout << fmt::format("model={} clean_accuracy={:.4f} checkpoint={}\n", c.model, clean,
                           (dir / "model.larar").string());
  return kExitOk;
}

// Base config for commands that start from a checkpoint: the stored run
// config, then the file, then flags.
std::pair<RunConfig, Checkpoint> resolve_with_checkpoint(const Flags& f) {
  if (f.checkpoint.empty()) throw UsageError("--checkpoint is required");
  Checkpoint ckpt = load_checkpoint(f.checkpoint);
  RunConfig stored;
  if (!ckpt.metadata.empty()) {
    std::istringstream in(ckpt.metadata);
    stored = parse_config(in);
  }
  stored.model = std::string(to_string(ckpt.params.kind()));
  if (!f.out) stored.out_dir.clear();
  RunConfig c = resolve(f, std::move(stored));
  return {std::move(c), std::move(ckpt)};
}

EvalReport single_model_report(const NetworkParams& params, const Splits& splits, const RunConfig& c,
                               const std::vector<Condition>& conditions, const NetworkParams* surrogate) {
  const std::uint64_t seed = c.seeds.front();
  AttackConfig atk = c.attack;
  atk.seed = attack_seed(seed);
  std::optional<Tensor> transfer_x;
  EvalReport report;
  report.experiment = "comparison";
  report.seeds = {seed};
  report.rows = {std::string(to_string(params.kind()))};
  for (Condition cond : conditions) {
    if (cond == Condition::kTransfer) {
      if (!surrogate) throw UsageError("the transfer condition needs --surrogate CHECKPOINT");
      if (!transfer_x) transfer_x = pgd(*surrogate, splits.test.x, splits.test.y, atk);
    }
    Cell cell{.row = report.rows.front(), .condition = cond};
    const Metrics m = evaluate_condition(params, splits.test.x, splits.test.y, cond, atk,
                                         transfer_x ? &*transfer_x : nullptr);
    cell.per_seed = {m};
    cell.accuracy_mean = m.accuracy;
    cell.precision_mean = m.precision;
    cell.recall_mean = m.recall;
    cell.f1_mean = m.f1;
    report.cells.push_back(std::move(cell));
    report.conditions.push_back(cond);
  }
  return report;
}

int cmd_evaluate(const Flags& f) {
  auto [c, ckpt] = resolve_with_checkpoint(f);
  require_data(c);
  const fs::path dir = prepare_out(c, "evaluate");
  const Splits splits = load_splits(c);
  std::optional<Checkpoint> sur;
  if (!f.surrogate.empty()) sur = load_checkpoint(f.surrogate);
  std::vector<Condition> conditions;
  for (const std::string& name : c.conditions) {
    const Condition cond = parse_condition(name);
    if (cond == Condition::kTransfer && !sur) {
      spdlog::warn("skipping the transfer condition: no --surrogate checkpoint given");
      continue;
    }
    conditions.push_back(cond);
  }
  const EvalReport report = single_model_report(ckpt.params, splits, c, conditions, sur ? &sur->params : nullptr);
  emit_all(report, c, dir, "evaluation");
  for (const Cell& cell : report.cells) {
    std::cout << fmt::format("{} {} accuracy={:.4f}\n", cell.row, to_string(cell.condition), cell.accuracy_mean);
  }
  return kExitOk;
}

int cmd_attack(const Flags& f) {
  auto [c, ckpt] = resolve_with_checkpoint(f);
  require_data(c);
  const fs::path dir = prepare_out(c, "attack");
  const Splits splits = load_splits(c);
  const Condition cond = parse_condition(f.method);
  if (cond == Condition::kClean) throw UsageError("--method must be fgsm, pgd or transfer");
  std::optional<Checkpoint> sur;
  if (!f.surrogate.empty()) sur = load_checkpoint(f.surrogate);
  const EvalReport report =
      single_model_report(ckpt.params, splits, c, {Condition::kClean, cond}, sur ? &sur->params : nullptr);
  emit_all(report, c, dir, "attack");
  if (!f.save_adversarial.empty()) {
    AttackConfig atk = c.attack;
    atk.seed = attack_seed(c.seeds.front());
    Tensor adv;
    switch (cond) {
      case Condition::kFgsm: adv = fgsm(ckpt.params, splits.test.x, splits.test.y, atk.epsilon); break;
      case Condition::kPgd: adv = pgd(ckpt.params, splits.test.x, splits.test.y, atk); break;
      default: adv = pgd(sur->params, splits.test.x, splits.test.y, atk); break;
    }
    std::ofstream out(f.save_adversarial, std::ios::trunc);
    if (!out) throw Error("cannot write " + f.save_adversarial);
    for (std::size_t j = 0; j < adv.cols(); ++j) out << (j ? "," : "") << splits.test.columns[j].name;
    out << ",label\n";
    for (std::size_t i = 0; i < adv.rows(); ++i) {
      for (std::size_t j = 0; j < adv.cols(); ++j) out << (j ? "," : "") << fmt::format("{}", adv(i, j));
      out << ',' << splits.test.y[i] << '\n';
    }
  }
  const Cell& clean = report.cell(report.rows.front(), Condition::kClean);
  const Cell& attacked = report.cell(report.rows.front(), cond);
  std::cout << fmt::format("{} clean={:.4f} {}={:.4f} asr={:.4f}\n", report.rows.front(), clean.accuracy_mean,
                           to_string(cond), attacked.accuracy_mean,
                           attack_success_rate(clean.accuracy_mean, attacked.accuracy_mean));
  return kExitOk;
}

int cmd_ablate(const Flags& f) {
  RunConfig c = resolve(f);
  require_data(c);
  const fs::path dir = prepare_out(c, "ablate");
  const Splits splits = load_splits(c);
  const EvalReport report = run_ablation(splits, c.experiment(), c.variants);
  emit_all(report, c, dir, "ablation");
  for (const Cell& cell : report.cells) {
    std::cout << fmt::format("{} pgd={:.4f} ± {:.4f}\n", cell.row, cell.accuracy_mean, cell.accuracy_std);
  }
  return kExitOk;
}

int cmd_compare(const Flags& f) {
  RunConfig c = resolve(f);
  require_data(c);
  const fs::path dir = prepare_out(c, "compare");
  const Splits splits = load_splits(c);
  const EvalReport report = run_comparison(splits, c.experiment());
  emit_all(report, c, dir, "comparison");
  std::cout << report_to_markdown(report);
  return kExitOk;
}

int cmd_detect(const Flags& f) {
  auto [c, ckpt] = resolve_with_checkpoint(f);
  require_data(c);
  if (!ckpt.calibration || !ckpt.calibration->calibrated()) {
    throw CalibrationMissingError("checkpoint '" + f.checkpoint +
                                  "' has no calibrated thresholds; retrain with `larar train` to calibrate");
  }
  const Splits splits = load_splits(c);
  const Tensor& x_ref = splits.test.x;
  AttackConfig atk = c.attack;
  atk.seed = attack_seed(c.seeds.front());
  Tensor x;
  if (f.detect_attack == "none") {
    x = x_ref;
  } else if (f.detect_attack == "fgsm") {
    x = fgsm(ckpt.params, x_ref, splits.test.y, atk.epsilon);
  } else if (f.detect_attack == "pgd") {
    x = pgd(ckpt.params, x_ref, splits.test.y, atk);
  } else {
    throw UsageError("--attack must be none, fgsm or pgd");
  }
  const auto verdicts = detect(ckpt.params, x, *ckpt.calibration, c.detection.mode, &x_ref);
  std::ofstream file;
  if (!f.detect_output.empty()) {
    file.open(f.detect_output, std::ios::trunc);
    if (!file) throw Error("cannot write " + f.detect_output);
  }
  std::ostream& out = f.detect_output.empty() ? std::cout : file;
  std::size_t flagged = 0;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    const DetectionVerdict& v = verdicts[i];
    flagged += v.flagged ? 1 : 0;
    nlohmann::ordered_json line = {{"index", i},
                                   {"flagged", v.flagged},
                                   {"triggering_layers", v.triggering_layers},
                                   {"scores", v.scores},
                                   {"label", splits.test.y[i]}};
    out << line.dump() << '\n';
  }
  spdlog::info("{} of {} samples flagged ({} mode)", flagged, verdicts.size(), to_string(c.detection.mode));
  return kExitOk;
}

int cmd_ingest(const Flags& f) {
  RunConfig c = resolve(f);
  if (c.data.csv.empty()) throw UsageError("ingest needs --data PATH");
  const fs::path dir = prepare_out(c, "ingest");
  const RawTable raw = ingest_csv(c.data.csv, c.data.hints);
  const Splits splits = preprocess(raw, c.split);
  save_cache(splits, dir / "data.larar-cache");
  nlohmann::ordered_json schema = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < raw.num_cols(); ++i) {
    schema.push_back({{"name", raw.names[i]}, {"kind", to_string(raw.kinds[i])}});
  }
  nlohmann::ordered_json summary = {{"rows", splits.total_rows},
                                    {"train", splits.train.rows()},
                                    {"calibration", splits.calibration.rows()},
                                    {"test", splits.test.rows()},
                                    {"features", splits.train.cols()},
                                    {"unseen_categories", splits.unseen_categories},
                                    {"columns", schema}};
  std::ofstream out(dir / "schema.json", std::ios::trunc);
  out << summary.dump(2) << '\n';
  std::cout << fmt::format("rows={} features={} cache={}\n", splits.total_rows, splits.train.cols(),
                           (dir / "data.larar-cache").string());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_pattern("[%l] %v");
  CLI::App app{"Layer-wise adversarial robustness toolkit for tabular intrusion detection"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", LARAR_GIT_DESCRIBE);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "only print warnings and errors");
  Flags f;

  auto* train_cmd = app.add_subcommand("train", "train a model and calibrate its detector");
  add_data_flags(train_cmd, f);
  add_train_flags(train_cmd, f);
  add_attack_flags(train_cmd, f);
  add_detection_flags(train_cmd, f);

  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on clean and attacked test data");
  add_data_flags(eval_cmd, f);
  add_attack_flags(eval_cmd, f);
  eval_cmd->add_option("--checkpoint", f.checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--surrogate", f.surrogate, "surrogate checkpoint for the transfer condition");
  eval_cmd->add_option("--conditions", f.conditions, "clean,fgsm,pgd,transfer");

  auto* attack_cmd = app.add_subcommand("attack", "attack a checkpoint and report the success rate");
  add_data_flags(attack_cmd, f);
  add_attack_flags(attack_cmd, f);
  attack_cmd->add_option("--checkpoint", f.checkpoint, "model checkpoint")->required();
  attack_cmd->add_option("--method", f.method, "fgsm, pgd or transfer")->check(CLI::IsMember({"fgsm", "pgd", "transfer"}));
  attack_cmd->add_option("--surrogate", f.surrogate, "surrogate checkpoint for transfer attacks");
  attack_cmd->add_option("--save-adversarial", f.save_adversarial, "write adversarial test rows as CSV");

  auto* ablate_cmd = app.add_subcommand("ablate", "train component variants and compare PGD accuracy");
  add_data_flags(ablate_cmd, f);
  add_train_flags(ablate_cmd, f);
  add_attack_flags(ablate_cmd, f);
  ablate_cmd->add_option("--variants", f.variants, "comma-separated variant names");

  auto* compare_cmd = app.add_subcommand("compare", "train all three models and build the comparison tables");
  add_data_flags(compare_cmd, f);
  add_train_flags(compare_cmd, f);
  add_attack_flags(compare_cmd, f);
  add_detection_flags(compare_cmd, f);
  compare_cmd->add_option("--conditions", f.conditions, "clean,fgsm,pgd,transfer");

  auto* detect_cmd = app.add_subcommand("detect", "stream per-sample detection verdicts as JSON lines");
  add_data_flags(detect_cmd, f);
  add_attack_flags(detect_cmd, f);
  add_detection_flags(detect_cmd, f);
  detect_cmd->add_option("--checkpoint", f.checkpoint, "calibrated model checkpoint")->required();
  detect_cmd->add_option("--attack", f.detect_attack, "perturb the test rows first: none, fgsm or pgd");
  detect_cmd->add_option("--output", f.detect_output, "JSON lines file (default stdout)");

  auto* ingest_cmd = app.add_subcommand("ingest", "parse, split and cache a CSV dataset");
  add_data_flags(ingest_cmd, f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*train_cmd) return cmd_train(f);
    if (*eval_cmd) return cmd_evaluate(f);
    if (*attack_cmd) return cmd_attack(f);
    if (*ablate_cmd) return cmd_ablate(f);
    if (*compare_cmd) return cmd_compare(f);
    if (*detect_cmd) return cmd_detect(f);
    if (*ingest_cmd) return cmd_ingest(f);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CalibrationMissingError& e) {
    std::cerr << "error: calibration missing: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
