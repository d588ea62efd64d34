// Acceptance gate: runs every criterion that the bundled data can exercise
// and prints one PASS/FAIL line per criterion.
//
//   larar_acceptance --golden-dir DIR [--update-golden] [--only N]

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "larar/attacks.hpp"
#include "larar/autodiff.hpp"
#include "larar/data.hpp"
#include "larar/harness.hpp"
#include "larar/losses.hpp"
#include "larar/report.hpp"
#include "larar/training.hpp"
#include "larar/vulnerability.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace larar;
using larar::testing::central_difference;
using larar::testing::close_rel;
using larar::testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Synthetic dataset shared by the training-based criteria: unit-variance
// blobs one unit apart per coordinate, where eps = 0.3 attacks flip a
// sizeable share of predictions.
constexpr std::size_t kSynthN = 2000;
constexpr std::size_t kSynthD = 10;
constexpr double kSynthSep = 1.0;

const Splits& synthetic() {
  static const Splits s = [] {
    SplitSpec spec;
    return preprocess(synth_dataset(kSynthN, kSynthD, kSynthSep, 0), spec);
  }();
  return s;
}

// Reference-default LARAR run on the synthetic data (criteria 4 and 5).
const TrainResult& larar_run() {
  static const TrainResult r = [] {
    TrainConfig cfg;
    cfg.seed = 0;
    return train(ModelKind::kLarar, synthetic().train, cfg);
  }();
  return r;
}

std::vector<int> random_labels(std::size_t n, std::mt19937_64& rng) {
  std::vector<int> y(n);
  for (int& v : y) v = std::bernoulli_distribution(0.5)(rng) ? 1 : 0;
  return y;
}

// ---- 1 ---------------------------------------------------------------------

struct FdTally {
  std::size_t compared = 0;
  std::size_t failed = 0;
  std::size_t kinks = 0;
  double worst = 0.0;

  void add(double analytic, double fd, double fd_fine, double tol, double floor) {
    if (!close_rel(fd, fd_fine, tol, floor)) {
      ++kinks;
      return;
    }
    ++compared;
    const double diff = std::abs(analytic - fd);
    if (diff > floor) worst = std::max(worst, diff / std::max(std::abs(analytic), std::abs(fd)));
    if (!close_rel(analytic, fd, tol, floor)) ++failed;
  }
};

FdTally op_gradients() {
  using Op = std::function<ad::Var(const std::vector<ad::Var>&)>;
  struct Case {
    std::vector<Shape> shapes;
    Op op;
    double lo, hi;  // input magnitude range, sign random
  };
  const std::vector<Case> cases = {
      {{{3, 4}, {4, 2}}, [](const auto& v) { return ad::matmul(v[0], v[1]); }, 0.0, 1.0},
      {{{3, 4}, {1, 4}}, [](const auto& v) { return ad::add_row(v[0], v[1]); }, 0.0, 1.0},
      {{{3, 4}, {1, 4}}, [](const auto& v) { return ad::mul_row(v[0], v[1]); }, 0.0, 1.0},
      {{{3, 4}, {3, 4}}, [](const auto& v) { return ad::sub(v[0], v[1]); }, 0.0, 1.0},
      {{{3, 4}, {3, 4}}, [](const auto& v) { return ad::mul(v[0], v[1]); }, 0.0, 1.0},
      {{{3, 4}}, [](const auto& v) { return ad::relu(v[0]); }, 0.1, 2.0},
      {{{3, 4}}, [](const auto& v) { return ad::sigmoid(v[0]); }, 0.0, 3.0},
      {{{3, 4}}, [](const auto& v) { return ad::square(v[0]); }, 0.0, 1.0},
      {{{3, 4}}, [](const auto& v) { return ad::sum(v[0]); }, 0.0, 1.0},
      {{{3, 4}}, [](const auto& v) { return ad::mean(v[0]); }, 0.0, 1.0},
      {{{3, 4}}, [](const auto& v) { return ad::l2_norm_rows(v[0]); }, 0.1, 1.0},
      {{{3, 4}}, [](const auto& v) { return ad::log(ad::square(v[0])); }, 0.5, 2.0},
      {{{3, 4}}, [](const auto& v) { return ad::sqrt(ad::square(v[0])); }, 0.5, 2.0},
      {{{3, 4}}, [](const auto& v) { return ad::reciprocal(v[0]); }, 0.5, 2.0},
  };
  FdTally tally;
  for (const Case& c : cases) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed);
      std::vector<ad::Var> leaves;
      for (const Shape& s : c.shapes) {
        Tensor t(s.rows, s.cols);
        for (double& v : t.values()) {
          const double m = std::uniform_real_distribution<double>(c.lo, c.hi)(rng);
          v = std::bernoulli_distribution(0.5)(rng) ? m : -m;
        }
        leaves.push_back(ad::Var::leaf(t));
      }
      const Tensor out = c.op(leaves).value();
      const Tensor r = random_tensor(out.rows(), out.cols(), rng);
      const ad::GradMap g = ad::backward(ad::sum(ad::mul(c.op(leaves), ad::Var::constant(r))));
      auto f = [&] {
        ad::NoGradGuard guard;
        const Tensor o = c.op(leaves).value();
        double s = 0.0;
        for (std::size_t i = 0; i < o.size(); ++i) s += o[i] * r[i];
        return s;
      };
      for (ad::Var& leaf : leaves) {
        const Tensor fd = central_difference(leaf, f, 1e-5);
        const Tensor fine = central_difference(leaf, f, 1e-6);
        const Tensor an = g.get(leaf);
        for (std::size_t i = 0; i < fd.size(); ++i) tally.add(an[i], fd[i], fine[i], 1e-4, 1e-9);
      }
    }
  }
  return tally;
}

FdTally objective_gradients() {
  const Components all = Components::for_kind(ModelKind::kLarar);
  FdTally tally;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const bool with_bn = seed % 2 == 1;
    Architecture a;
    a.kind = ModelKind::kLarar;
    a.input_dim = with_bn ? 2 : 3;
    a.hidden_dims = {2};
    a.batchnorm = with_bn;
    a.aux_heads = true;
    NetworkParams p;
    Tensor x, xa;
    for (std::uint64_t attempt = 0;; ++attempt) {
      p = init_network(a, seed * 1000 + attempt);
      x = random_tensor(6, a.input_dim, rng, -2, 2);
      xa = x;
      for (double& v : xa.values()) v += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
      const Tensor h = forward(p, x, Mode::kTrain).hidden[0].value();
      bool ok = true;
      for (std::size_t i = 0; i < h.rows(); ++i) ok = ok && std::hypot(h(i, 0), h(i, 1)) > 0.05;
      if (ok || attempt == 1000) break;
    }
    p.layer_weights[0].assign(Tensor::scalar(std::uniform_real_distribution<double>(0.5, 1.5)(rng)));
    std::vector<int> y = random_labels(6, rng);
    y[0] = 0;
    y[1] = 1;
    const ad::GradMap g = ad::backward(batch_loss(p, x, xa, y, all, {}).total);
    auto f = [&] { return batch_loss(p, x, xa, y, all, {}).total.value().item(); };
    std::vector<ad::Var> leaves = p.parameters();
    leaves.push_back(p.layer_weights[0]);
    for (ad::Var& leaf : leaves) {
      const Tensor fd = central_difference(leaf, f, 1e-5);
      const Tensor fine = central_difference(leaf, f, 1e-6);
      const Tensor an = g.get(leaf);
      for (std::size_t i = 0; i < fd.size(); ++i) tally.add(an[i], fd[i], fine[i], 1e-3, 1e-7);
    }
  }
  return tally;
}

Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const FdTally ops = op_gradients();
  const FdTally obj = objective_gradients();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = ops.failed == 0 && obj.failed == 0 && ops.kinks * 100 <= ops.compared &&
                    obj.kinks * 100 <= obj.compared && secs < 30.0;
  return {pass, fmt::format("ops {} entries worst rel {:.2e} (tol 1e-4); objective 100 nets {} entries worst "
                            "rel {:.2e} (tol 1e-3); kink skips {}+{}; {:.1f}s",
                            ops.compared, ops.worst, obj.compared, obj.worst, ops.kinks, obj.kinks, secs)};
}

// ---- 2 ---------------------------------------------------------------------

Outcome criterion_attacks() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t samples = 0, violations = 0, fgsm_mismatch = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    Architecture a = Architecture::standard(ModelKind::kLarar, 8);
    a.hidden_dims = {16, 8};
    a.batchnorm = false;
    const NetworkParams p = init_network(a, seed);
    const Tensor x = random_tensor(100, 8, rng, -20, 20);
    const std::vector<int> y = random_labels(100, rng);
    const double eps = std::uniform_real_distribution<double>(1e-4, 1.0)(rng);
    samples += x.rows();
    auto count = [&](const Tensor& adv) {
      for (std::size_t i = 0; i < adv.size(); ++i) violations += std::abs(adv[i] - x[i]) <= eps ? 0 : 1;
    };
    const Tensor f = fgsm(p, x, y, eps);
    count(f);
    AttackConfig cfg{.epsilon = eps, .alpha = eps / 4.0, .iterations = 10, .random_init = true, .seed = seed};
    (void)pgd(p, x, y, cfg, [&](int, const Tensor& it) { count(it); });
    AttackConfig one{.epsilon = eps, .alpha = eps, .iterations = 1, .random_init = false, .seed = seed};
    fgsm_mismatch += bit_equal(pgd(p, x, y, one), f) ? 0 : 1;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {violations == 0 && fgsm_mismatch == 0 && samples >= 10000 && secs < 30.0,
          fmt::format("{} samples, {} ball violations, {} PGD(1)/FGSM mismatches, {:.1f}s", samples, violations,
                      fgsm_mismatch, secs)};
}

// ---- 3 ---------------------------------------------------------------------

Outcome criterion_lvs() {
  double worst = 0.0;
  bool self_zero = true;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    NetworkParams p = init_network(ModelKind::kLarar, 6, seed);
    const Tensor x = random_tensor(32, 6, rng, -2, 2);
    Tensor xa = x;
    for (double& v : xa.values()) v += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    const Mode mode = seed % 2 == 0 ? Mode::kTrain : Mode::kEval;
    if (mode == Mode::kEval) update_running_stats(p, forward(p, x, Mode::kTrain));
    const ForwardTrace tc = forward(p, x, mode);
    const ForwardTrace ta = forward(p, xa, mode);
    const LvsReport r = compute_lvs(tc, ta);
    for (std::size_t l = 0; l < tc.hidden.size(); ++l) {
      const Tensor& h = tc.hidden[l].value();
      const Tensor& ha = ta.hidden[l].value();
      double mean = 0.0;
      for (std::size_t i = 0; i < h.rows(); ++i) {
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < h.cols(); ++j) {
          num += (ha(i, j) - h(i, j)) * (ha(i, j) - h(i, j));
          den += h(i, j) * h(i, j);
        }
        const double v = std::sqrt(num) / (std::sqrt(den) + 1e-8);
        worst = std::max(worst, std::abs(v - r.per_sample[l][i]));
        mean += v;
      }
      mean /= static_cast<double>(h.rows());
      worst = std::max(worst, std::abs(mean - r.batch[l]));
    }
    const LvsReport same = compute_lvs(tc, forward(p, x, mode));
    for (double v : same.batch) self_zero = self_zero && v == 0.0;
    for (const auto& layer : same.per_sample) {
      for (double v : layer) self_zero = self_zero && v == 0.0;
    }
  }
  return {worst <= 1e-12 && self_zero,
          fmt::format("100 random traces, max deviation {:.1e} (tol 1e-12), LVS(x,x)=0 exactly: {}", worst,
                      self_zero ? "yes" : "no")};
}

// ---- 4 ---------------------------------------------------------------------

Outcome criterion_thresholds() {
  const std::vector<double> scores = {0.1, 0.2, 0.3};
  const LayerThreshold t = threshold_from_scores(scores, 2.5, 1.2);
  const double expected = 0.2 + 2.5 * std::sqrt(0.02 / 3.0);
  const bool hand = std::abs(t.tau - expected) <= 1e-6 && std::abs(t.tau - 0.4041) <= 1e-4;

  const Splits& s = synthetic();
  const NetworkParams& p = larar_run().params;
  AttackConfig atk;
  atk.seed = attack_seed(0);
  const CalibrationStats stats = calibrate_thresholds(p, s.calibration.x, atk, 2.5, 1.2);
  std::size_t flags = 0;
  for (const DetectionVerdict& v : detect(p, s.calibration.x, stats, DetectionMode::kProxy)) flags += v.flagged;
  return {hand && flags == 0, fmt::format("tau = {:.7f} (expected {:.7f}); proxy flags on {} calibration samples: {}",
                                          t.tau, expected, s.calibration.rows(), flags)};
}

// ---- 5 (synthetic part) ------------------------------------------------------

Outcome criterion_weights() {
  const TrainResult& r = larar_run();
  bool monotone = true;
  double residual = 0.0;
  std::vector<double> prev(r.params.num_hidden(), 1.0);
  for (const EpochLog& e : r.epochs) {
    for (std::size_t l = 0; l < prev.size(); ++l) {
      monotone = monotone && e.layer_weights[l] <= prev[l];
      prev[l] = e.layer_weights[l];
    }
    residual = std::max(residual, e.max_weight_grad_residual);
  }
  bool below = true;
  for (double w : prev) below = below && w < 1.0;
  return {monotone && below && residual <= 1e-9 && r.epochs.size() == 20,
          fmt::format("20 epochs, non-increasing: {}, final w = ({:.4f}, {:.4f}), max |dL/dw - beta*LVS| = {:.1e}",
                      monotone ? "yes" : "no", prev[0], prev[1], residual)};
}

// ---- 8 ---------------------------------------------------------------------

Outcome criterion_ablation() {
  ExperimentConfig cfg;
  const std::vector<std::string> variants(std::begin(kAblationVariants), std::end(kAblationVariants));
  const EvalReport r = run_ablation(synthetic(), cfg, variants);
  const double base = r.cell("base", Condition::kPgd).accuracy_mean;
  bool pass = r.cell("all", Condition::kPgd).accuracy_mean >= base;
  std::string detail = fmt::format("sep={} 5 seeds PGD:", kSynthSep);
  for (const std::string& v : variants) {
    const double acc = r.cell(v, Condition::kPgd).accuracy_mean;
    if (v != "base" && v != "all") pass = pass && acc >= base - 0.01;
    detail += fmt::format(" {}={:.4f}", v, acc);
  }
  return {pass, detail};
}

// ---- 10 --------------------------------------------------------------------

// Fixed tiny run behind the golden files.
EvalReport golden_run() {
  SplitSpec spec;
  const Splits s = preprocess(synth_dataset(160, 4, 1.5, 7), spec);
  ExperimentConfig cfg;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 32;
  cfg.seeds = {0, 1};
  return run_comparison(s, cfg);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome criterion_golden(const fs::path& dir, bool update) {
  const EvalReport a = golden_run();
  const EvalReport b = golden_run();
  const std::string json = report_to_json(a);
  const std::string md = report_to_markdown(a);
  if (update) {
    fs::create_directories(dir);
    emit_report(a, ReportFormat::kJson, dir / "comparison.json");
    emit_report(a, ReportFormat::kMarkdown, dir / "comparison.md");
  }
  const bool repeat = json == report_to_json(b) && md == report_to_markdown(b);
  const bool json_ok = slurp(dir / "comparison.json") == json;
  const bool md_ok = slurp(dir / "comparison.md") == md;
  return {repeat && json_ok && md_ok,
          fmt::format("repeat identical: {}, json matches golden: {}, markdown matches golden: {}",
                      repeat ? "yes" : "no", json_ok ? "yes" : "no", md_ok ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path golden_dir;
  bool update = false;
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--golden-dir" && i + 1 < argc) {
      golden_dir = argv[++i];
    } else if (arg == "--update-golden") {
      update = true;
    } else if (arg == "--only" && i + 1 < argc) {
      only = std::stoi(argv[++i]);
    } else {
      std::cerr << "usage: larar_acceptance --golden-dir DIR [--update-golden] [--only N]\n";
      return 2;
    }
  }
  if (golden_dir.empty()) {
    std::cerr << "--golden-dir is required\n";
    return 2;
  }
  spdlog::set_level(spdlog::level::warn);

  const std::vector<std::pair<int, std::pair<std::string, std::function<Outcome()>>>> criteria = {
      {1, {"gradient correctness", criterion_gradients}},
      {2, {"attack invariants", criterion_attacks}},
      {3, {"LVS oracle", criterion_lvs}},
      {4, {"threshold arithmetic", criterion_thresholds}},
      {5, {"weight dynamics (synthetic)", criterion_weights}},
      {8, {"ablation direction (synthetic)", criterion_ablation}},
      {10, {"determinism and golden files", [&] { return criterion_golden(golden_dir, update); }}},
  };
  int failures = 0;
  for (const auto& [id, named] : criteria) {
    if (only != 0 && only != id) continue;
    Outcome o;
    try {
      o = named.second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << " " << named.first << ": " << o.detail
              << std::endl;
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
