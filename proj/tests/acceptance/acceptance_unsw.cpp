// Acceptance criteria that need the UNSW-NB15 CSV. Point LARAR_UNSW_NB15 at
// the file; without it every criterion prints SKIP and the binary exits 77.

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "larar/data.hpp"
#include "larar/harness.hpp"

using namespace larar;

namespace {

constexpr std::size_t kExpectedRows = 82332;
constexpr int kSkip = 77;

struct Line {
  std::string name;
  bool pass = false;
  std::string detail;
};

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::vector<const RunLog*> runs_of(const EvalReport& r, const std::string& row) {
  std::vector<const RunLog*> out;
  for (const RunLog& run : r.runs) {
    if (run.row == row) out.push_back(&run);
  }
  return out;
}

Line weights(const EvalReport& r) {
  bool monotone = true;
  double residual = 0.0;
  std::vector<double> w1, w2;
  for (const RunLog* run : runs_of(r, "larar")) {
    std::vector<double> prev(run->final_layer_weights.size(), 1.0);
    for (const EpochLog& e : run->epochs) {
      for (std::size_t l = 0; l < prev.size(); ++l) {
        monotone = monotone && e.layer_weights[l] <= prev[l];
        prev[l] = e.layer_weights[l];
      }
      residual = std::max(residual, e.max_weight_grad_residual);
    }
    w1.push_back(run->final_layer_weights.at(0));
    w2.push_back(run->final_layer_weights.at(1));
  }
  const double m1 = mean(w1), m2 = mean(w2);
  return {"5 weight dynamics (UNSW-NB15)", monotone && residual <= 1e-9 && m1 < m2 && m2 < 0.0,
          fmt::format("non-increasing: {}, max residual {:.1e}, mean final w1 = {:.4f}, w2 = {:.4f}",
                      monotone ? "yes" : "no", residual, m1, m2)};
}

Line reproduction(const EvalReport& r) {
  auto acc = [&](const char* row, Condition c) { return r.cell(row, c).accuracy_mean; };
  const double larar_clean = acc("larar", Condition::kClean);
  const double vanilla_pgd = acc("vanilla", Condition::kPgd);
  bool ordering = true;
  for (Condition c : {Condition::kFgsm, Condition::kPgd}) {
    ordering = ordering && acc("larar", c) > acc("base-advnn", c) && acc("base-advnn", c) > acc("vanilla", c);
  }
  bool asr = true;
  for (Condition c : {Condition::kFgsm, Condition::kPgd, Condition::kTransfer}) {
    asr = asr && r.cell("base-advnn", c).asr() - r.cell("larar", c).asr() > 0.0;
  }
  const bool pass = larar_clean >= 0.93 && vanilla_pgd <= 0.20 && ordering && asr;
  return {"6 full-scale reproduction", pass,
          fmt::format("(a) LARAR clean {:.4f} (b) vanilla PGD {:.4f} (c) ordering FGSM/PGD: {} (d) ASR "
                      "reduction on all attacks: {}",
                      larar_clean, vanilla_pgd, ordering ? "yes" : "no", asr ? "yes" : "no")};
}

Line lvs_trend(const EvalReport& r) {
  const auto runs = runs_of(r, "larar");
  std::vector<double> first(2, 0.0), last(2, 0.0);
  int ordered = 0;
  for (const RunLog* run : runs) {
    const EpochLog& a = run->epochs.front();
    const EpochLog& b = run->epochs.back();
    for (std::size_t l = 0; l < 2; ++l) {
      first[l] += a.lvs.at(l) / static_cast<double>(runs.size());
      last[l] += b.lvs.at(l) / static_cast<double>(runs.size());
    }
    ordered += b.lvs[0] >= b.lvs[1] ? 1 : 0;
  }
  const bool pass = last[0] < first[0] && last[1] < first[1] && ordered >= 4;
  return {"7 LVS evolution", pass,
          fmt::format("layer 1 {:.4f} -> {:.4f}, layer 2 {:.4f} -> {:.4f}, layer1 >= layer2 at the end in {}/{} seeds",
                      first[0], last[0], first[1], last[1], ordered, runs.size())};
}

Line early_exit(const EvalReport& r) {
  if (!r.early_exit) return {"9 early exit", false, "no early-exit statistics in the report"};
  const EarlyExitStats& e = *r.early_exit;
  const double fraction = mean(e.fraction);
  const double macs = mean(e.mean_macs);
  const double agreement = *std::min_element(e.agreement.begin(), e.agreement.end());
  const bool pass = fraction >= 0.10 && fraction <= 0.45 && macs < static_cast<double>(e.full_macs) &&
                    agreement >= 0.98;
  return {"9 early exit", pass,
          fmt::format("fraction {:.4f} (band 0.10-0.45), mean MACs {:.1f} of {}, worst agreement {:.4f}", fraction,
                      macs, e.full_macs, agreement)};
}

}  // namespace

int main() {
  const char* path = std::getenv("LARAR_UNSW_NB15");
  const std::vector<std::string> names = {"5 weight dynamics (UNSW-NB15)", "6 full-scale reproduction",
                                          "7 LVS evolution", "9 early exit"};
  if (path == nullptr || *path == '\0') {
    for (const std::string& n : names) std::cout << "SKIP  criterion " << n << ": LARAR_UNSW_NB15 not set\n";
    return kSkip;
  }
  spdlog::set_level(spdlog::level::info);

  std::vector<Line> lines;
  try {
    const Splits s = preprocess(ingest_csv(path), SplitSpec{});
    if (s.total_rows != kExpectedRows) {
      std::cout << "FAIL  dataset row count: " << s.total_rows << " (expected " << kExpectedRows << ")\n";
      return 1;
    }
    const EvalReport r = run_comparison(s, ExperimentConfig{});
    lines = {weights(r), reproduction(r), lvs_trend(r), early_exit(r)};
  } catch (const std::exception& e) {
    for (const std::string& n : names) lines.push_back({n, false, std::string("error: ") + e.what()});
  }
  int failures = 0;
  for (const Line& l : lines) {
    std::cout << (l.pass ? "PASS" : "FAIL") << "  criterion " << l.name << ": " << l.detail << "\n";
    failures += l.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
