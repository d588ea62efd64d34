#include "larar/report.hpp"

#include <fmt/format.h>

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "larar/errors.hpp"

namespace larar {

using json = nlohmann::ordered_json;

ReportFormat parse_report_format(std::string_view name) {
  if (name == "json") return ReportFormat::kJson;
  if (name == "markdown" || name == "md") return ReportFormat::kMarkdown;
  if (name == "csv") return ReportFormat::kCsv;
  throw Error("unknown report format '" + std::string(name) + "' (expected json, markdown or csv)");
}

namespace {

json metrics_json(const Metrics& m) {
  return {{"tp", m.tp},         {"fp", m.fp},         {"fn", m.fn},           {"tn", m.tn},
          {"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

Metrics metrics_from(const json& j) {
  Metrics m;
  m.tp = j.at("tp").get<std::size_t>();
  m.fp = j.at("fp").get<std::size_t>();
  m.fn = j.at("fn").get<std::size_t>();
  m.tn = j.at("tn").get<std::size_t>();
  m.accuracy = j.at("accuracy").get<double>();
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  m.f1 = j.at("f1").get<double>();
  return m;
}

json epoch_json(const EpochLog& e) {
  return {{"epoch", e.epoch},
          {"epsilon", e.epsilon},
          {"loss_total", e.loss_total},
          {"loss_ce", e.loss_ce},
          {"loss_aux", e.loss_aux},
          {"loss_ga", e.loss_ga},
          {"loss_fs", e.loss_fs},
          {"loss_lvs", e.loss_lvs},
          {"lvs", e.lvs},
          {"layer_weights", e.layer_weights},
          {"max_weight_grad_residual", e.max_weight_grad_residual}};
}

EpochLog epoch_from(const json& j) {
  EpochLog e;
  e.epoch = j.at("epoch").get<int>();
  e.epsilon = j.at("epsilon").get<double>();
  e.loss_total = j.at("loss_total").get<double>();
  e.loss_ce = j.at("loss_ce").get<double>();
  e.loss_aux = j.at("loss_aux").get<double>();
  e.loss_ga = j.at("loss_ga").get<double>();
  e.loss_fs = j.at("loss_fs").get<double>();
  e.loss_lvs = j.at("loss_lvs").get<double>();
  e.lvs = j.at("lvs").get<std::vector<double>>();
  e.layer_weights = j.at("layer_weights").get<std::vector<double>>();
  e.max_weight_grad_residual = j.at("max_weight_grad_residual").get<double>();
  return e;
}

std::string display_name(std::string_view row) {
  if (row == "vanilla") return "Vanilla NN";
  if (row == "base-advnn") return "Base ADVNN";
  if (row == "larar") return "LARAR";
  return std::string(row);
}

std::string header_name(Condition c) {
  switch (c) {
    case Condition::kClean: return "Clean";
    case Condition::kFgsm: return "FGSM";
    case Condition::kPgd: return "PGD";
    case Condition::kTransfer: return "Transfer";
  }
  return "?";
}

std::string f4(double v) { return fmt::format("{:.4f}", v); }

std::string mean_std(double m, double s) { return f4(m) + " ± " + f4(s); }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

void require_cells(const EvalReport& r) {
  if (r.cells.empty()) throw Error("report has no cells");
}

}  // namespace

std::string report_to_json(const EvalReport& r) {
  require_cells(r);
  json j;
  j["schema_version"] = EvalReport::kSchemaVersion;
  j["experiment"] = r.experiment;
  j["seeds"] = r.seeds;
  json settings = json::object();
  for (const auto& [k, v] : r.settings) settings[k] = v;
  j["settings"] = settings;
  j["rows"] = r.rows;
  json conds = json::array();
  for (Condition c : r.conditions) conds.push_back(to_string(c));
  j["conditions"] = conds;
  json cells = json::array();
  for (const Cell& c : r.cells) {
    json cj = {{"row", c.row},
               {"condition", to_string(c.condition)},
               {"accuracy_mean", c.accuracy_mean},
               {"accuracy_std", c.accuracy_std},
               {"precision_mean", c.precision_mean},
               {"recall_mean", c.recall_mean},
               {"f1_mean", c.f1_mean}};
    if (c.condition != Condition::kClean) cj["asr"] = c.asr();
    json per_seed = json::array();
    for (const Metrics& m : c.per_seed) per_seed.push_back(metrics_json(m));
    cj["per_seed"] = per_seed;
    cells.push_back(cj);
  }
  j["cells"] = cells;
  if (r.early_exit) {
    const EarlyExitStats& e = *r.early_exit;
    j["early_exit"] = {{"threshold", e.threshold},
                       {"full_macs", e.full_macs},
                       {"fraction", e.fraction},
                       {"mean_macs", e.mean_macs},
                       {"agreement", e.agreement}};
  } else {
    j["early_exit"] = nullptr;
  }
  json runs = json::array();
  for (const RunLog& run : r.runs) {
    json epochs = json::array();
    for (const EpochLog& e : run.epochs) epochs.push_back(epoch_json(e));
    runs.push_back({{"row", run.row},
                    {"seed", run.seed},
                    {"final_layer_weights", run.final_layer_weights},
                    {"epochs", epochs}});
  }
  j["runs"] = runs;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("report is not valid JSON: ") + e.what());
  }
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != EvalReport::kSchemaVersion) {
      throw Error("report schema version " + std::to_string(version) + " is not supported");
    }
    EvalReport r;
    r.experiment = j.at("experiment").get<std::string>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& [k, v] : j.at("settings").items()) r.settings.emplace_back(k, v.get<std::string>());
    r.rows = j.at("rows").get<std::vector<std::string>>();
    for (const auto& c : j.at("conditions")) r.conditions.push_back(parse_condition(c.get<std::string>()));
    for (const auto& cj : j.at("cells")) {
      Cell c;
      c.row = cj.at("row").get<std::string>();
      c.condition = parse_condition(cj.at("condition").get<std::string>());
      c.accuracy_mean = cj.at("accuracy_mean").get<double>();
      c.accuracy_std = cj.at("accuracy_std").get<double>();
      c.precision_mean = cj.at("precision_mean").get<double>();
      c.recall_mean = cj.at("recall_mean").get<double>();
      c.f1_mean = cj.at("f1_mean").get<double>();
      for (const auto& m : cj.at("per_seed")) c.per_seed.push_back(metrics_from(m));
      r.cells.push_back(std::move(c));
    }
    if (!j.at("early_exit").is_null()) {
      const json& e = j.at("early_exit");
      EarlyExitStats s;
      s.threshold = e.at("threshold").get<double>();
      s.full_macs = e.at("full_macs").get<std::size_t>();
      s.fraction = e.at("fraction").get<std::vector<double>>();
      s.mean_macs = e.at("mean_macs").get<std::vector<double>>();
      s.agreement = e.at("agreement").get<std::vector<double>>();
      r.early_exit = std::move(s);
    }
    for (const auto& rj : j.at("runs")) {
      RunLog run;
      run.row = rj.at("row").get<std::string>();
      run.seed = rj.at("seed").get<std::uint64_t>();
      run.final_layer_weights = rj.at("final_layer_weights").get<std::vector<double>>();
      for (const auto& e : rj.at("epochs")) run.epochs.push_back(epoch_from(e));
      r.runs.push_back(std::move(run));
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed report: ") + e.what());
  }
}

std::string report_to_markdown(const EvalReport& r) {
  require_cells(r);
  std::ostringstream md;
  std::string seeds;
  for (std::size_t i = 0; i < r.seeds.size(); ++i) seeds += (i ? ", " : "") + std::to_string(r.seeds[i]);

  if (r.experiment == "ablation") {
    md << "# Ablation report\n\n";
    md << "Seeds: " << seeds << ". Values are mean ± sample standard deviation over seeds.\n\n";
    md << "## PGD accuracy by variant\n\n";
    md << "| Variant | PGD |\n|---|---|\n";
    for (const std::string& row : r.rows) {
      const Cell& c = r.cell(row, Condition::kPgd);
      md << "| " << row << " | " << mean_std(c.accuracy_mean, c.accuracy_std) << " |\n";
    }
    return md.str();
  }

  md << "# Comparison report\n\n";
  md << "Seeds: " << seeds << ". Values are mean ± sample standard deviation over seeds.\n\n";

  md << "## Accuracy\n\n| Method |";
  for (Condition c : r.conditions) md << ' ' << header_name(c) << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < r.conditions.size(); ++i) md << "---|";
  md << '\n';
  for (const std::string& row : r.rows) {
    md << "| " << display_name(row) << " |";
    for (Condition c : r.conditions) {
      const Cell& cell = r.cell(row, c);
      md << ' ' << mean_std(cell.accuracy_mean, cell.accuracy_std) << " |";
    }
    md << '\n';
  }
  const bool pair = r.find("larar", r.conditions.front()) && r.find("base-advnn", r.conditions.front());
  if (pair) {
    md << "| Improvement (LARAR vs Base ADVNN, relative) |";
    for (Condition c : r.conditions) {
      const double base = r.cell("base-advnn", c).accuracy_mean;
      const double ours = r.cell("larar", c).accuracy_mean;
      md << ' ' << (base > 0.0 ? fmt::format("{:+.2f}%", 100.0 * (ours / base - 1.0)) : std::string("n/a"))
         << " |";
    }
    md << '\n';
  }

  std::vector<Condition> attacked;
  for (Condition c : r.conditions) {
    if (c != Condition::kClean) attacked.push_back(c);
  }
  if (!attacked.empty()) {
    md << "\n## Attack success rate\n\n| Method |";
    for (Condition c : attacked) md << ' ' << header_name(c) << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < attacked.size(); ++i) md << "---|";
    md << '\n';
    for (const std::string& row : r.rows) {
      md << "| " << display_name(row) << " |";
      for (Condition c : attacked) md << ' ' << f4(r.cell(row, c).asr()) << " |";
      md << '\n';
    }
    if (pair) {
      md << "| Reduction (Base ADVNN minus LARAR) |";
      for (Condition c : attacked) md << ' ' << f4(r.cell("base-advnn", c).asr() - r.cell("larar", c).asr()) << " |";
      md << '\n';
    }
  }

  md << "\n## Effectiveness\n\n| Method | Condition | Accuracy | Precision | Recall | F1-Score |\n"
        "|---|---|---|---|---|---|\n";
  for (const std::string& row : r.rows) {
    for (Condition c : r.conditions) {
      const Cell& cell = r.cell(row, c);
      md << "| " << display_name(row) << " | " << header_name(c) << " | " << f4(cell.accuracy_mean) << " | "
         << f4(cell.precision_mean) << " | " << f4(cell.recall_mean) << " | " << f4(cell.f1_mean) << " |\n";
    }
  }

  // Final layer weights and LVS of the LARAR runs.
  std::vector<const RunLog*> larar_runs;
  for (const RunLog& run : r.runs) {
    if (run.row == "larar" && !run.epochs.empty()) larar_runs.push_back(&run);
  }
  if (!larar_runs.empty()) {
    const std::size_t layers = larar_runs.front()->final_layer_weights.size();
    md << "\n## Final layer weights and vulnerability (LARAR)\n\n| Layer | Final weight | Final LVS |\n"
          "|---|---|---|\n";
    for (std::size_t l = 0; l < layers; ++l) {
      std::vector<double> w, v;
      for (const RunLog* run : larar_runs) {
        w.push_back(run->final_layer_weights[l]);
        if (l < run->epochs.back().lvs.size()) v.push_back(run->epochs.back().lvs[l]);
      }
      md << "| " << l + 1 << " | " << f4(mean_of(w)) << " | " << f4(mean_of(v)) << " |\n";
    }
  }

  if (r.early_exit) {
    const EarlyExitStats& e = *r.early_exit;
    md << "\n## Early exit (LARAR)\n\n| Threshold | Early-exit fraction | Mean MACs | Full MACs | Agreement |\n"
          "|---|---|---|---|---|\n";
    md << "| " << f4(e.threshold) << " | " << f4(mean_of(e.fraction)) << " | " << f4(mean_of(e.mean_macs))
       << " | " << e.full_macs << " | " << f4(mean_of(e.agreement)) << " |\n";
  }
  return md.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw Error("failed writing '" + path.string() + "'");
}

}  // namespace

void emit_report(const EvalReport& report, ReportFormat format, const std::filesystem::path& path) {
  require_cells(report);
  switch (format) {
    case ReportFormat::kJson: write_text(path, report_to_json(report)); return;
    case ReportFormat::kMarkdown: write_text(path, report_to_markdown(report)); return;
    case ReportFormat::kCsv: {
      std::error_code ec;
      std::filesystem::create_directories(path, ec);
      if (ec) throw Error("cannot create '" + path.string() + "': " + ec.message());
      for (const RunLog& run : report.runs) {
        write_epoch_csv(run.epochs, path / fmt::format("epochs_{}_seed{}.csv", run.row, run.seed));
      }
      return;
    }
  }
}

}  // namespace larar
