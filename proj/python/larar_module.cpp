#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "larar/attacks.hpp"
#include "larar/checkpoint.hpp"
#include "larar/data.hpp"
#include "larar/errors.hpp"
#include "larar/harness.hpp"
#include "larar/report.hpp"
#include "larar/training.hpp"
#include "larar/vulnerability.hpp"

namespace py = pybind11;
using namespace larar;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array, got " + std::to_string(a.ndim()) + " dimensions");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Tensor(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

FeatureMatrix to_matrix(const Array& x, const std::vector<int>& y) {
  FeatureMatrix m;
  m.x = to_tensor(x);
  m.y = y;
  if (m.y.size() != m.x.rows()) throw ShapeError("x has " + std::to_string(m.x.rows()) + " rows but y has " +
                                                 std::to_string(m.y.size()) + " labels");
  return m;
}

AttackConfig attack_config(double epsilon, double alpha, int iterations, bool random_init, std::uint64_t seed) {
  AttackConfig cfg{.epsilon = epsilon, .alpha = alpha, .iterations = iterations, .random_init = random_init,
                   .seed = seed};
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Layer-wise adversarial robustness for tabular intrusion detection";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", error);
  py::register_exception<NonFiniteError>(m, "NonFiniteError", error);
  py::register_exception<CalibrationMissingError>(m, "CalibrationMissingError", error);
  py::register_exception<AttackError>(m, "AttackError", error);
  auto data_error = py::register_exception<DataError>(m, "DataError", error);
  py::register_exception<ParseError>(m, "ParseError", data_error);
  auto ckpt_error = py::register_exception<CheckpointError>(m, "CheckpointError", error);
  py::register_exception<CorruptFileError>(m, "CorruptFileError", ckpt_error);
  py::register_exception<VersionMismatchError>(m, "VersionMismatchError", ckpt_error);
  py::register_exception<ShapeMismatchError>(m, "ShapeMismatchError", ckpt_error);
  py::register_exception<UnsupportedModelError>(m, "UnsupportedModelError", error);
  py::register_exception<TrainingDivergedError>(m, "TrainingDivergedError", error);

  py::class_<FeatureMatrix>(m, "FeatureMatrix")
      .def_property_readonly("x", [](const FeatureMatrix& f) { return to_array(f.x); })
      .def_readonly("y", &FeatureMatrix::y)
      .def_property_readonly("rows", &FeatureMatrix::rows)
      .def_property_readonly("cols", &FeatureMatrix::cols)
      .def_property_readonly("column_names", [](const FeatureMatrix& f) {
        std::vector<std::string> names;
        for (const ColumnInfo& c : f.columns) names.push_back(c.name);
        return names;
      });

  py::class_<Splits>(m, "Splits")
      .def_readonly("train", &Splits::train)
      .def_readonly("calibration", &Splits::calibration)
      .def_readonly("test", &Splits::test)
      .def_readonly("total_rows", &Splits::total_rows);

  m.def(
      "synthetic_splits",
      [](std::size_t n, std::size_t d, double sep, std::uint64_t seed) {
        SplitSpec spec;
        spec.seed = seed;
        return preprocess(synth_dataset(n, d, sep, seed), spec);
      },
      py::arg("n") = 2000, py::arg("d") = 10, py::arg("sep") = 6.0, py::arg("seed") = 0);
  m.def(
      "load_csv",
      [](const std::filesystem::path& path, const std::string& label_column, double train_fraction,
         std::uint64_t seed) {
        SchemaHints hints;
        hints.label_column = label_column;
        SplitSpec spec;
        spec.train_fraction = train_fraction;
        spec.seed = seed;
        return preprocess(ingest_csv(path, hints), spec);
      },
      py::arg("path"), py::arg("label_column") = "label", py::arg("train_fraction") = 0.7, py::arg("seed") = 0);

  py::class_<NetworkParams>(m, "Model")
      .def_property_readonly("kind", [](const NetworkParams& p) { return std::string(to_string(p.kind())); })
      .def_property_readonly("input_dim", &NetworkParams::input_dim)
      .def_property_readonly("num_hidden", &NetworkParams::num_hidden)
      .def_property_readonly("has_aux", &NetworkParams::has_aux)
      .def_property_readonly("layer_weights", &NetworkParams::layer_weight_values)
      .def("predict_proba",
           [](const NetworkParams& p, const Array& x) {
             const Tensor probs = predict_proba(p, to_tensor(x));
             return std::vector<double>(probs.values().begin(), probs.values().end());
           })
      .def("predict", [](const NetworkParams& p, const Array& x) { return predict_labels(p, to_tensor(x)); });

  m.def("init_model", [](const std::string& kind, std::size_t input_dim, std::uint64_t seed) {
    return init_network(parse_model_kind(kind), input_dim, seed);
  }, py::arg("kind"), py::arg("input_dim"), py::arg("seed") = 0);

  m.def(
      "train",
      [](const std::string& kind, const Array& x, const std::vector<int>& y, int epochs, std::size_t batch_size,
         double learning_rate, double epsilon_max, std::uint64_t seed) {
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.learning_rate = learning_rate;
        cfg.epsilon_max = epsilon_max;
        cfg.seed = seed;
        const FeatureMatrix data = to_matrix(x, y);
        py::gil_scoped_release release;
        return train(parse_model_kind(kind), data, cfg).params;
      },
      py::arg("kind"), py::arg("x"), py::arg("y"), py::arg("epochs") = 20, py::arg("batch_size") = 64,
      py::arg("learning_rate") = 0.001, py::arg("epsilon_max") = 0.3, py::arg("seed") = 0);

  m.def(
      "fgsm",
      [](const NetworkParams& p, const Array& x, const std::vector<int>& y, double epsilon) {
        return to_array(fgsm(p, to_tensor(x), y, epsilon));
      },
      py::arg("model"), py::arg("x"), py::arg("y"), py::arg("epsilon") = 0.3);
  m.def(
      "pgd",
      [](const NetworkParams& p, const Array& x, const std::vector<int>& y, double epsilon, double alpha,
         int iterations, bool random_init, std::uint64_t seed) {
        return to_array(pgd(p, to_tensor(x), y, attack_config(epsilon, alpha, iterations, random_init, seed)));
      },
      py::arg("model"), py::arg("x"), py::arg("y"), py::arg("epsilon") = 0.3, py::arg("alpha") = 0.01,
      py::arg("iterations") = 10, py::arg("random_init") = true, py::arg("seed") = 0);

  m.def(
      "layer_vulnerability",
      [](const NetworkParams& p, const Array& x, const Array& x_adv) {
        const Tensor clean = to_tensor(x);
        const Tensor adv = to_tensor(x_adv);
        return compute_lvs(forward(p, clean, Mode::kEval), forward(p, adv, Mode::kEval)).batch;
      },
      py::arg("model"), py::arg("x"), py::arg("x_adv"));

  py::class_<CalibrationStats>(m, "Calibration")
      .def_property_readonly("proxy_taus", [](const CalibrationStats& s) { return s.taus(DetectionMode::kProxy); })
      .def_property_readonly("paired_taus", [](const CalibrationStats& s) { return s.taus(DetectionMode::kPaired); })
      .def_readonly("calibration_size", &CalibrationStats::calibration_size);

  m.def(
      "calibrate",
      [](const NetworkParams& p, const Array& x, double k, double lambda, double epsilon, std::uint64_t seed) {
        AttackConfig atk;
        atk.epsilon = epsilon;
        atk.seed = seed;
        return calibrate_thresholds(p, to_tensor(x), atk, k, lambda);
      },
      py::arg("model"), py::arg("x"), py::arg("k") = 2.5, py::arg("lam") = 1.2, py::arg("epsilon") = 0.3,
      py::arg("seed") = 0);
  m.def(
      "detect",
      [](const NetworkParams& p, const Array& x, const CalibrationStats& stats) {
        std::vector<bool> flags;
        for (const DetectionVerdict& v : detect(p, to_tensor(x), stats, DetectionMode::kProxy)) {
          flags.push_back(v.flagged);
        }
        return flags;
      },
      py::arg("model"), py::arg("x"), py::arg("calibration"));

  m.def(
      "early_exit",
      [](const NetworkParams& p, const Array& x, double threshold) {
        const EarlyExitResult r = early_exit_infer(p, to_tensor(x), threshold);
        py::dict out;
        out["labels"] = r.labels;
        out["exit_layer"] = r.exit_layer;
        out["fraction"] = r.early_exit_fraction(p.num_hidden());
        out["mean_macs"] = r.mean_macs();
        out["full_macs"] = full_forward_macs(p.arch);
        return out;
      },
      py::arg("model"), py::arg("x"), py::arg("threshold") = 0.95);

  m.def(
      "save_checkpoint",
      [](const NetworkParams& p, const std::filesystem::path& path, const std::string& metadata) {
        save_checkpoint(Checkpoint{p, std::nullopt, metadata}, path);
      },
      py::arg("model"), py::arg("path"), py::arg("metadata") = "");
  m.def(
      "load_checkpoint", [](const std::filesystem::path& path) { return load_checkpoint(path).params; },
      py::arg("path"));

  m.def(
      "run_comparison",
      [](const Splits& splits, const std::vector<std::uint64_t>& seeds, int epochs) {
        ExperimentConfig cfg;
        cfg.seeds = seeds;
        cfg.train.epochs = epochs;
        std::string json;
        {
          py::gil_scoped_release release;
          json = report_to_json(run_comparison(splits, cfg));
        }
        return json;
      },
      py::arg("splits"), py::arg("seeds") = std::vector<std::uint64_t>{0, 1, 2, 3, 4}, py::arg("epochs") = 20);
}
