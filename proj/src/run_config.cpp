#include "larar/run_config.hpp"

#include <fmt/format.h>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "larar/errors.hpp"

namespace larar {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string_view s) {
  std::string out(s);
  boost::algorithm::trim(out);
  return out;
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> parts;
  const std::string t = trim(s);
  if (t.empty()) return parts;
  boost::algorithm::split(parts, t, boost::is_any_of(","));
  for (std::string& p : parts) p = trim(p);
  return parts;
}

std::string join(const std::vector<std::string>& v) { return boost::algorithm::join(v, ","); }

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  const std::string t = trim(text);
  T v{};
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
    throw Error("config key '" + std::string(key) + "': cannot parse '" + t + "'");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  const std::string t = boost::algorithm::to_lower_copy(trim(text));
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw Error("config key '" + std::string(key) + "': expected a boolean, got '" + t + "'");
}

std::string num(double v) { return fmt::format("{}", v); }
std::string boolean(bool b) { return b ? "true" : "false"; }

}  // namespace

SynthSpec parse_synth_spec(std::string_view text) {
  SynthSpec s;
  for (const std::string& part : split_list(text)) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw Error("synth spec entry '" + part + "' is not key=value");
    const std::string key = trim(part.substr(0, eq));
    const std::string value = trim(part.substr(eq + 1));
    if (key == "n") {
      s.n = parse_number<std::size_t>("synth.n", value);
    } else if (key == "d") {
      s.d = parse_number<std::size_t>("synth.d", value);
    } else if (key == "sep") {
      s.sep = parse_number<double>("synth.sep", value);
    } else if (key == "seed") {
      s.seed = parse_number<std::uint64_t>("synth.seed", value);
    } else {
      throw Error("unknown synth spec key '" + key + "' (expected n, d, sep, seed)");
    }
  }
  if (s.n < 2 || s.d == 0) throw Error("synth spec needs n >= 2 and d >= 1");
  return s;
}

std::string to_string(const SynthSpec& s) {
  return fmt::format("n={},d={},sep={},seed={}", s.n, s.d, s.sep, s.seed);
}

std::string_view to_string(DetectionMode mode) noexcept {
  return mode == DetectionMode::kPaired ? "paired" : "proxy";
}

DetectionMode parse_detection_mode(std::string_view name) {
  if (name == "paired") return DetectionMode::kPaired;
  if (name == "proxy") return DetectionMode::kProxy;
  throw Error("unknown detection mode '" + std::string(name) + "' (expected paired or proxy)");
}

ExperimentConfig RunConfig::experiment() const {
  ExperimentConfig e;
  e.train = train;
  e.weights = weights;
  e.attack = attack;
  e.seeds = seeds;
  e.conditions.clear();
  for (const std::string& c : conditions) e.conditions.push_back(parse_condition(c));
  e.early_exit_threshold = detection.early_exit_threshold;
  return e;
}

RunConfig parse_config(std::istream& in, RunConfig cfg) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(std::string("config: ") + e.what());
  }
  using Setter = std::function<void(const std::string&)>;
  const std::string k_data = "data", k_split = "split", k_train = "training", k_loss = "loss",
                    k_attack = "attack", k_det = "detection", k_out = "output", k_run = "run";
  std::map<std::string, std::map<std::string, Setter>> keys;
  auto& d = keys[k_data];
  d["csv"] = [&](const std::string& v) { cfg.data.csv = v; };
  d["cache"] = [&](const std::string& v) { cfg.data.cache = v; };
  d["synth"] = [&](const std::string& v) {
    cfg.data.synth = v.empty() ? std::nullopt : std::optional<SynthSpec>(parse_synth_spec(v));
  };
  d["label_column"] = [&](const std::string& v) { cfg.data.hints.label_column = v; };
  d["positive_label"] = [&](const std::string& v) {
    cfg.data.hints.positive_label = v.empty() ? std::nullopt : std::optional<std::string>(v);
  };
  d["drop_columns"] = [&](const std::string& v) { cfg.data.hints.drop_columns = split_list(v); };
  d["categorical"] = [&](const std::string& v) { cfg.data.hints.categorical = split_list(v); };
  d["numeric"] = [&](const std::string& v) { cfg.data.hints.numeric = split_list(v); };
  auto& s = keys[k_split];
  s["train_fraction"] = [&](const std::string& v) { cfg.split.train_fraction = parse_number<double>("split.train_fraction", v); };
  s["calibration_fraction"] = [&](const std::string& v) {
    cfg.split.calibration_fraction = parse_number<double>("split.calibration_fraction", v);
  };
  s["stratified"] = [&](const std::string& v) { cfg.split.stratified = parse_bool("split.stratified", v); };
  s["seed"] = [&](const std::string& v) { cfg.split.seed = parse_number<std::uint64_t>("split.seed", v); };
  auto& t = keys[k_train];
  t["model"] = [&](const std::string& v) {
    parse_model_kind(v);
    cfg.model = v;
  };
  t["epochs"] = [&](const std::string& v) { cfg.train.epochs = parse_number<int>("training.epochs", v); };
  t["batch_size"] = [&](const std::string& v) { cfg.train.batch_size = parse_number<std::size_t>("training.batch_size", v); };
  t["learning_rate"] = [&](const std::string& v) { cfg.train.learning_rate = parse_number<double>("training.learning_rate", v); };
  t["epsilon_max"] = [&](const std::string& v) { cfg.train.epsilon_max = parse_number<double>("training.epsilon_max", v); };
  t["pgd_iterations"] = [&](const std::string& v) { cfg.train.pgd_iterations = parse_number<int>("training.pgd_iterations", v); };
  t["pgd_step"] = [&](const std::string& v) { cfg.train.pgd_step = parse_number<double>("training.pgd_step", v); };
  t["pgd_random_init"] = [&](const std::string& v) { cfg.train.pgd_random_init = parse_bool("training.pgd_random_init", v); };
  t["curriculum"] = [&](const std::string& v) { cfg.train.curriculum = parse_bool("training.curriculum", v); };
  t["clamp_layer_weights"] = [&](const std::string& v) {
    cfg.train.clamp_layer_weights = parse_bool("training.clamp_layer_weights", v);
  };
  auto& l = keys[k_loss];
  l["lambda_aux"] = [&](const std::string& v) { cfg.weights.aux = parse_number<double>("loss.lambda_aux", v); };
  l["lambda_ga"] = [&](const std::string& v) { cfg.weights.ga = parse_number<double>("loss.lambda_ga", v); };
  l["lambda_fs"] = [&](const std::string& v) { cfg.weights.fs = parse_number<double>("loss.lambda_fs", v); };
  l["beta"] = [&](const std::string& v) { cfg.weights.beta = parse_number<double>("loss.beta", v); };
  auto& a = keys[k_attack];
  a["epsilon"] = [&](const std::string& v) { cfg.attack.epsilon = parse_number<double>("attack.epsilon", v); };
  a["alpha"] = [&](const std::string& v) { cfg.attack.alpha = parse_number<double>("attack.alpha", v); };
  a["iterations"] = [&](const std::string& v) { cfg.attack.iterations = parse_number<int>("attack.iterations", v); };
  a["random_init"] = [&](const std::string& v) { cfg.attack.random_init = parse_bool("attack.random_init", v); };
  auto& de = keys[k_det];
  de["k"] = [&](const std::string& v) { cfg.detection.k = parse_number<double>("detection.k", v); };
  de["lambda"] = [&](const std::string& v) { cfg.detection.lambda = parse_number<double>("detection.lambda", v); };
  de["mode"] = [&](const std::string& v) { cfg.detection.mode = parse_detection_mode(trim(v)); };
  de["early_exit_threshold"] = [&](const std::string& v) {
    cfg.detection.early_exit_threshold = parse_number<double>("detection.early_exit_threshold", v);
  };
  auto& o = keys[k_out];
  o["dir"] = [&](const std::string& v) { cfg.out_dir = v; };
  o["formats"] = [&](const std::string& v) { cfg.formats = split_list(v); };
  auto& r = keys[k_run];
  r["seeds"] = [&](const std::string& v) {
    cfg.seeds.clear();
    for (const std::string& p : split_list(v)) cfg.seeds.push_back(parse_number<std::uint64_t>("run.seeds", p));
  };
  r["conditions"] = [&](const std::string& v) {
    cfg.conditions = split_list(v);
    for (const std::string& c : cfg.conditions) parse_condition(c);
  };
  r["variants"] = [&](const std::string& v) {
    cfg.variants = split_list(v);
    for (const std::string& name : cfg.variants) ablation_components(name);
  };

  for (const auto& [section, body] : tree) {
    auto sec = keys.find(section);
    if (sec == keys.end()) throw Error("config: unknown section [" + section + "]");
    if (!body.data().empty()) throw Error("config: key '" + section + "' must sit inside a section");
    for (const auto& [key, node] : body) {
      auto setter = sec->second.find(key);
      if (setter == sec->second.end()) throw Error("config: unknown key '" + key + "' in [" + section + "]");
      setter->second(trim(node.data()));
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream f(path);
  if (!f) throw Error("cannot read config '" + path.string() + "'");
  return parse_config(f, std::move(base));
}

std::string to_ini(const RunConfig& c) {
  std::ostringstream o;
  std::vector<std::string> seeds;
  for (std::uint64_t s : c.seeds) seeds.push_back(std::to_string(s));
  o << "[data]\n"
    << "csv = " << c.data.csv << "\n"
    << "cache = " << c.data.cache << "\n"
    << "synth = " << (c.data.synth ? to_string(*c.data.synth) : "") << "\n"
    << "label_column = " << c.data.hints.label_column << "\n"
    << "positive_label = " << c.data.hints.positive_label.value_or("") << "\n"
    << "drop_columns = " << join(c.data.hints.drop_columns) << "\n"
    << "categorical = " << join(c.data.hints.categorical) << "\n"
    << "numeric = " << join(c.data.hints.numeric) << "\n\n"
    << "[split]\n"
    << "train_fraction = " << num(c.split.train_fraction) << "\n"
    << "calibration_fraction = " << num(c.split.calibration_fraction) << "\n"
    << "stratified = " << boolean(c.split.stratified) << "\n"
    << "seed = " << c.split.seed << "\n\n"
    << "[training]\n"
    << "model = " << c.model << "\n"
    << "epochs = " << c.train.epochs << "\n"
    << "batch_size = " << c.train.batch_size << "\n"
    << "learning_rate = " << num(c.train.learning_rate) << "\n"
    << "epsilon_max = " << num(c.train.epsilon_max) << "\n"
    << "pgd_iterations = " << c.train.pgd_iterations << "\n"
    << "pgd_step = " << num(c.train.pgd_step) << "\n"
    << "pgd_random_init = " << boolean(c.train.pgd_random_init) << "\n"
    << "curriculum = " << boolean(c.train.curriculum) << "\n"
    << "clamp_layer_weights = " << boolean(c.train.clamp_layer_weights) << "\n\n"
    << "[loss]\n"
    << "lambda_aux = " << num(c.weights.aux) << "\n"
    << "lambda_ga = " << num(c.weights.ga) << "\n"
    << "lambda_fs = " << num(c.weights.fs) << "\n"
    << "beta = " << num(c.weights.beta) << "\n\n"
    << "[attack]\n"
    << "epsilon = " << num(c.attack.epsilon) << "\n"
    << "alpha = " << num(c.attack.alpha) << "\n"
    << "iterations = " << c.attack.iterations << "\n"
    << "random_init = " << boolean(c.attack.random_init) << "\n\n"
    << "[detection]\n"
    << "k = " << num(c.detection.k) << "\n"
    << "lambda = " << num(c.detection.lambda) << "\n"
    << "mode = " << to_string(c.detection.mode) << "\n"
    << "early_exit_threshold = " << num(c.detection.early_exit_threshold) << "\n\n"
    << "[output]\n"
    << "dir = " << c.out_dir << "\n"
    << "formats = " << join(c.formats) << "\n\n"
    << "[run]\n"
    << "seeds = " << join(seeds) << "\n"
    << "conditions = " << join(c.conditions) << "\n"
    << "variants = " << join(c.variants) << "\n";
  return o.str();
}

Splits load_splits(const RunConfig& cfg) {
  const int sources = (cfg.data.csv.empty() ? 0 : 1) + (cfg.data.cache.empty() ? 0 : 1) + (cfg.data.synth ? 1 : 0);
  if (sources == 0) throw Error("no data source: give a CSV path, a cache or a synth spec");
  if (sources > 1) throw Error("choose exactly one data source (CSV, cache or synth spec)");
  if (!cfg.data.cache.empty()) return load_cache(cfg.data.cache);
  if (cfg.data.synth) {
    const SynthSpec& s = *cfg.data.synth;
    return preprocess(synth_dataset(s.n, s.d, s.sep, s.seed), cfg.split);
  }
  return preprocess(ingest_csv(cfg.data.csv, cfg.data.hints), cfg.split);
}

}  // namespace larar
