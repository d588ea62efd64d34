#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "larar/attacks.hpp"
#include "larar/data.hpp"
#include "larar/harness.hpp"
#include "larar/losses.hpp"
#include "larar/training.hpp"
#include "larar/vulnerability.hpp"

namespace larar {

struct SynthSpec {
  std::size_t n = 2000;
  std::size_t d = 10;
  double sep = 6.0;
  std::uint64_t seed = 0;

  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

// "n=2000,d=10,sep=6[,seed=0]"; omitted keys keep their defaults.
SynthSpec parse_synth_spec(std::string_view text);
std::string to_string(const SynthSpec& s);

struct DataSource {
  std::string csv;
  std::string cache;
  std::optional<SynthSpec> synth;
  SchemaHints hints;

  bool empty() const noexcept { return csv.empty() && cache.empty() && !synth; }
};

struct DetectionConfig {
  double k = 2.5;
  double lambda = 1.2;
  DetectionMode mode = DetectionMode::kProxy;
  double early_exit_threshold = 0.95;
};

std::string_view to_string(DetectionMode mode) noexcept;
DetectionMode parse_detection_mode(std::string_view name);

// Everything a run needs. Defaults mirror the reference hyperparameters.
struct RunConfig {
  std::string model = "larar";
  DataSource data;
  SplitSpec split;
  TrainConfig train;
  LossWeights weights;
  AttackConfig attack;
  DetectionConfig detection;
  std::string out_dir;
  std::vector<std::string> formats = {"json", "markdown", "csv"};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<std::string> conditions = {"clean", "fgsm", "pgd", "transfer"};
  std::vector<std::string> variants = {"base", "lvs-only", "adaptive-only", "auxiliary-only", "lvs+adaptive", "all"};

  ExperimentConfig experiment() const;
};

// INI text with sections [data] [split] [training] [loss] [attack]
// [detection] [output] [run]. Keys not present keep the values of `base`;
// unknown sections or keys are rejected.
RunConfig parse_config(std::istream& in, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
std::string to_ini(const RunConfig& cfg);

// Loads the selected data source and splits it. Caches are already split.
Splits load_splits(const RunConfig& cfg);

}  // namespace larar
