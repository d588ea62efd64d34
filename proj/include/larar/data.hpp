#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "larar/tensor.hpp"

namespace larar {

enum class ColumnKind : std::uint8_t { kNumeric = 0, kCategorical = 1, kLabel = 2, kIgnored = 3 };

std::string_view to_string(ColumnKind kind) noexcept;

struct SchemaHints {
  std::string label_column = "label";
  // UNSW-NB15 ships a row id and the multi-class attack category next to
  // the binary label; both would leak the target.
  std::vector<std::string> drop_columns = {"id", "attack_cat"};
  std::vector<std::string> categorical;
  std::vector<std::string> numeric;
  // For string labels: the value that maps to 1. Numeric labels must be 0/1.
  std::optional<std::string> positive_label;
};

struct RawTable {
  std::vector<std::string> names;
  std::vector<ColumnKind> kinds;
  std::vector<std::vector<std::string>> rows;
  std::size_t label_index = 0;
  std::optional<std::string> positive_label;

  std::size_t num_rows() const noexcept { return rows.size(); }
  std::size_t num_cols() const noexcept { return names.size(); }
};

// Comma-separated, header row required, RFC 4180 quoting. Empty numeric
// cells are kept as empty strings and imputed to 0.0 by preprocess.
RawTable parse_csv(std::istream& in, const SchemaHints& hints = {});
RawTable ingest_csv(const std::filesystem::path& path, const SchemaHints& hints = {});

struct ColumnInfo {
  std::string name;
  ColumnKind kind = ColumnKind::kNumeric;
  // Categorical only: categories[c - 1] has code c; code 0 is reserved for
  // values not seen while fitting.
  std::vector<std::string> categories;
  double mean = 0.0;
  double scale = 1.0;

  std::optional<std::string> decode(int code) const;
  int encode(const std::string& value) const;
};

struct FeatureMatrix {
  Tensor x;
  std::vector<int> y;
  std::vector<ColumnInfo> columns;

  std::size_t rows() const noexcept { return y.size(); }
  std::size_t cols() const noexcept { return x.cols(); }
  FeatureMatrix subset(std::span<const std::size_t> indices) const;
};

struct SplitSpec {
  double train_fraction = 0.7;
  bool stratified = true;
  // Share of the training split held out for detector calibration.
  double calibration_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Splits {
  FeatureMatrix train;
  FeatureMatrix calibration;
  FeatureMatrix test;
  std::size_t total_rows = 0;
  std::size_t unseen_categories = 0;
};

// Label-encodes categoricals (lexicographic order), zero-imputes, fits the
// encoders and the standard scaler on the training rows only and applies
// them to all three splits.
Splits preprocess(const RawTable& raw, const SplitSpec& split);

// Two unit-variance Gaussian blobs centred at -sep/2 and +sep/2 on every
// coordinate, n/2 samples each (class 1 gets the extra sample when n is odd).
RawTable synth_dataset(std::size_t n, std::size_t d, double class_sep, std::uint64_t seed);

// Preprocessed splits in the same versioned container family as checkpoints.
void save_cache(const Splits& splits, const std::filesystem::path& path);
Splits load_cache(const std::filesystem::path& path);

}  // namespace larar
