#include "larar/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "larar/binary_io.hpp"
#include "larar/errors.hpp"

namespace larar {

std::string_view to_string(ColumnKind kind) noexcept {
  switch (kind) {
    case ColumnKind::kNumeric: return "numeric";
    case ColumnKind::kCategorical: return "categorical";
    case ColumnKind::kLabel: return "label";
    case ColumnKind::kIgnored: return "ignored";
  }
  return "unknown";
}

namespace {

std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

// Splits one CSV record, honouring quotes that may span lines.
bool read_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line_no) {
  fields.clear();
  std::string line;
  if (!std::getline(in, line)) return false;
  ++line_no;
  std::string field;
  bool quoted = false;
  std::size_t i = 0;
  while (true) {
    if (i == line.size()) {
      if (quoted) {
        if (!std::getline(in, line)) throw ParseError("unterminated quoted field", line_no);
        ++line_no;
        field.push_back('\n');
        i = 0;
        continue;
      }
      break;
    }
    const char c = line[i++];
    if (quoted) {
      if (c == '"') {
        if (i < line.size() && line[i] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r' || i != line.size()) {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return true;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

RawTable parse_csv(std::istream& in, const SchemaHints& hints) {
  RawTable t;
  std::size_t line_no = 0;
  std::vector<std::string> fields;
  if (!read_record(in, fields, line_no)) throw DataError("CSV has no header row");
  t.names = fields;
  for (std::string& n : t.names) {
    while (!n.empty() && (n.back() == ' ' || n.back() == '\r')) n.pop_back();
  }
  auto label_it = std::find(t.names.begin(), t.names.end(), hints.label_column);
  if (label_it == t.names.end()) {
    throw DataError("label column '" + hints.label_column + "' not found in header");
  }
  t.label_index = static_cast<std::size_t>(label_it - t.names.begin());
  t.positive_label = hints.positive_label;

  while (read_record(in, fields, line_no)) {
    if (fields.size() == 1 && is_blank(fields[0])) continue;
    if (fields.size() != t.names.size()) {
      throw ParseError("expected " + std::to_string(t.names.size()) + " fields, found " +
                           std::to_string(fields.size()),
                       line_no);
    }
    t.rows.push_back(fields);
  }

  t.kinds.resize(t.names.size());
  for (std::size_t c = 0; c < t.names.size(); ++c) {
    const std::string& name = t.names[c];
    if (c == t.label_index) {
      t.kinds[c] = ColumnKind::kLabel;
    } else if (contains(hints.drop_columns, name)) {
      t.kinds[c] = ColumnKind::kIgnored;
    } else if (contains(hints.categorical, name)) {
      t.kinds[c] = ColumnKind::kCategorical;
    } else if (contains(hints.numeric, name)) {
      t.kinds[c] = ColumnKind::kNumeric;
    } else {
      bool numeric = true;
      for (const auto& row : t.rows) {
        if (!is_blank(row[c]) && !parse_double(row[c])) {
          numeric = false;
          break;
        }
      }
      t.kinds[c] = numeric ? ColumnKind::kNumeric : ColumnKind::kCategorical;
    }
  }
  return t;
}

RawTable ingest_csv(const std::filesystem::path& path, const SchemaHints& hints) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read '" + path.string() + "'");
  return parse_csv(f, hints);
}

std::optional<std::string> ColumnInfo::decode(int code) const {
  if (code <= 0 || static_cast<std::size_t>(code) > categories.size()) return std::nullopt;
  return categories[static_cast<std::size_t>(code) - 1];
}

int ColumnInfo::encode(const std::string& value) const {
  auto it = std::lower_bound(categories.begin(), categories.end(), value);
  if (it == categories.end() || *it != value) return 0;
  return static_cast<int>(it - categories.begin()) + 1;
}

FeatureMatrix FeatureMatrix::subset(std::span<const std::size_t> indices) const {
  FeatureMatrix out;
  out.x = x.gather_rows(indices);
  out.columns = columns;
  out.y.reserve(indices.size());
  for (std::size_t i : indices) out.y.push_back(y.at(i));
  return out;
}

void SplitSpec::validate() const {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw DataError("train fraction must lie in (0, 1)");
  if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0)) {
    throw DataError("calibration fraction must lie in (0, 1)");
  }
}

namespace {

int parse_label(const std::string& cell, const std::optional<std::string>& positive, std::size_t row) {
  if (positive) return cell == *positive ? 1 : 0;
  auto v = parse_double(cell);
  if (!v || (*v != 0.0 && *v != 1.0)) {
    throw ParseError("label '" + cell + "' is not 0 or 1 (set a positive label for string labels)", row);
  }
  return *v == 1.0 ? 1 : 0;
}

struct Assignment {
  std::vector<std::size_t> fit, calibration, test;
};

std::size_t rounded(double v) { return static_cast<std::size_t>(std::llround(v)); }

Assignment assign_rows(const std::vector<int>& labels, const SplitSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::vector<std::vector<std::size_t>> groups;
  if (spec.stratified) {
    groups.resize(2);
    for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
    if (groups[0].empty() || groups[1].empty()) {
      throw DataError("stratified split needs both classes; data has a single class");
    }
  } else {
    groups.emplace_back(labels.size());
    std::iota(groups[0].begin(), groups[0].end(), std::size_t{0});
  }
  Assignment a;
  for (auto& g : groups) {
    std::shuffle(g.begin(), g.end(), rng);
    const std::size_t n_train = rounded(spec.train_fraction * static_cast<double>(g.size()));
    const std::size_t n_cal = rounded(spec.calibration_fraction * static_cast<double>(n_train));
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (i < n_cal) {
        a.calibration.push_back(g[i]);
      } else if (i < n_train) {
        a.fit.push_back(g[i]);
      } else {
        a.test.push_back(g[i]);
      }
    }
  }
  std::sort(a.fit.begin(), a.fit.end());
  std::sort(a.calibration.begin(), a.calibration.end());
  std::sort(a.test.begin(), a.test.end());
  return a;
}

}  // namespace

Splits preprocess(const RawTable& raw, const SplitSpec& split) {
  split.validate();
  const std::size_t n = raw.num_rows();
  if (n == 0) throw DataError("table has no data rows");
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = parse_label(raw.rows[i][raw.label_index], raw.positive_label, i + 2);
  }
  const Assignment a = assign_rows(labels, split);
  if (a.fit.empty() || a.calibration.empty() || a.test.empty()) {
    throw DataError("split leaves an empty train, calibration or test partition");
  }

  std::vector<ColumnInfo> columns;
  std::vector<std::size_t> sources;
  for (std::size_t c = 0; c < raw.num_cols(); ++c) {
    if (raw.kinds[c] != ColumnKind::kNumeric && raw.kinds[c] != ColumnKind::kCategorical) continue;
    ColumnInfo info;
    info.name = raw.names[c];
    info.kind = raw.kinds[c];
    if (info.kind == ColumnKind::kCategorical) {
      std::set<std::string> seen;
      for (std::size_t r : a.fit) seen.insert(raw.rows[r][c]);
      info.categories.assign(seen.begin(), seen.end());
    }
    columns.push_back(std::move(info));
    sources.push_back(c);
  }
  if (columns.empty()) throw DataError("table has no feature columns");

  const std::size_t d = columns.size();
  Tensor x(n, d, 0.0);
  std::size_t unseen = 0;
  for (std::size_t j = 0; j < d; ++j) {
    const std::size_t c = sources[j];
    const ColumnInfo& info = columns[j];
    for (std::size_t r = 0; r < n; ++r) {
      const std::string& cell = raw.rows[r][c];
      if (info.kind == ColumnKind::kCategorical) {
        const int code = info.encode(cell);
        if (code == 0) ++unseen;
        x(r, j) = static_cast<double>(code);
      } else {
        auto v = parse_double(cell);
        if (!v && !is_blank(cell)) {
          throw ParseError("non-numeric value '" + cell + "' in column '" + info.name + "'", r + 2);
        }
        x(r, j) = v.value_or(0.0);
      }
    }
  }
  if (unseen > 0) {
    spdlog::warn("{} categorical value(s) outside the training vocabulary were mapped to code 0", unseen);
  }

  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t r : a.fit) mean += x(r, j);
    mean /= static_cast<double>(a.fit.size());
    double var = 0.0;
    for (std::size_t r : a.fit) var += (x(r, j) - mean) * (x(r, j) - mean);
    var /= static_cast<double>(a.fit.size());
    const double sd = std::sqrt(var);
    columns[j].mean = mean;
    columns[j].scale = sd > 0.0 ? sd : 1.0;
    for (std::size_t r = 0; r < n; ++r) x(r, j) = (x(r, j) - mean) / columns[j].scale;
  }

  FeatureMatrix all;
  all.x = std::move(x);
  all.y = std::move(labels);
  all.columns = std::move(columns);
  Splits s;
  s.train = all.subset(a.fit);
  s.calibration = all.subset(a.calibration);
  s.test = all.subset(a.test);
  s.total_rows = n;
  s.unseen_categories = unseen;
  return s;
}

namespace {

std::string shortest(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

RawTable synth_dataset(std::size_t n, std::size_t d, double class_sep, std::uint64_t seed) {
  if (n < 2 || d == 0) throw DataError("synthetic dataset needs n >= 2 and d >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  RawTable t;
  for (std::size_t j = 0; j < d; ++j) t.names.push_back("f" + std::to_string(j));
  t.names.push_back("label");
  t.kinds.assign(d, ColumnKind::kNumeric);
  t.kinds.push_back(ColumnKind::kLabel);
  t.label_index = d;
  const std::size_t n0 = n / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = i < n0 ? 0 : 1;
    const double centre = label == 1 ? class_sep / 2.0 : -class_sep / 2.0;
    std::vector<std::string> row;
    row.reserve(d + 1);
    for (std::size_t j = 0; j < d; ++j) row.push_back(shortest(centre + noise(rng)));
    row.push_back(std::to_string(label));
    t.rows.push_back(std::move(row));
  }
  return t;
}

namespace {

constexpr io::Magic kCacheMagic = {'L', 'A', 'R', 'A', 'R', 'D', 'A', 'T'};
constexpr std::uint32_t kCacheVersion = 1;

void write_matrix(io::Writer& w, const FeatureMatrix& m) {
  w.tensor(m.x);
  w.u64(m.y.size());
  for (int v : m.y) w.u8(static_cast<std::uint8_t>(v));
}

FeatureMatrix read_matrix(io::Reader& r, const std::vector<ColumnInfo>& columns) {
  FeatureMatrix m;
  m.x = r.tensor();
  const std::uint64_t n = r.u64();
  if (n != m.x.rows()) throw CorruptFileError("label count does not match feature rows");
  m.y.resize(n);
  for (int& v : m.y) {
    v = r.u8();
    if (v > 1) throw CorruptFileError("label outside {0, 1}");
  }
  if (m.x.cols() != columns.size()) throw CorruptFileError("feature width does not match column table");
  m.columns = columns;
  return m;
}

}  // namespace

void save_cache(const Splits& splits, const std::filesystem::path& path) {
  io::Writer w;
  w.u64(splits.total_rows);
  w.u64(splits.unseen_categories);
  const auto& cols = splits.train.columns;
  w.u64(cols.size());
  for (const ColumnInfo& c : cols) {
    w.str(c.name);
    w.u8(static_cast<std::uint8_t>(c.kind));
    w.u64(c.categories.size());
    for (const std::string& cat : c.categories) w.str(cat);
    w.f64(c.mean);
    w.f64(c.scale);
  }
  write_matrix(w, splits.train);
  write_matrix(w, splits.calibration);
  write_matrix(w, splits.test);
  io::write_container(path, kCacheMagic, kCacheVersion, w);
}

Splits load_cache(const std::filesystem::path& path) {
  io::Reader r = io::read_container(path, kCacheMagic, kCacheVersion);
  Splits s;
  s.total_rows = r.u64();
  s.unseen_categories = r.u64();
  const std::uint64_t ncols = r.u64();
  if (ncols > 1'000'000) throw CorruptFileError("implausible column count");
  std::vector<ColumnInfo> cols(ncols);
  for (ColumnInfo& c : cols) {
    c.name = r.str();
    const std::uint8_t kind = r.u8();
    if (kind > 3) throw CorruptFileError("unknown column kind");
    c.kind = static_cast<ColumnKind>(kind);
    const std::uint64_t ncat = r.u64();
    if (ncat > 100'000'000) throw CorruptFileError("implausible category count");
    c.categories.resize(ncat);
    for (std::string& cat : c.categories) cat = r.str();
    c.mean = r.f64();
    c.scale = r.f64();
  }
  s.train = read_matrix(r, cols);
  s.calibration = read_matrix(r, cols);
  s.test = read_matrix(r, cols);
  if (!r.at_end()) throw CorruptFileError("trailing bytes after data cache payload");
  return s;
}

}  // namespace larar
