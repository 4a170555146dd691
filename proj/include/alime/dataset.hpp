#pragma once

// Tabular ingestion: CSV + JSON schema -> Dataset -> one-hot EncodedDataset,
// standardization and seeded train/test splitting.

#include "alime/error.hpp"
#include "alime/rng.hpp"
#include "alime/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace alime {

enum class FeatureKind { numeric, categorical };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::numeric;
  std::vector<std::string> categories;  // categorical only, in encoding order
};

struct FeatureSchema {
  std::vector<FeatureSpec> features;
  std::string label_column;

  void validate() const {
    std::set<std::string> names;
    for (const auto& f : features) {
      require(!f.name.empty(), ErrorCode::invalid_argument, "feature with empty name");
      require(names.insert(f.name).second, ErrorCode::invalid_argument,
              "duplicate feature name '" + f.name + "'");
      if (f.kind == FeatureKind::categorical) {
        require(f.categories.size() >= 2, ErrorCode::invalid_argument,
                "categorical feature '" + f.name + "' needs at least 2 categories");
        std::set<std::string> seen(f.categories.begin(), f.categories.end());
        require(seen.size() == f.categories.size(), ErrorCode::invalid_argument,
                "categorical feature '" + f.name + "' has duplicate categories");
      }
    }
    require(!label_column.empty(), ErrorCode::invalid_argument, "schema has no label column");
    require(!names.contains(label_column), ErrorCode::invalid_argument,
            "label column '" + label_column + "' is also listed as a feature");
  }

  std::size_t categorical_count() const {
    return static_cast<std::size_t>(std::count_if(features.begin(), features.end(), [](const auto& f) {
      return f.kind == FeatureKind::categorical;
    }));
  }

  nlohmann::json to_json() const {
    nlohmann::json features_json = nlohmann::json::array();
    for (const auto& f : features) {
      nlohmann::json j = {{"name", f.name},
                          {"kind", f.kind == FeatureKind::numeric ? "numeric" : "categorical"}};
      if (f.kind == FeatureKind::categorical) j["categories"] = f.categories;
      features_json.push_back(std::move(j));
    }
    return {{"features", features_json}, {"label_column", label_column}};
  }

  static FeatureSchema from_json(const nlohmann::json& j) {
    FeatureSchema schema;
    try {
      schema.label_column = j.at("label_column").get<std::string>();
      for (const auto& fj : j.at("features")) {
        FeatureSpec spec;
        spec.name = fj.at("name").get<std::string>();
        const auto kind = fj.value("kind", std::string("numeric"));
        if (kind == "numeric") {
          spec.kind = FeatureKind::numeric;
        } else if (kind == "categorical") {
          spec.kind = FeatureKind::categorical;
          spec.categories = fj.at("categories").get<std::vector<std::string>>();
        } else {
          throw Error(ErrorCode::parse_error, "feature '" + spec.name + "' has unknown kind '" + kind + "'");
        }
        schema.features.push_back(std::move(spec));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::parse_error, std::string("malformed schema: ") + e.what());
    }
    schema.validate();
    return schema;
  }
};

inline FeatureSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::missing_file, "cannot open schema " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, "schema " + path.string() + ": " + e.what());
  }
  return FeatureSchema::from_json(j);
}

/// A raw cell: numeric value or category token.
using CellValue = std::variant<double, std::string>;

struct Dataset {
  FeatureSchema schema;
  std::vector<std::vector<CellValue>> rows;
  std::vector<int> labels;
  // Number of imputed cells per feature (schema order).
  std::vector<std::size_t> imputed;

  std::size_t size() const { return rows.size(); }
  std::size_t total_imputed() const {
    std::size_t total = 0;
    for (auto c : imputed) total += c;
    return total;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

/// Splits one CSV record. Handles double-quoted fields with "" escapes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(trim(current));
  return fields;
}

inline bool is_missing(const std::string& cell) { return cell.empty() || cell == "?"; }

inline std::optional<double> parse_number(const std::string& cell) {
  try {
    std::size_t used = 0;
    const double value = std::stod(cell, &used);
    if (used != cell.size() || !std::isfinite(value)) return std::nullopt;
    return value;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Reads a header-first CSV. Missing cells (empty or "?") are imputed with the
/// column mean (numeric) or the column mode (categorical, ties -> first
/// category in schema order).
inline Dataset read_csv(std::istream& in, const FeatureSchema& schema, const std::string& source = "<stream>") {
  schema.validate();
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::parse_error, source + ": empty file, no header");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);  // UTF-8 BOM
  const auto header = detail::split_csv_line(line);
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < header.size(); ++i) position.emplace(header[i], i);

  auto column_of = [&](const std::string& name) {
    auto it = position.find(name);
    require(it != position.end(), ErrorCode::missing_column, source + ": column '" + name + "' not in header");
    return it->second;
  };
  std::vector<std::size_t> feature_columns;
  for (const auto& f : schema.features) feature_columns.push_back(column_of(f.name));
  const std::size_t label_col = column_of(schema.label_column);

  const std::size_t k = schema.features.size();
  Dataset ds;
  ds.schema = schema;
  ds.imputed.assign(k, 0);
  std::vector<std::vector<bool>> missing;
  std::vector<std::map<std::string, std::size_t>> category_index(k);
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t c = 0; c < schema.features[f].categories.size(); ++c) {
      category_index[f].emplace(schema.features[f].categories[c], c);
    }
  }

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(line);
    const std::string where = source + ":" + std::to_string(line_no);
    require(fields.size() == header.size(), ErrorCode::parse_error,
            where + ": expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));

    const auto label_value = detail::parse_number(fields[label_col]);
    require(label_value && (*label_value == 0.0 || *label_value == 1.0), ErrorCode::non_binary_label,
            where + ": label '" + fields[label_col] + "' is not 0 or 1");
    ds.labels.push_back(static_cast<int>(*label_value));

    std::vector<CellValue> row(k);
    std::vector<bool> row_missing(k, false);
    for (std::size_t f = 0; f < k; ++f) {
      const auto& cell = fields[feature_columns[f]];
      const auto& spec = schema.features[f];
      if (detail::is_missing(cell)) {
        row_missing[f] = true;
        continue;
      }
      if (spec.kind == FeatureKind::numeric) {
        const auto v = detail::parse_number(cell);
        require(v.has_value(), ErrorCode::parse_error,
                where + ": '" + cell + "' is not numeric (feature " + spec.name + ")");
        row[f] = *v;
      } else {
        require(category_index[f].contains(cell), ErrorCode::unknown_category,
                where + ": '" + cell + "' is not a category of " + spec.name);
        row[f] = cell;
      }
    }
    ds.rows.push_back(std::move(row));
    missing.push_back(std::move(row_missing));
  }

  for (std::size_t f = 0; f < k; ++f) {
    const auto& spec = schema.features[f];
    CellValue fill;
    if (spec.kind == FeatureKind::numeric) {
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t r = 0; r < ds.rows.size(); ++r) {
        if (!missing[r][f]) {
          sum += std::get<double>(ds.rows[r][f]);
          ++count;
        }
      }
      fill = count > 0 ? sum / static_cast<double>(count) : 0.0;
    } else {
      std::vector<std::size_t> counts(spec.categories.size(), 0);
      for (std::size_t r = 0; r < ds.rows.size(); ++r) {
        if (!missing[r][f]) ++counts[category_index[f].at(std::get<std::string>(ds.rows[r][f]))];
      }
      const auto mode = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      fill = spec.categories[mode];
    }
    for (std::size_t r = 0; r < ds.rows.size(); ++r) {
      if (missing[r][f]) {
        ds.rows[r][f] = fill;
        ++ds.imputed[f];
      }
    }
  }
  return ds;
}

inline Dataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::missing_file, "cannot open " + path.string());
  return read_csv(in, schema, path.string());
}

/// Origin of one encoded column.
struct EncodedColumn {
  std::size_t feature = 0;
  std::optional<std::size_t> category;  // set for one-hot columns

  bool operator==(const EncodedColumn&) const = default;
};

struct EncodedDataset {
  Matrix matrix;
  std::vector<EncodedColumn> column_map;
  std::vector<std::string> column_names;
  std::vector<int> labels;
  std::vector<std::size_t> row_ids;  // index of each row in the source Dataset

  std::size_t rows() const { return static_cast<std::size_t>(matrix.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(matrix.cols()); }

  EncodedDataset subset(const std::vector<std::size_t>& rows) const {
    EncodedDataset out;
    out.matrix = select_rows(matrix, rows);
    out.column_map = column_map;
    out.column_names = column_names;
    out.labels = select_items(labels, rows);
    out.row_ids = select_items(row_ids, rows);
    return out;
  }
};

inline std::vector<EncodedColumn> encode_column_map(const FeatureSchema& schema) {
  std::vector<EncodedColumn> map;
  for (std::size_t f = 0; f < schema.features.size(); ++f) {
    const auto& spec = schema.features[f];
    if (spec.kind == FeatureKind::numeric) {
      map.push_back({f, std::nullopt});
    } else {
      for (std::size_t c = 0; c < spec.categories.size(); ++c) map.push_back({f, c});
    }
  }
  return map;
}

inline std::vector<std::string> encoded_column_names(const FeatureSchema& schema) {
  std::vector<std::string> names;
  for (const auto& col : encode_column_map(schema)) {
    const auto& spec = schema.features[col.feature];
    names.push_back(col.category ? spec.name + "=" + spec.categories[*col.category] : spec.name);
  }
  return names;
}

inline EncodedDataset one_hot_encode(const Dataset& ds) {
  EncodedDataset out;
  out.column_map = encode_column_map(ds.schema);
  out.column_names = encoded_column_names(ds.schema);
  out.labels = ds.labels;
  out.matrix = Matrix::Zero(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(out.column_map.size()));
  out.row_ids.resize(ds.size());

  // first encoded column of each feature
  std::vector<std::size_t> offset(ds.schema.features.size());
  for (std::size_t c = out.column_map.size(); c-- > 0;) offset[out.column_map[c].feature] = c;

  for (std::size_t r = 0; r < ds.size(); ++r) {
    out.row_ids[r] = r;
    for (std::size_t f = 0; f < ds.schema.features.size(); ++f) {
      const auto& spec = ds.schema.features[f];
      const auto row = static_cast<Eigen::Index>(r);
      if (spec.kind == FeatureKind::numeric) {
        out.matrix(row, static_cast<Eigen::Index>(offset[f])) = std::get<double>(ds.rows[r][f]);
      } else {
        const auto& token = std::get<std::string>(ds.rows[r][f]);
        const auto it = std::find(spec.categories.begin(), spec.categories.end(), token);
        require(it != spec.categories.end(), ErrorCode::unknown_category, token + " in " + spec.name);
        const auto cat = static_cast<std::size_t>(it - spec.categories.begin());
        out.matrix(row, static_cast<Eigen::Index>(offset[f] + cat)) = 1.0;
      }
    }
  }
  return out;
}

enum class StdConvention { population, sample };

struct Scaler {
  Vector mean;
  Vector std;
  std::vector<bool> constant;
  StdConvention convention = StdConvention::population;

  std::size_t size() const { return static_cast<std::size_t>(mean.size()); }

  double effective_std(std::size_t c) const { return constant[c] ? 1.0 : std[static_cast<Eigen::Index>(c)]; }

  static Scaler identity(std::size_t cols) {
    return {Vector::Zero(static_cast<Eigen::Index>(cols)), Vector::Ones(static_cast<Eigen::Index>(cols)),
            std::vector<bool>(cols, false), StdConvention::population};
  }

  nlohmann::json to_json() const {
    return {{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
            {"std", std::vector<double>(std.data(), std.data() + std.size())},
            {"constant", std::vector<bool>(constant)},
            {"convention", convention == StdConvention::population ? "population" : "sample"}};
  }

  static Scaler from_json(const nlohmann::json& j) {
    Scaler s;
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto std = j.at("std").get<std::vector<double>>();
    s.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    s.std = Eigen::Map<const Vector>(std.data(), static_cast<Eigen::Index>(std.size()));
    s.constant = j.at("constant").get<std::vector<bool>>();
    s.convention = j.value("convention", std::string("population")) == "sample" ? StdConvention::sample
                                                                                  : StdConvention::population;
    return s;
  }
};

inline Scaler fit_scaler(const Matrix& matrix, StdConvention convention = StdConvention::population) {
  require(matrix.rows() >= 1, ErrorCode::empty_matrix, "cannot fit a scaler on zero rows");
  const auto n = static_cast<double>(matrix.rows());
  Scaler s;
  s.convention = convention;
  s.mean = matrix.colwise().mean().transpose();
  s.std.resize(matrix.cols());
  s.constant.assign(static_cast<std::size_t>(matrix.cols()), false);
  const double denom = (convention == StdConvention::sample && matrix.rows() > 1) ? n - 1.0 : n;
  for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
    const double ss = (matrix.col(c).array() - s.mean[c]).square().sum();
    s.std[c] = std::sqrt(ss / denom);
    // Exact zero spread only; anything else is a real (if tiny) variance.
    const bool flat = (matrix.col(c).array() == matrix(0, c)).all();
    if (flat) s.std[c] = 0.0;
    s.constant[static_cast<std::size_t>(c)] = flat;
  }
  return s;
}

inline Matrix apply_scaler(const Scaler& scaler, const Matrix& matrix) {
  require(static_cast<std::size_t>(matrix.cols()) == scaler.size(), ErrorCode::dimension_mismatch,
          "scaler has " + std::to_string(scaler.size()) + " columns, matrix has " + std::to_string(matrix.cols()));
  Matrix out(matrix.rows(), matrix.cols());
  for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
    out.col(c) = (matrix.col(c).array() - scaler.mean[c]) / scaler.effective_std(static_cast<std::size_t>(c));
  }
  return out;
}

inline RowVector apply_scaler(const Scaler& scaler, const RowVector& row) {
  Matrix m = row;
  return apply_scaler(scaler, m).row(0);
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded Fisher-Yates permutation; the first floor(N * fraction) rows train.
inline SplitIndices split_indices(std::size_t rows, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction < 1.0, ErrorCode::invalid_argument,
          "train fraction must be in (0, 1)");
  std::vector<std::size_t> order(rows);
  for (std::size_t i = 0; i < rows; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(rows) * train_fraction + 1e-9));
  require(n_train > 0 && n_train < rows, ErrorCode::degenerate_split,
          std::to_string(rows) + " rows at fraction " + std::to_string(train_fraction) + " leaves one side empty");
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return out;
}

inline std::pair<EncodedDataset, EncodedDataset> split(const EncodedDataset& ds, double train_fraction,
                                                       std::uint64_t seed) {
  const auto idx = split_indices(ds.rows(), train_fraction, seed);
  return {ds.subset(idx.train), ds.subset(idx.test)};
}

}  // namespace alime
