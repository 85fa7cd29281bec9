/*
 * Copyright 2026 The cfproto Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Tabular dataset ingestion: schema documents, delimited-text loading,
// min-max scaling, median absolute deviation and stratified splitting.
//
// A record is a Vector with one entry per schema feature: continuous
// features hold their value in original units, categorical features hold the
// level index into the schema vocabulary.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfproto/error.hpp"
#include "cfproto/ndkernel.hpp"
#include "cfproto/rng.hpp"

namespace cfproto {

using Json = nlohmann::json;

enum class FeatureKind { kContinuous, kCategorical };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::kContinuous;
  std::vector<std::string> levels;  // categorical only

  std::size_t cardinality() const { return levels.size(); }
  bool categorical() const { return kind == FeatureKind::kCategorical; }
};

struct TargetSpec {
  std::string name;
  std::vector<std::string> classes;
};

struct DatasetSchema {
  std::string name;
  char delimiter = ',';
  std::vector<std::string> missing = {"", "?", "NA"};
  std::vector<FeatureSpec> features;
  TargetSpec target;

  std::size_t num_classes() const { return target.classes.size(); }

  std::vector<std::size_t> continuous_features() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (!features[i].categorical()) out.push_back(i);
    }
    return out;
  }

  std::vector<std::size_t> categorical_features() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (features[i].categorical()) out.push_back(i);
    }
    return out;
  }

  int class_index(const std::string& label) const {
    for (std::size_t i = 0; i < target.classes.size(); ++i) {
      if (target.classes[i] == label) return static_cast<int>(i);
    }
    throw SchemaViolation("unknown class label '" + label + "' for target '" + target.name + "'");
  }

  void validate() const {
    std::set<std::string> seen;
    if (features.empty()) throw SchemaViolation("schema declares no features");
    for (const FeatureSpec& f : features) {
      if (f.name.empty()) throw SchemaViolation("feature with empty name");
      if (!seen.insert(f.name).second) {
        throw SchemaViolation("duplicate feature name '" + f.name + "'");
      }
      if (f.categorical()) {
        if (f.cardinality() < 2) {
          throw SchemaViolation("categorical feature '" + f.name + "' needs at least 2 levels");
        }
        std::set<std::string> lv(f.levels.begin(), f.levels.end());
        if (lv.size() != f.levels.size()) {
          throw SchemaViolation("categorical feature '" + f.name + "' repeats a level");
        }
      }
    }
    if (target.classes.size() < 2) throw SchemaViolation("target needs at least 2 classes");
    if (seen.count(target.name)) throw SchemaViolation("target name collides with a feature");
  }
};

inline Json to_json(const DatasetSchema& s) {
  Json features = Json::array();
  for (const FeatureSpec& f : s.features) {
    Json j = {{"name", f.name}, {"kind", f.categorical() ? "categorical" : "continuous"}};
    if (f.categorical()) j["levels"] = f.levels;
    features.push_back(std::move(j));
  }
  return Json{{"name", s.name},
              {"delimiter", std::string(1, s.delimiter)},
              {"missing", s.missing},
              {"features", std::move(features)},
              {"target", {{"name", s.target.name}, {"classes", s.target.classes}}}};
}

inline DatasetSchema schema_from_json(const Json& j) {
  DatasetSchema s;
  try {
    s.name = j.value("name", std::string{});
    const std::string delim = j.value("delimiter", std::string(","));
    if (delim == "\\t" || delim == "tab") {
      s.delimiter = '\t';
    } else if (delim.size() == 1) {
      s.delimiter = delim[0];
    } else {
      throw SchemaViolation("delimiter must be a single character");
    }
    if (j.contains("missing")) s.missing = j.at("missing").get<std::vector<std::string>>();
    for (const Json& f : j.at("features")) {
      FeatureSpec spec;
      spec.name = f.at("name").get<std::string>();
      const std::string kind = f.at("kind").get<std::string>();
      if (kind == "continuous") {
        spec.kind = FeatureKind::kContinuous;
      } else if (kind == "categorical") {
        spec.kind = FeatureKind::kCategorical;
        spec.levels = f.at("levels").get<std::vector<std::string>>();
      } else {
        throw SchemaViolation("feature '" + spec.name + "' has unknown kind '" + kind + "'");
      }
      s.features.push_back(std::move(spec));
    }
    s.target.name = j.at("target").at("name").get<std::string>();
    s.target.classes = j.at("target").at("classes").get<std::vector<std::string>>();
  } catch (const Json::exception& e) {
    throw SchemaViolation(std::string("malformed schema document: ") + e.what());
  }
  s.validate();
  return s;
}

inline DatasetSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaViolation("cannot open schema file '" + path + "'");
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw SchemaViolation("schema file '" + path + "' is not valid JSON: " + e.what());
  }
  return schema_from_json(j);
}

// FNV-1a over the canonical schema document; stored in checkpoints so a
// model is never paired with a different feature layout.
inline std::string schema_fingerprint(const DatasetSchema& s) {
  const std::string doc = to_json(s).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : doc) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

struct Dataset {
  DatasetSchema schema;
  Matrix values;            // rows x features, see header comment
  std::vector<int> labels;  // class index per row

  std::size_t rows() const { return labels.size(); }

  Vector record(std::size_t i) const { return values.row(static_cast<Eigen::Index>(i)).transpose(); }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.schema = schema;
    out.values.resize(static_cast<Eigen::Index>(idx.size()), values.cols());
    out.labels.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out.values.row(static_cast<Eigen::Index>(r)) = values.row(static_cast<Eigen::Index>(idx[r]));
      out.labels.push_back(labels[idx[r]]);
    }
    return out;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Splits one delimited line; double quotes group a field and "" escapes a quote.
inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == delim) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  return out;
}

}  // namespace detail

// Reads a delimited table with a header row. Columns not named by the schema
// are ignored.
inline Dataset load_dataset(std::istream& in, const DatasetSchema& schema, bool drop_missing) {
  schema.validate();
  std::string line;
  if (!std::getline(in, line)) throw EmptyDataset("input has no header row");
  const std::vector<std::string> header = detail::split_line(line, schema.delimiter);
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column.emplace(header[i], i);
  std::vector<std::size_t> feature_col;
  for (const FeatureSpec& f : schema.features) {
    auto it = column.find(f.name);
    if (it == column.end()) throw SchemaViolation("column '" + f.name + "' missing from header");
    feature_col.push_back(it->second);
  }
  auto tgt = column.find(schema.target.name);
  if (tgt == column.end()) {
    throw SchemaViolation("target column '" + schema.target.name + "' missing from header");
  }
  const std::size_t target_col = tgt->second;
  const std::set<std::string> missing(schema.missing.begin(), schema.missing.end());
  std::vector<std::map<std::string, int>> vocab(schema.features.size());
  for (std::size_t f = 0; f < schema.features.size(); ++f) {
    for (std::size_t l = 0; l < schema.features[f].levels.size(); ++l) {
      vocab[f].emplace(schema.features[f].levels[l], static_cast<int>(l));
    }
  }

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> cells = detail::split_line(line, schema.delimiter);
    if (cells.size() != header.size()) {
      throw SchemaViolation("line " + std::to_string(line_no) + " has " +
                            std::to_string(cells.size()) + " cells, header has " +
                            std::to_string(header.size()));
    }
    bool has_missing = missing.count(cells[target_col]) > 0;
    for (std::size_t c : feature_col) has_missing = has_missing || missing.count(cells[c]) > 0;
    if (has_missing) {
      if (drop_missing) continue;
      throw SchemaViolation("line " + std::to_string(line_no) +
                            " has a missing value and drop_missing is off");
    }
    std::vector<double> rec(schema.features.size());
    for (std::size_t f = 0; f < schema.features.size(); ++f) {
      const std::string& cell = cells[feature_col[f]];
      if (schema.features[f].categorical()) {
        auto it = vocab[f].find(cell);
        if (it == vocab[f].end()) {
          throw SchemaViolation("line " + std::to_string(line_no) + ": unknown level '" + cell +
                                "' for feature '" + schema.features[f].name + "'");
        }
        rec[f] = static_cast<double>(it->second);
      } else {
        std::size_t used = 0;
        double v = 0.0;
        try {
          v = std::stod(cell, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != cell.size() || !std::isfinite(v)) {
          throw SchemaViolation("line " + std::to_string(line_no) + ": '" + cell +
                                "' is not a number for feature '" + schema.features[f].name + "'");
        }
        rec[f] = v;
      }
    }
    labels.push_back(schema.class_index(cells[target_col]));
    rows.push_back(std::move(rec));
  }
  if (rows.empty()) throw EmptyDataset("no usable rows in dataset '" + schema.name + "'");
  Dataset ds;
  ds.schema = schema;
  ds.values.resize(static_cast<Eigen::Index>(rows.size()),
                   static_cast<Eigen::Index>(schema.features.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t f = 0; f < rows[r].size(); ++f) {
      ds.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)) = rows[r][f];
    }
  }
  ds.labels = std::move(labels);
  return ds;
}

inline Dataset load_dataset(const std::string& path, const DatasetSchema& schema,
                            bool drop_missing) {
  std::ifstream in(path);
  if (!in) throw EmptyDataset("cannot open dataset file '" + path + "'");
  return load_dataset(in, schema, drop_missing);
}

// ---------------------------------------------------------------------------
// Min-max scaling.

struct ScalingParams {
  double min = 0.0;
  double max = 1.0;
  bool constant() const { return !(max > min); }
};

// Constant features (max == min) map to 0.
inline double minmax_scale(double v, ScalingParams p) {
  if (p.max < p.min) throw RejectedInput("scaling params have max < min");
  if (p.constant()) return 0.0;
  return (v - p.min) / (p.max - p.min);
}

inline double inverse_scale(double s, ScalingParams p) {
  if (p.max < p.min) throw RejectedInput("scaling params have max < min");
  if (p.constant()) return p.min;
  return p.min + s * (p.max - p.min);
}

inline std::vector<double> minmax_scale(std::span<const double> values, ScalingParams p) {
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(minmax_scale(v, p));
  return out;
}

inline std::vector<double> inverse_scale(std::span<const double> scaled, ScalingParams p) {
  std::vector<double> out;
  out.reserve(scaled.size());
  for (double s : scaled) out.push_back(inverse_scale(s, p));
  return out;
}

// ---------------------------------------------------------------------------
// Median absolute deviation.

// Even length: mean of the two central order statistics.
inline double median(std::vector<double> v) {
  if (v.empty()) throw RejectedInput("median of an empty vector");
  const std::size_t n = v.size();
  const std::size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

inline double mad(std::span<const double> values) {
  std::vector<double> v(values.begin(), values.end());
  const double m = median(v);
  for (double& x : v) x = std::abs(x - m);
  return median(std::move(v));
}

// MAD as used in proximity denominators: zero is replaced by 1.
inline double mad_denominator(double mad_value) { return mad_value == 0.0 ? 1.0 : mad_value; }

// ---------------------------------------------------------------------------
// Stratified split.

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Per-class shuffles with a largest-remainder allocation, so the overall
// train size is round(ratio * n) and every class keeps its share within one
// row. Both index lists come back sorted.
inline SplitIndices split(std::span<const int> labels, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw RejectedInput("split ratio must lie in (0, 1)");
  const std::size_t n = labels.size();
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
  const auto total_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));

  struct Share {
    int label;
    std::size_t take;
    double remainder;
  };
  std::vector<Share> shares;
  std::size_t allocated = 0;
  for (const auto& [label, rows] : by_class) {
    const double exact = ratio * static_cast<double>(rows.size());
    const auto take = static_cast<std::size_t>(std::floor(exact));
    shares.push_back({label, take, exact - static_cast<double>(take)});
    allocated += take;
  }
  std::vector<std::size_t> order(shares.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return shares[a].remainder > shares[b].remainder;
  });
  for (std::size_t k = 0; allocated < total_train && k < order.size(); ++k) {
    Share& s = shares[order[k]];
    if (s.take < by_class[s.label].size()) {
      ++s.take;
      ++allocated;
    }
  }

  Rng rng(seed);
  SplitIndices out;
  for (const Share& s : shares) {
    std::vector<std::size_t> rows = by_class[s.label];
    rng.shuffle(rows);
    out.train.insert(out.train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(s.take));
    out.test.insert(out.test.end(), rows.begin() + static_cast<std::ptrdiff_t>(s.take), rows.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

// ---------------------------------------------------------------------------
// Scaling statistics fitted on the training split.

struct FeatureScaler {
  std::vector<std::size_t> continuous;  // schema indices of continuous features
  std::vector<std::size_t> categorical;
  std::vector<ScalingParams> params;    // per continuous feature
  std::vector<double> mad;              // per continuous feature, on scaled training values

  std::size_t num_continuous() const { return continuous.size(); }

  // Scaled continuous block of one record.
  Vector scale(const Vector& record) const {
    Vector out(static_cast<Eigen::Index>(continuous.size()));
    for (std::size_t i = 0; i < continuous.size(); ++i) {
      out[static_cast<Eigen::Index>(i)] =
          minmax_scale(record[static_cast<Eigen::Index>(continuous[i])], params[i]);
    }
    return out;
  }

  std::vector<int> levels(const Vector& record) const {
    std::vector<int> out;
    out.reserve(categorical.size());
    for (std::size_t c : categorical) {
      out.push_back(static_cast<int>(record[static_cast<Eigen::Index>(c)]));
    }
    return out;
  }

  // Rebuilds a record from a scaled continuous block and categorical levels.
  Vector unscale(const Vector& scaled, std::span<const int> lv) const {
    Vector rec(static_cast<Eigen::Index>(continuous.size() + categorical.size()));
    for (std::size_t i = 0; i < continuous.size(); ++i) {
      rec[static_cast<Eigen::Index>(continuous[i])] =
          inverse_scale(scaled[static_cast<Eigen::Index>(i)], params[i]);
    }
    for (std::size_t i = 0; i < categorical.size(); ++i) {
      rec[static_cast<Eigen::Index>(categorical[i])] = static_cast<double>(lv[i]);
    }
    return rec;
  }
};

inline FeatureScaler fit_scaler(const Dataset& ds, std::span<const std::size_t> train_rows) {
  if (train_rows.empty()) throw EmptyDataset("cannot fit scaling on an empty training split");
  FeatureScaler sc;
  sc.continuous = ds.schema.continuous_features();
  sc.categorical = ds.schema.categorical_features();
  for (std::size_t f : sc.continuous) {
    std::vector<double> col;
    col.reserve(train_rows.size());
    for (std::size_t r : train_rows) {
      col.push_back(ds.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)));
    }
    const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
    ScalingParams p{*lo, *hi};
    sc.params.push_back(p);
    sc.mad.push_back(mad(minmax_scale(col, p)));
  }
  return sc;
}

inline Json to_json(const FeatureScaler& sc) {
  Json params = Json::array();
  for (const ScalingParams& p : sc.params) params.push_back({p.min, p.max});
  return Json{{"continuous", sc.continuous},
              {"categorical", sc.categorical},
              {"minmax", std::move(params)},
              {"mad", sc.mad}};
}

inline FeatureScaler scaler_from_json(const Json& j) {
  FeatureScaler sc;
  sc.continuous = j.at("continuous").get<std::vector<std::size_t>>();
  sc.categorical = j.at("categorical").get<std::vector<std::size_t>>();
  for (const Json& p : j.at("minmax")) {
    sc.params.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  }
  sc.mad = j.at("mad").get<std::vector<double>>();
  if (sc.params.size() != sc.continuous.size() || sc.mad.size() != sc.continuous.size()) {
    throw RejectedInput("scaler document is inconsistent");
  }
  return sc;
}

// Model-ready view of a set of rows: scaled continuous block plus level
// indices of the categorical features (both in schema order).
struct TabularBatch {
  Matrix continuous;                    // rows x num_continuous, scaled
  std::vector<std::vector<int>> levels; // rows x num_categorical

  std::size_t rows() const { return levels.size(); }
};

inline TabularBatch make_batch(const Dataset& ds, const FeatureScaler& sc,
                               std::span<const std::size_t> rows) {
  TabularBatch b;
  b.continuous.resize(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(sc.num_continuous()));
  b.levels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Vector rec = ds.record(rows[i]);
    b.continuous.row(static_cast<Eigen::Index>(i)) = sc.scale(rec).transpose();
    b.levels.push_back(sc.levels(rec));
  }
  return b;
}

inline TabularBatch make_batch(const Dataset& ds, const FeatureScaler& sc) {
  std::vector<std::size_t> all(ds.rows());
  std::iota(all.begin(), all.end(), 0);
  return make_batch(ds, sc, all);
}

inline TabularBatch select_rows(const TabularBatch& b, std::span<const std::size_t> rows) {
  TabularBatch out;
  out.continuous.resize(static_cast<Eigen::Index>(rows.size()), b.continuous.cols());
  out.levels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.continuous.row(static_cast<Eigen::Index>(i)) = b.continuous.row(static_cast<Eigen::Index>(rows[i]));
    out.levels.push_back(b.levels[rows[i]]);
  }
  return out;
}

}  // namespace cfproto
