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

// Counterfactual quality metrics and their per-dataset summaries.
//
//   sparsity        1 - (changed features) / (all features)
//   cat_proximity   1 - (changed categorical) / (categorical features)
//   cont_proximity  mean over continuous features of |delta_i| / MAD_i
//   IM1             |x - AE_t(x)|^2 / (|x - AE_t0(x)|^2 + eps)
//   IM2             |AE_t(x) - AE(x)|^2 / (|x|_1 + eps)
//
// Summary tables hold one row pair (mean, stdev) per dataset and one column
// pair (SS, U) per metric; "--" marks an absent value.

#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "cfproto/dataio.hpp"
#include "cfproto/error.hpp"
#include "cfproto/ndkernel.hpp"

namespace cfproto {

inline constexpr double kImEpsilon = 1e-8;
inline constexpr double kContinuousTolerance = 1e-6;

inline bool feature_changed(const FeatureSpec& f, double a, double b, double tol) {
  if (f.categorical()) return a != b;
  return std::abs(a - b) > tol;
}

inline void check_records(const Vector& x0, const Vector& x_cfe, const DatasetSchema& schema) {
  if (x0.size() != x_cfe.size() || static_cast<std::size_t>(x0.size()) != schema.features.size()) {
    throw RejectedInput("records do not match the schema width");
  }
}

// Records in original units (categorical values as level indices).
inline double sparsity(const Vector& x0, const Vector& x_cfe, const DatasetSchema& schema,
                       double tol = kContinuousTolerance) {
  check_records(x0, x_cfe, schema);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < schema.features.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (feature_changed(schema.features[i], x0[k], x_cfe[k], tol)) ++changed;
  }
  return 1.0 - static_cast<double>(changed) / static_cast<double>(schema.features.size());
}

inline std::optional<double> cat_proximity(const Vector& x0, const Vector& x_cfe,
                                           const DatasetSchema& schema) {
  check_records(x0, x_cfe, schema);
  const std::vector<std::size_t> cat = schema.categorical_features();
  if (cat.empty()) return std::nullopt;
  std::size_t changed = 0;
  for (std::size_t i : cat) {
    const auto k = static_cast<Eigen::Index>(i);
    if (x0[k] != x_cfe[k]) ++changed;
  }
  return 1.0 - static_cast<double>(changed) / static_cast<double>(cat.size());
}

// Continuous blocks only; `mad` is in the same units as the values and is
// passed through mad_denominator.
inline std::optional<double> cont_proximity(const Vector& c0, const Vector& c_cfe, const Vector& mad) {
  if (c0.size() != c_cfe.size() || c0.size() != mad.size()) {
    throw RejectedInput("cont_proximity: length mismatch");
  }
  if (c0.size() == 0) return std::nullopt;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < c0.size(); ++i) sum += std::abs(c_cfe[i] - c0[i]) / mad_denominator(mad[i]);
  return sum / static_cast<double>(c0.size());
}

// Record form: continuous features compared in scaled units against the
// scaler's MAD (fitted on scaled training values).
inline std::optional<double> cont_proximity(const Vector& x0, const Vector& x_cfe, const FeatureScaler& sc) {
  Vector mad(static_cast<Eigen::Index>(sc.mad.size()));
  for (std::size_t i = 0; i < sc.mad.size(); ++i) mad[static_cast<Eigen::Index>(i)] = sc.mad[i];
  return cont_proximity(sc.scale(x0), sc.scale(x_cfe), mad);
}

inline double im1(const Vector& x, const Vector& recon_target, const Vector& recon_origin,
                  double eps = kImEpsilon) {
  if (x.size() != recon_target.size() || x.size() != recon_origin.size()) {
    throw RejectedInput("im1: length mismatch");
  }
  return (x - recon_target).squaredNorm() / ((x - recon_origin).squaredNorm() + eps);
}

inline double im2(const Vector& x, const Vector& recon_target, const Vector& recon_all,
                  double eps = kImEpsilon) {
  if (x.size() != recon_target.size() || x.size() != recon_all.size()) {
    throw RejectedInput("im2: length mismatch");
  }
  return (recon_target - recon_all).squaredNorm() / (x.lpNorm<1>() + eps);
}

// ---------------------------------------------------------------------------
// Aggregation.

inline constexpr std::array<std::string_view, 5> kMetricNames = {"sparsity", "cat_proximity",
                                                                  "cont_proximity", "im1", "im2"};
inline constexpr std::array<std::string_view, 2> kFrameworks = {"SS", "U"};

struct QueryMetrics {
  std::array<std::optional<double>, 5> values;  // order of kMetricNames

  std::optional<double>& operator[](std::size_t i) { return values[i]; }
  const std::optional<double>& operator[](std::size_t i) const { return values[i]; }
  bool operator==(const QueryMetrics&) const = default;
};

struct Summary {
  double mean = 0.0;
  double stdev = 0.0;             // sample (n - 1)
  double stdev_population = 0.0;  // n
  std::size_t count = 0;
  bool operator==(const Summary&) const = default;
};

using MetricsSummary = std::array<std::optional<Summary>, 5>;

inline std::optional<Summary> summarize(std::span<const double> v) {
  if (v.empty()) return std::nullopt;
  Summary s;
  s.count = v.size();
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.stdev_population = std::sqrt(ss / static_cast<double>(v.size()));
  s.stdev = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return s;
}

// Absent per-query values are skipped; a metric absent everywhere stays absent.
inline MetricsSummary aggregate(std::span<const QueryMetrics> records) {
  if (records.empty()) throw RejectedInput("aggregate needs at least one record");
  MetricsSummary out;
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    std::vector<double> vals;
    for (const QueryMetrics& q : records) {
      if (q[m]) vals.push_back(*q[m]);
    }
    out[m] = summarize(vals);
  }
  return out;
}

struct FrameworkResult {
  std::vector<QueryMetrics> queries;
  MetricsSummary summary;
  bool operator==(const FrameworkResult&) const = default;
};

struct DatasetRow {
  std::string dataset;
  std::map<std::string, FrameworkResult> frameworks;  // keyed by "SS" / "U"
  bool operator==(const DatasetRow&) const = default;
};

struct MetricsReport {
  double epsilon = kImEpsilon;
  std::vector<DatasetRow> rows;
  Json metadata = Json::object();
  bool operator==(const MetricsReport&) const = default;
};

// ---------------------------------------------------------------------------
// Serialization.

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw RejectedInput("not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline Json optional_to_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline std::optional<double> optional_from_json(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

inline Json to_json(const MetricsSummary& s) {
  Json j = Json::object();
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    const std::string name(kMetricNames[m]);
    if (!s[m]) {
      j[name] = nullptr;
      continue;
    }
    j[name] = {{"mean", s[m]->mean},
               {"stdev", s[m]->stdev},
               {"stdev_population", s[m]->stdev_population},
               {"count", s[m]->count}};
  }
  return j;
}

inline MetricsSummary metrics_summary_from_json(const Json& j) {
  MetricsSummary s;
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    const Json& e = j.at(std::string(kMetricNames[m]));
    if (e.is_null()) continue;
    s[m] = Summary{e.at("mean").get<double>(), e.at("stdev").get<double>(),
                   e.at("stdev_population").get<double>(), e.at("count").get<std::size_t>()};
  }
  return s;
}

inline Json to_json(const QueryMetrics& q) {
  Json j = Json::object();
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) j[std::string(kMetricNames[m])] = optional_to_json(q[m]);
  return j;
}

inline QueryMetrics query_metrics_from_json(const Json& j) {
  QueryMetrics q;
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    q[m] = optional_from_json(j.at(std::string(kMetricNames[m])));
  }
  return q;
}

inline Json to_json(const MetricsReport& r) {
  Json rows = Json::array();
  for (const DatasetRow& row : r.rows) {
    Json fw = Json::object();
    for (const auto& [name, res] : row.frameworks) {
      Json q = Json::array();
      for (const QueryMetrics& m : res.queries) q.push_back(to_json(m));
      fw[name] = {{"summary", to_json(res.summary)}, {"queries", q}};
    }
    rows.push_back({{"dataset", row.dataset}, {"frameworks", fw}});
  }
  return {{"format", "cfproto.metrics_report"},
          {"version", 1},
          {"epsilon", r.epsilon},
          {"metadata", r.metadata},
          {"rows", rows}};
}

inline MetricsReport metrics_report_from_json(const Json& j) {
  if (j.value("format", "") != "cfproto.metrics_report") throw RejectedInput("not a metrics report");
  MetricsReport r;
  r.epsilon = j.at("epsilon").get<double>();
  r.metadata = j.value("metadata", Json::object());
  for (const Json& row : j.at("rows")) {
    DatasetRow d;
    d.dataset = row.at("dataset").get<std::string>();
    for (const auto& [name, fw] : row.at("frameworks").items()) {
      FrameworkResult res;
      res.summary = metrics_summary_from_json(fw.at("summary"));
      for (const Json& q : fw.at("queries")) res.queries.push_back(query_metrics_from_json(q));
      d.frameworks[name] = std::move(res);
    }
    r.rows.push_back(std::move(d));
  }
  return r;
}

// Tab-separated comparison table:
//   dataset  stat  sparsity.SS  sparsity.U  cat_proximity.SS ...
//   german   mean  0.61         0.55        ...
//   german   stdev ...
inline std::string emit_table(const MetricsReport& r) {
  std::ostringstream out;
  out << "dataset\tstat";
  for (std::string_view m : kMetricNames) {
    for (std::string_view f : kFrameworks) out << '\t' << m << '.' << f;
  }
  out << '\n';
  for (const DatasetRow& row : r.rows) {
    for (int stat = 0; stat < 2; ++stat) {
      out << row.dataset << '\t' << (stat == 0 ? "mean" : "stdev");
      for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
        for (std::string_view f : kFrameworks) {
          out << '\t';
          const auto it = row.frameworks.find(std::string(f));
          if (it == row.frameworks.end() || !it->second.summary[m]) {
            out << "--";
            continue;
          }
          const Summary& s = *it->second.summary[m];
          out << format_double(stat == 0 ? s.mean : s.stdev);
        }
      }
      out << '\n';
    }
  }
  return out.str();
}

// Inverse of emit_table. Only mean and sample stdev survive the table form;
// count and population stdev come back as zero.
inline MetricsReport parse_table(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw RejectedInput("empty metrics table");
  const std::size_t ncols = 2 + kMetricNames.size() * kFrameworks.size();
  if (detail::split_line(line, '\t').size() != ncols) throw RejectedInput("metrics table header has wrong width");
  MetricsReport r;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = detail::split_line(line, '\t');
    if (cells.size() != ncols) throw RejectedInput("metrics table row has wrong width");
    const bool is_mean = cells[1] == "mean";
    if (!is_mean && cells[1] != "stdev") throw RejectedInput("unknown stat '" + cells[1] + "'");
    if (is_mean) r.rows.push_back(DatasetRow{cells[0], {}});
    if (r.rows.empty() || r.rows.back().dataset != cells[0]) {
      throw RejectedInput("stdev row without a mean row");
    }
    DatasetRow& row = r.rows.back();
    std::size_t col = 2;
    for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
      for (std::string_view f : kFrameworks) {
        const std::string& cell = cells[col++];
        FrameworkResult& res = row.frameworks[std::string(f)];
        if (cell == "--") continue;
        if (is_mean) {
          res.summary[m] = Summary{parse_double(cell), 0.0, 0.0, 0};
        } else if (res.summary[m]) {
          res.summary[m]->stdev = parse_double(cell);
        } else {
          throw RejectedInput("stdev present without mean");
        }
      }
    }
  }
  return r;
}

}  // namespace cfproto
