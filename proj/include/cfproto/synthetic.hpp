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

// Seeded synthetic classification tasks with continuous features.

#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "cfproto/dataio.hpp"
#include "cfproto/error.hpp"
#include "cfproto/ndkernel.hpp"
#include "cfproto/rng.hpp"

namespace cfproto {

inline DatasetSchema continuous_schema(const std::string& name, std::size_t dim, std::size_t num_classes) {
  DatasetSchema s;
  s.name = name;
  for (std::size_t i = 0; i < dim; ++i) {
    s.features.push_back({"x" + std::to_string(i), FeatureKind::kContinuous, {}});
  }
  s.target.name = "label";
  for (std::size_t c = 0; c < num_classes; ++c) s.target.classes.push_back("c" + std::to_string(c));
  return s;
}

// Isotropic Gaussian classes: row block c holds n_per_class draws around
// means[c] with per-coordinate standard deviation sd[i].
inline Dataset gaussian_classes(const std::string& name, const std::vector<Vector>& means, const Vector& sd,
                                std::size_t n_per_class, std::uint64_t seed) {
  if (means.size() < 2) throw RejectedInput("need at least two classes");
  const auto dim = means.front().size();
  for (const Vector& m : means) {
    if (m.size() != dim) throw RejectedInput("class means differ in dimension");
  }
  if (sd.size() != dim) throw RejectedInput("sd length does not match dimension");
  Dataset ds;
  ds.schema = continuous_schema(name, static_cast<std::size_t>(dim), means.size());
  ds.values.resize(static_cast<Eigen::Index>(means.size() * n_per_class), dim);
  Rng rng(seed);
  Eigen::Index r = 0;
  for (std::size_t c = 0; c < means.size(); ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i, ++r) {
      for (Eigen::Index d = 0; d < dim; ++d) ds.values(r, d) = rng.normal(means[c][d], sd[d]);
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

// Two classes in the plane, separated along the second coordinate.
inline Dataset two_gaussians(std::size_t n_per_class, std::uint64_t seed, double separation = 4.0,
                             double sd = 1.0) {
  Vector m0(2), m1(2);
  m0 << 0.0, 0.0;
  m1 << 0.0, separation;
  return gaussian_classes("two_gaussians", {m0, m1}, Vector::Constant(2, sd), n_per_class, seed);
}

// Class means differ only on the first `signal_dims` coordinates (corners of
// a scaled simplex); the remaining `noise_dims` coordinates carry
// class-independent noise with larger spread.
inline Dataset planted_blobs(std::size_t n_per_class, std::size_t num_classes, std::size_t signal_dims,
                             std::size_t noise_dims, std::uint64_t seed, double separation = 3.0,
                             double signal_sd = 1.0, double noise_sd = 3.0) {
  if (signal_dims == 0) throw RejectedInput("planted_blobs needs signal dimensions");
  const auto dim = static_cast<Eigen::Index>(signal_dims + noise_dims);
  std::vector<Vector> means;
  for (std::size_t c = 0; c < num_classes; ++c) {
    Vector m = Vector::Zero(dim);
    if (c > 0) m[static_cast<Eigen::Index>((c - 1) % signal_dims)] = separation;
    if (c > signal_dims) m[static_cast<Eigen::Index>(c % signal_dims)] += separation;
    means.push_back(m);
  }
  Vector sd(dim);
  sd.head(static_cast<Eigen::Index>(signal_dims)).setConstant(signal_sd);
  sd.tail(static_cast<Eigen::Index>(noise_dims)).setConstant(noise_sd);
  return gaussian_classes("planted_blobs", means, sd, n_per_class, seed);
}

// Writes the dataset as CSV plus its schema document.
inline void write_dataset(const Dataset& ds, const std::string& csv_path, const std::string& schema_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw Error("cannot write " + csv_path);
  for (const FeatureSpec& f : ds.schema.features) csv << f.name << ',';
  csv << ds.schema.target.name << '\n';
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (std::size_t f = 0; f < ds.schema.features.size(); ++f) {
      const double v = ds.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f));
      const FeatureSpec& spec = ds.schema.features[f];
      if (spec.categorical()) csv << spec.levels[static_cast<std::size_t>(v)];
      else csv << Json(v).dump();
      csv << ',';
    }
    csv << ds.schema.target.classes[static_cast<std::size_t>(ds.labels[r])] << '\n';
  }
  std::ofstream sch(schema_path);
  if (!sch) throw Error("cannot write " + schema_path);
  sch << to_json(ds.schema).dump(2) << '\n';
}

}  // namespace cfproto
