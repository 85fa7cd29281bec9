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

// Categorical entity embeddings.
//
// The dense encoded space consumed by every network is
//
//   [ scaled continuous features | embedding row of cat feature 0 | ... ]
//
// Decoding a categorical block is a nearest-row lookup in its table.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cfproto/dataio.hpp"
#include "cfproto/error.hpp"
#include "cfproto/ndkernel.hpp"
#include "cfproto/rng.hpp"

namespace cfproto {

inline std::size_t embedding_dim(std::size_t cardinality) {
  if (cardinality < 2) throw RejectedInput("embedding needs cardinality >= 2");
  return std::min<std::size_t>(8, (cardinality + 1) / 2);
}

struct EmbeddingTable {
  std::vector<std::string> levels;
  Matrix matrix;  // cardinality x dim

  std::size_t cardinality() const { return static_cast<std::size_t>(matrix.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(matrix.cols()); }
};

using EmbeddingTables = std::vector<EmbeddingTable>;

// One table per categorical feature, rows drawn from U(0, 1) so embedded
// coordinates share the range of scaled continuous features.
inline EmbeddingTables make_tables(const DatasetSchema& schema, std::uint64_t seed) {
  EmbeddingTables tables;
  Rng rng(seed);
  for (const FeatureSpec& f : schema.features) {
    if (!f.categorical()) continue;
    EmbeddingTable t;
    t.levels = f.levels;
    t.matrix.resize(static_cast<Eigen::Index>(f.cardinality()),
                    static_cast<Eigen::Index>(embedding_dim(f.cardinality())));
    for (Eigen::Index r = 0; r < t.matrix.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.matrix.cols(); ++c) t.matrix(r, c) = rng.uniform();
    }
    tables.push_back(std::move(t));
  }
  return tables;
}

inline std::size_t dense_dim(std::size_t num_continuous, const EmbeddingTables& tables) {
  std::size_t d = num_continuous;
  for (const EmbeddingTable& t : tables) d += t.dim();
  return d;
}

inline Vector embed_encode(const Vector& continuous, std::span<const int> levels,
                           const EmbeddingTables& tables) {
  if (levels.size() != tables.size()) {
    throw SchemaViolation("record has " + std::to_string(levels.size()) +
                          " categorical values, expected " + std::to_string(tables.size()));
  }
  Vector out(static_cast<Eigen::Index>(dense_dim(static_cast<std::size_t>(continuous.size()), tables)));
  out.head(continuous.size()) = continuous;
  Eigen::Index offset = continuous.size();
  for (std::size_t i = 0; i < tables.size(); ++i) {
    const EmbeddingTable& t = tables[i];
    if (levels[i] < 0 || static_cast<std::size_t>(levels[i]) >= t.cardinality()) {
      throw SchemaViolation("level index " + std::to_string(levels[i]) +
                            " outside vocabulary of size " + std::to_string(t.cardinality()));
    }
    const auto d = static_cast<Eigen::Index>(t.dim());
    out.segment(offset, d) = t.matrix.row(levels[i]).transpose();
    offset += d;
  }
  return out;
}

inline Matrix embed_encode(const TabularBatch& batch, const EmbeddingTables& tables) {
  const auto n = static_cast<Eigen::Index>(batch.rows());
  const std::size_t nc = static_cast<std::size_t>(batch.continuous.cols());
  Matrix out(n, static_cast<Eigen::Index>(dense_dim(nc, tables)));
  for (Eigen::Index r = 0; r < n; ++r) {
    out.row(r) = embed_encode(batch.continuous.row(r).transpose(),
                              batch.levels[static_cast<std::size_t>(r)], tables)
                     .transpose();
  }
  return out;
}

// Nearest table row by Euclidean distance; ties go to the lower level index.
inline int embed_decode(const Vector& segment, const EmbeddingTable& table) {
  if (static_cast<std::size_t>(segment.size()) != table.dim()) {
    throw RejectedInput("segment length does not match embedding dimension");
  }
  int best = 0;
  double best_d = (table.matrix.row(0).transpose() - segment).squaredNorm();
  for (Eigen::Index r = 1; r < table.matrix.rows(); ++r) {
    const double d = (table.matrix.row(r).transpose() - segment).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(r);
    }
  }
  return best;
}

// Splits a dense vector into its continuous block and decoded levels.
inline std::pair<Vector, std::vector<int>> embed_decode(const Vector& dense, std::size_t num_continuous,
                                                        const EmbeddingTables& tables) {
  if (static_cast<std::size_t>(dense.size()) != dense_dim(num_continuous, tables)) {
    throw RejectedInput("dense vector length does not match encoding layout");
  }
  const auto nc = static_cast<Eigen::Index>(num_continuous);
  std::vector<int> levels;
  levels.reserve(tables.size());
  Eigen::Index offset = nc;
  for (const EmbeddingTable& t : tables) {
    const auto d = static_cast<Eigen::Index>(t.dim());
    levels.push_back(embed_decode(Vector(dense.segment(offset, d)), t));
    offset += d;
  }
  return {Vector(dense.head(nc)), std::move(levels)};
}

// Scatters dL/d(dense input) of the categorical blocks into per-table row
// gradients.
inline std::vector<Matrix> table_gradients(const Matrix& dense_grad, const TabularBatch& batch,
                                           const EmbeddingTables& tables) {
  std::vector<Matrix> grads;
  grads.reserve(tables.size());
  for (const EmbeddingTable& t : tables) grads.push_back(Matrix::Zero(t.matrix.rows(), t.matrix.cols()));
  const Eigen::Index nc = batch.continuous.cols();
  for (Eigen::Index r = 0; r < dense_grad.rows(); ++r) {
    Eigen::Index offset = nc;
    for (std::size_t i = 0; i < tables.size(); ++i) {
      const auto d = static_cast<Eigen::Index>(tables[i].dim());
      grads[i].row(batch.levels[static_cast<std::size_t>(r)][i]) += dense_grad.row(r).segment(offset, d);
      offset += d;
    }
  }
  return grads;
}

inline std::vector<std::span<double>> parameter_blocks(EmbeddingTables& tables) {
  std::vector<std::span<double>> blocks;
  for (EmbeddingTable& t : tables) {
    blocks.emplace_back(t.matrix.data(), static_cast<std::size_t>(t.matrix.size()));
  }
  return blocks;
}

// Per-coordinate clamp bounds of the dense space: [0, 1] for continuous
// features, table row min/max for embedding coordinates.
struct DenseBounds {
  Vector lower;
  Vector upper;
};

inline DenseBounds dense_bounds(std::size_t num_continuous, const EmbeddingTables& tables,
                                double cont_lo = 0.0, double cont_hi = 1.0) {
  const auto n = static_cast<Eigen::Index>(dense_dim(num_continuous, tables));
  DenseBounds b{Vector(n), Vector(n)};
  const auto nc = static_cast<Eigen::Index>(num_continuous);
  b.lower.head(nc).setConstant(cont_lo);
  b.upper.head(nc).setConstant(cont_hi);
  Eigen::Index offset = nc;
  for (const EmbeddingTable& t : tables) {
    const auto d = static_cast<Eigen::Index>(t.dim());
    b.lower.segment(offset, d) = t.matrix.colwise().minCoeff().transpose();
    b.upper.segment(offset, d) = t.matrix.colwise().maxCoeff().transpose();
    offset += d;
  }
  return b;
}

// Record <-> dense mapping for one embedding set and one scaler.
struct RecordCodec {
  FeatureScaler scaler;
  EmbeddingTables tables;

  std::size_t dim() const { return dense_dim(scaler.num_continuous(), tables); }

  Vector encode(const Vector& record) const {
    return embed_encode(scaler.scale(record), scaler.levels(record), tables);
  }

  Matrix encode(const Dataset& ds, std::span<const std::size_t> rows) const {
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.row(static_cast<Eigen::Index>(i)) = encode(ds.record(rows[i])).transpose();
    }
    return out;
  }

  // Continuous block back to original units, categorical blocks to levels.
  Vector decode(const Vector& dense) const {
    auto [cont, levels] = embed_decode(dense, scaler.num_continuous(), tables);
    return scaler.unscale(cont, levels);
  }

  DenseBounds bounds(double cont_lo = 0.0, double cont_hi = 1.0) const {
    return dense_bounds(scaler.num_continuous(), tables, cont_lo, cont_hi);
  }
};

}  // namespace cfproto
