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

// Latent class prototypes.
//
// The prototype of class t for a query is the mean of the K class-t training
// encodings nearest to the query encoding. Without a fixed target, the class
// whose prototype lies closest to the query encoding (excluding the query's
// own class) is chosen.

#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cfproto/error.hpp"
#include "cfproto/ndkernel.hpp"

namespace cfproto {

inline constexpr std::size_t kDefaultPrototypeK = 20;

struct Prototype {
  int class_index = -1;
  Vector centroid;
  std::size_t k_used = 0;
  std::vector<std::size_t> member_indices;  // source row ids
};

// Encodings of the training rows of one class.
struct ClassLatents {
  int class_index = -1;
  Matrix latents;                    // rows x latent_dim
  std::vector<std::size_t> row_ids;  // one per latent row
};

// `class_mean` ignores the neighbourhood and averages the whole class.
inline Prototype target_prototype(const ClassLatents& cls, const Vector& query_latent, std::size_t k,
                                  bool class_mean = false) {
  if (k == 0) throw RejectedInput("prototype neighbour count K must be >= 1");
  const auto n = static_cast<std::size_t>(cls.latents.rows());
  if (n == 0) {
    throw NoPrototype("class " + std::to_string(cls.class_index) + " has no encoded rows");
  }
  if (cls.row_ids.size() != n) throw RejectedInput("row id count does not match latent rows");
  if (cls.latents.cols() != query_latent.size()) {
    throw RejectedInput("query latent dimension does not match class latents");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t take = n;
  if (!class_mean) {
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = (cls.latents.row(static_cast<Eigen::Index>(i)).transpose() - query_latent).squaredNorm();
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (dist[a] != dist[b]) return dist[a] < dist[b];
      return cls.row_ids[a] < cls.row_ids[b];
    });
    take = std::min(k, n);
  }
  Prototype p;
  p.class_index = cls.class_index;
  p.k_used = take;
  p.centroid = Vector::Zero(cls.latents.cols());
  for (std::size_t i = 0; i < take; ++i) {
    p.centroid += cls.latents.row(static_cast<Eigen::Index>(order[i])).transpose();
    p.member_indices.push_back(cls.row_ids[order[i]]);
  }
  p.centroid /= static_cast<double>(take);
  return p;
}

// Index into `candidates` of the prototype nearest to the query, skipping
// class `origin_class`. Ties go to the lower class index.
inline std::size_t nearest_prototype(std::span<const Prototype> candidates, const Vector& query_latent,
                                     int origin_class) {
  std::size_t best = candidates.size();
  double best_d = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Prototype& p = candidates[i];
    if (p.class_index == origin_class) continue;
    const double d = (p.centroid - query_latent).norm();
    if (best == candidates.size() || d < best_d ||
        (d == best_d && p.class_index < candidates[best].class_index)) {
      best = i;
      best_d = d;
    }
  }
  if (best == candidates.size()) throw NoPrototype("no prototype of a class other than the origin");
  return best;
}

}  // namespace cfproto
