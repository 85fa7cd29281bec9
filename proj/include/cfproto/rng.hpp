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

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

namespace cfproto {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based sub-seed: one master seed fans out to independent streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(splitmix64(master) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

// Well-known stream ids for derive_seed.
namespace streams {
inline constexpr std::uint64_t kSplit = 1;
inline constexpr std::uint64_t kEncoderInit = 2;
inline constexpr std::uint64_t kDecoderInit = 3;
inline constexpr std::uint64_t kHeadInit = 4;
inline constexpr std::uint64_t kEmbeddingInit = 5;
inline constexpr std::uint64_t kShuffle = 6;
inline constexpr std::uint64_t kSampling = 7;
inline constexpr std::uint64_t kModelAEX = 10;
inline constexpr std::uint64_t kModelAED = 11;
inline constexpr std::uint64_t kModelClassifier = 12;
inline constexpr std::uint64_t kModelClassAE = 100;  // + class index
inline constexpr std::uint64_t kQuery = 10000;       // + query id
}  // namespace streams

// Deterministic generator. The distributions are implemented here rather
// than through <random> so that draws do not depend on the standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    // Rejecting the short first block keeps the draw unbiased.
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = -bound % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x < limit);
    return static_cast<std::size_t>(x % bound);
  }

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace cfproto
