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

#include "cfproto/adam.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "oracles.hpp"

namespace cfproto {
namespace {

TEST(AdamTest, FirstStepMovesByLearningRateAgainstGradientSign) {
  std::vector<double> p = {1.0, -2.0, 0.5};
  const std::vector<double> g = {0.3, -4.0, 1e-3};
  AdamState st(3, AdamOptions{});
  adam_step(p, g, st);
  // Bias correction makes m_hat = g and v_hat = g^2 on step one.
  EXPECT_NEAR(p[0], 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], -2.0 + 0.01 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p[2], 0.5 - 0.01 * 1e-3 / (1e-3 + 1e-8), 1e-15);
  EXPECT_EQ(st.step_count, 1u);
}

TEST(AdamTest, MatchesStraightLineRecurrence) {
  Rng rng(4);
  AdamOptions opt;
  opt.learning_rate = 0.05;
  const std::size_t n = 5;
  std::vector<double> p(n), ref(n), m(n, 0.0), v(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) p[i] = ref[i] = rng.uniform(-1.0, 1.0);
  AdamState st(n, opt);
  for (int t = 1; t <= 30; ++t) {
    std::vector<double> g(n);
    for (double& x : g) x = rng.uniform(-2.0, 2.0);
    adam_step(p, g, st);
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1.0 - std::pow(0.9, t));
      const double vh = v[i] / (1.0 - std::pow(0.999, t));
      ref[i] -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(p[i], ref[i], 1e-12);
}

TEST(AdamTest, ZeroGradientLeavesParametersInPlace) {
  std::vector<double> p = {0.25, -0.75};
  AdamState st(2, AdamOptions{});
  adam_step(p, std::vector<double>{0.0, 0.0}, st);
  EXPECT_EQ(p[0], 0.25);
  EXPECT_EQ(p[1], -0.75);
}

TEST(AdamTest, NonFiniteGradientIsRejectedWithoutSideEffects) {
  std::vector<double> p = {1.0, 2.0};
  AdamState st(2, AdamOptions{});
  adam_step(p, std::vector<double>{0.1, 0.1}, st);
  const std::vector<double> before = p;
  const AdamState saved = st;
  EXPECT_THROW(adam_step(p, std::vector<double>{0.1, std::numeric_limits<double>::quiet_NaN()}, st),
               OptimizationDiverged);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step_count, saved.step_count);
  EXPECT_EQ(st.first_moment, saved.first_moment);
  EXPECT_EQ(st.second_moment, saved.second_moment);
}

TEST(AdamTest, SizeMismatchIsRejected) {
  std::vector<double> p = {1.0, 2.0};
  AdamState st(2, AdamOptions{});
  EXPECT_THROW(adam_step(p, std::vector<double>{0.1}, st), RejectedInput);
}

TEST(AdamTest, MinimizesAQuadratic) {
  std::vector<double> p = {3.0, -2.0};
  AdamOptions opt;
  opt.learning_rate = 0.1;
  AdamState st(2, opt);
  for (int t = 0; t < 500; ++t) adam_step(p, std::vector<double>{2.0 * p[0], 8.0 * p[1]}, st);
  EXPECT_LT(std::abs(p[0]), 1e-2);
  EXPECT_LT(std::abs(p[1]), 1e-2);
}

}  // namespace
}  // namespace cfproto
