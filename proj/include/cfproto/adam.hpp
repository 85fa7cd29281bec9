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
#include <span>
#include <vector>

#include "cfproto/error.hpp"

namespace cfproto {

struct AdamOptions {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step_count = 0;
  AdamOptions options;

  AdamState() = default;
  AdamState(std::size_t n, AdamOptions opts)
      : first_moment(n, 0.0), second_moment(n, 0.0), options(opts) {}
};

// One bias-corrected Adam update over a flat parameter vector.
// Throws OptimizationDiverged (leaving params and state untouched) when a
// gradient entry is not finite.
inline void adam_step(std::span<double> params, std::span<const double> grads,
                      AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw RejectedInput("adam_step: parameter, gradient and moment sizes differ");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw OptimizationDiverged("non-finite gradient entry");
  }
  const AdamOptions& o = state.options;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = o.beta1 * m + (1.0 - o.beta1) * grads[i];
    v = o.beta2 * v + (1.0 - o.beta2) * grads[i] * grads[i];
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    params[i] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
  }
}

}  // namespace cfproto
