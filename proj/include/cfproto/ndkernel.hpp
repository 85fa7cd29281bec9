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

// Dense feed-forward networks in double precision.
//
// A network is an ordered list of layers. Each layer computes
//
//   pre    = input * W^T + b
//   act    = activation(pre)            (linear, relu or softmax)
//   output = batchnorm(act)             (optional)
//
// Batches are row-major in the sense that each row of the batch matrix is a
// sample. forward() is pure: it returns a Trace holding every intermediate
// needed by backward() and never mutates the network. Running batch-norm
// statistics are folded in separately by update_running_stats().

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfproto/error.hpp"
#include "cfproto/rng.hpp"

namespace cfproto {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { kLinear, kRelu, kSoftmax };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kSoftmax: return "softmax";
  }
  return "linear";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "linear") return Activation::kLinear;
  if (s == "relu") return Activation::kRelu;
  if (s == "softmax") return Activation::kSoftmax;
  throw RejectedInput("unknown activation '" + std::string(s) + "'");
}

enum class Mode { kTraining, kInference };

struct BatchNorm {
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
  double momentum = 0.99;
  double epsilon = 1e-5;
  // Number of running-statistic updates folded in so far. The first update
  // adopts the batch statistics outright, so the running values are always a
  // convex combination of observed batch statistics.
  std::uint64_t updates = 0;
};

struct Layer {
  Matrix weights;  // out x in
  Vector bias;     // out
  Activation activation = Activation::kLinear;
  std::optional<BatchNorm> batchnorm;

  std::size_t in_dim() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weights.rows()); }
};

struct DenseNetwork {
  std::vector<Layer> layers;
  std::uint64_t seed = 0;  // seed used for initialization

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
  bool empty() const { return layers.empty(); }
};

// Layer recipe used to build networks.
struct LayerPlan {
  std::size_t width = 0;
  Activation activation = Activation::kRelu;
  bool batchnorm = false;
};

struct BatchNormOptions {
  double momentum = 0.99;
  double epsilon = 1e-5;
};

// Throws RejectedInput when the network breaks a structural invariant.
inline void validate(const DenseNetwork& net) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& l = net.layers[i];
    const std::string where = "layer " + std::to_string(i);
    if (l.weights.rows() == 0 || l.weights.cols() == 0) {
      throw RejectedInput(where + ": empty weight matrix");
    }
    if (static_cast<std::size_t>(l.bias.size()) != l.out_dim()) {
      throw RejectedInput(where + ": bias length does not match output width");
    }
    if (i + 1 < net.layers.size() && net.layers[i + 1].in_dim() != l.out_dim()) {
      throw RejectedInput(where + ": output width does not chain into next layer");
    }
    if (l.activation == Activation::kSoftmax &&
        (i + 1 != net.layers.size() || l.batchnorm)) {
      throw RejectedInput(where + ": softmax must be the terminal activation");
    }
    if (l.batchnorm) {
      const BatchNorm& bn = *l.batchnorm;
      const auto n = static_cast<Eigen::Index>(l.out_dim());
      if (bn.gamma.size() != n || bn.beta.size() != n || bn.running_mean.size() != n ||
          bn.running_var.size() != n) {
        throw RejectedInput(where + ": batchnorm vectors do not match layer width");
      }
      if ((bn.running_var.array() < 0.0).any()) {
        throw RejectedInput(where + ": negative running variance");
      }
    }
  }
}

// He-uniform weights, zero bias, identity batch norm.
inline DenseNetwork make_network(std::size_t input_dim, std::span<const LayerPlan> plan,
                                 std::uint64_t seed, BatchNormOptions bn_options = {}) {
  if (input_dim == 0) throw RejectedInput("network input dimension must be positive");
  DenseNetwork net;
  net.seed = seed;
  Rng rng(seed);
  std::size_t in = input_dim;
  for (const LayerPlan& p : plan) {
    if (p.width == 0) throw RejectedInput("layer width must be positive");
    Layer layer;
    const double limit = std::sqrt(6.0 / static_cast<double>(in));
    layer.weights.resize(static_cast<Eigen::Index>(p.width), static_cast<Eigen::Index>(in));
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
        layer.weights(r, c) = rng.uniform(-limit, limit);
      }
    }
    layer.bias = Vector::Zero(static_cast<Eigen::Index>(p.width));
    layer.activation = p.activation;
    if (p.batchnorm) {
      const auto n = static_cast<Eigen::Index>(p.width);
      layer.batchnorm = BatchNorm{Vector::Ones(n), Vector::Zero(n), Vector::Zero(n),
                                  Vector::Ones(n), bn_options.momentum, bn_options.epsilon, 0};
    }
    net.layers.push_back(std::move(layer));
    in = p.width;
  }
  validate(net);
  return net;
}

struct LayerTrace {
  Matrix input;
  Matrix pre;
  Matrix act;
  Matrix output;
  // Batch-norm intermediates (empty when the layer has none).
  Matrix normalized;
  Vector mean;     // batch mean (training) or running mean (inference)
  Vector var;      // batch variance (training) or running variance (inference)
};

struct Trace {
  Mode mode = Mode::kInference;
  std::vector<LayerTrace> layers;

  const Matrix& output() const { return layers.back().output; }
};

namespace detail {

inline Matrix softmax_rows(const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      out(r, c) = std::exp(z(r, c) - m);
      sum += out(r, c);
    }
    out.row(r) /= sum;
  }
  return out;
}

inline Matrix apply_activation(Activation a, const Matrix& pre) {
  switch (a) {
    case Activation::kLinear: return pre;
    case Activation::kRelu: return pre.cwiseMax(0.0);
    case Activation::kSoftmax: return softmax_rows(pre);
  }
  return pre;
}

}  // namespace detail

inline Trace forward(const DenseNetwork& net, const Matrix& batch, Mode mode) {
  if (net.empty()) throw RejectedInput("forward on an empty network");
  if (static_cast<std::size_t>(batch.cols()) != net.input_dim()) {
    throw RejectedInput("batch has " + std::to_string(batch.cols()) +
                        " columns, network expects " + std::to_string(net.input_dim()));
  }
  if (batch.rows() == 0) throw RejectedInput("empty batch");
  Trace trace;
  trace.mode = mode;
  trace.layers.reserve(net.layers.size());
  const Matrix* x = &batch;
  for (const Layer& layer : net.layers) {
    LayerTrace lt;
    lt.input = *x;
    lt.pre = (lt.input * layer.weights.transpose()).rowwise() + layer.bias.transpose();
    lt.act = detail::apply_activation(layer.activation, lt.pre);
    if (layer.batchnorm) {
      const BatchNorm& bn = *layer.batchnorm;
      if (mode == Mode::kTraining) {
        const double n = static_cast<double>(lt.act.rows());
        lt.mean = lt.act.colwise().mean().transpose();
        const Matrix centered = lt.act.rowwise() - lt.mean.transpose();
        lt.var = (centered.array().square().colwise().sum() / n).matrix().transpose();
      } else {
        lt.mean = bn.running_mean;
        lt.var = bn.running_var;
      }
      const Vector inv_std = (lt.var.array() + bn.epsilon).rsqrt().matrix();
      lt.normalized = ((lt.act.rowwise() - lt.mean.transpose()).array().rowwise() *
                       inv_std.transpose().array())
                          .matrix();
      lt.output = (lt.normalized.array().rowwise() * bn.gamma.transpose().array()).matrix()
                      .rowwise() + bn.beta.transpose();
    } else {
      lt.output = lt.act;
    }
    trace.layers.push_back(std::move(lt));
    x = &trace.layers.back().output;
  }
  return trace;
}

// Convenience: inference-mode output only.
inline Matrix predict(const DenseNetwork& net, const Matrix& batch) {
  return forward(net, batch, Mode::kInference).output();
}

inline Vector predict_row(const DenseNetwork& net, const Vector& x) {
  Matrix batch = x.transpose();
  return predict(net, batch).row(0).transpose();
}

struct LayerGradients {
  Matrix weights;
  Vector bias;
  Vector gamma;  // empty without batchnorm
  Vector beta;
};

struct Gradients {
  std::vector<LayerGradients> layers;
  Matrix input;
};

// Back-propagates dL/d(output) through the traced forward pass.
inline Gradients backward(const DenseNetwork& net, const Trace& trace,
                          const Matrix& output_grad) {
  if (trace.layers.size() != net.layers.size()) {
    throw RejectedInput("trace does not belong to this network (layer count)");
  }
  if (net.empty()) throw RejectedInput("backward on an empty network");
  const Matrix& out = trace.output();
  if (output_grad.rows() != out.rows() || output_grad.cols() != out.cols()) {
    throw RejectedInput("output gradient shape does not match traced output");
  }
  Gradients grads;
  grads.layers.resize(net.layers.size());
  Matrix g = output_grad;
  for (std::size_t idx = net.layers.size(); idx-- > 0;) {
    const Layer& layer = net.layers[idx];
    const LayerTrace& lt = trace.layers[idx];
    if (static_cast<std::size_t>(lt.input.cols()) != layer.in_dim() ||
        static_cast<std::size_t>(lt.pre.cols()) != layer.out_dim()) {
      throw RejectedInput("trace does not belong to this network (layer " +
                          std::to_string(idx) + " shape)");
    }
    LayerGradients& lg = grads.layers[idx];
    // Batch norm.
    if (layer.batchnorm) {
      const BatchNorm& bn = *layer.batchnorm;
      lg.gamma = (g.array() * lt.normalized.array()).colwise().sum().matrix().transpose();
      lg.beta = g.colwise().sum().transpose();
      const Vector inv_std = (lt.var.array() + bn.epsilon).rsqrt().matrix();
      const Matrix dnorm = (g.array().rowwise() * bn.gamma.transpose().array()).matrix();
      if (trace.mode == Mode::kTraining) {
        const double n = static_cast<double>(g.rows());
        const Eigen::RowVectorXd sum_d = dnorm.colwise().sum();
        const Eigen::RowVectorXd sum_dx = (dnorm.array() * lt.normalized.array()).colwise().sum();
        Matrix dx = (n * dnorm.array()).matrix();
        dx.rowwise() -= sum_d;
        dx -= (lt.normalized.array().rowwise() * sum_dx.array()).matrix();
        g = (dx.array().rowwise() * (inv_std.transpose().array() / n)).matrix();
      } else {
        g = (dnorm.array().rowwise() * inv_std.transpose().array()).matrix();
      }
    }
    // Activation.
    Matrix dpre;
    switch (layer.activation) {
      case Activation::kLinear:
        dpre = g;
        break;
      case Activation::kRelu:
        dpre = (lt.pre.array() > 0.0).select(g.array(), 0.0).matrix();
        break;
      case Activation::kSoftmax: {
        const Matrix& s = lt.act;
        const Eigen::VectorXd dot = (g.array() * s.array()).rowwise().sum().matrix();
        dpre = (s.array() * (g.colwise() - dot).array()).matrix();
        break;
      }
    }
    lg.weights = dpre.transpose() * lt.input;
    lg.bias = dpre.colwise().sum().transpose();
    g = dpre * layer.weights;
  }
  grads.input = std::move(g);
  return grads;
}

// Folds the batch statistics of a training-mode trace into the running
// estimates. Keras convention: running = momentum * running + (1 - momentum) * batch.
inline void update_running_stats(DenseNetwork& net, const Trace& trace) {
  if (trace.mode != Mode::kTraining) return;
  if (trace.layers.size() != net.layers.size()) {
    throw RejectedInput("trace does not belong to this network");
  }
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (!net.layers[i].batchnorm) continue;
    BatchNorm& bn = *net.layers[i].batchnorm;
    const LayerTrace& lt = trace.layers[i];
    if (bn.updates == 0) {
      bn.running_mean = lt.mean;
      bn.running_var = lt.var;
    } else {
      bn.running_mean = bn.momentum * bn.running_mean + (1.0 - bn.momentum) * lt.mean;
      bn.running_var = bn.momentum * bn.running_var + (1.0 - bn.momentum) * lt.var;
    }
    ++bn.updates;
  }
}

// ---------------------------------------------------------------------------
// Flat parameter views. Order: per layer weights (storage order), bias,
// gamma, beta. Gradient blocks mirror parameter blocks exactly.

inline std::vector<std::span<double>> parameter_blocks(DenseNetwork& net) {
  std::vector<std::span<double>> blocks;
  for (Layer& l : net.layers) {
    blocks.emplace_back(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
    blocks.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    if (l.batchnorm) {
      blocks.emplace_back(l.batchnorm->gamma.data(),
                          static_cast<std::size_t>(l.batchnorm->gamma.size()));
      blocks.emplace_back(l.batchnorm->beta.data(),
                          static_cast<std::size_t>(l.batchnorm->beta.size()));
    }
  }
  return blocks;
}

inline std::vector<std::span<double>> gradient_blocks(const DenseNetwork& net, Gradients& g) {
  if (g.layers.size() != net.layers.size()) {
    throw RejectedInput("gradients do not belong to this network");
  }
  std::vector<std::span<double>> blocks;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    LayerGradients& lg = g.layers[i];
    blocks.emplace_back(lg.weights.data(), static_cast<std::size_t>(lg.weights.size()));
    blocks.emplace_back(lg.bias.data(), static_cast<std::size_t>(lg.bias.size()));
    if (net.layers[i].batchnorm) {
      blocks.emplace_back(lg.gamma.data(), static_cast<std::size_t>(lg.gamma.size()));
      blocks.emplace_back(lg.beta.data(), static_cast<std::size_t>(lg.beta.size()));
    }
  }
  return blocks;
}

inline std::size_t parameter_count(const DenseNetwork& net) {
  std::size_t n = 0;
  for (const Layer& l : net.layers) {
    n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
    if (l.batchnorm) n += static_cast<std::size_t>(2 * l.batchnorm->gamma.size());
  }
  return n;
}

inline void append_blocks(std::vector<double>& out, const std::vector<std::span<double>>& blocks) {
  for (const auto& b : blocks) out.insert(out.end(), b.begin(), b.end());
}

// Copies `flat` into the blocks; returns the number of values consumed.
inline std::size_t scatter_blocks(std::span<const double> flat,
                                  const std::vector<std::span<double>>& blocks) {
  std::size_t offset = 0;
  for (const auto& b : blocks) {
    if (offset + b.size() > flat.size()) throw RejectedInput("flat parameter vector too short");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset),
              flat.begin() + static_cast<std::ptrdiff_t>(offset + b.size()), b.begin());
    offset += b.size();
  }
  return offset;
}

}  // namespace cfproto
