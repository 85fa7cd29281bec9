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

// Model families built from three dense sub-networks:
//
//   encoder  (input -> latent)         "I2E"
//   decoder  (latent -> input)         "E2D"
//   head     (latent -> class probs)   "E2C"
//
// An unsupervised stack trains encoder+decoder on reconstruction only. A
// semi-supervised stack trains all three on
//
//   E_joint = w1 * E_entropy + w2 * E_autoenc
//
// with the classifier-path and decoder-path gradients summed at the latent
// layer before flowing into the encoder. The standalone classifier is an
// encoder-shaped body plus a head trained on cross-entropy only.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cfproto/adam.hpp"
#include "cfproto/catembed.hpp"
#include "cfproto/dataio.hpp"
#include "cfproto/error.hpp"
#include "cfproto/ndkernel.hpp"
#include "cfproto/rng.hpp"

namespace cfproto {

// ---------------------------------------------------------------------------
// Losses.

inline constexpr double kProbabilityFloor = 1e-12;

// Mean over rows of -log p(true class); probabilities are floored at 1e-12.
inline double cross_entropy(const Matrix& probs, std::span<const int> labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw RejectedInput("cross_entropy: row count does not match label count");
  }
  double sum = 0.0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= probs.cols()) throw RejectedInput("cross_entropy: label out of range");
    sum -= std::log(std::max(probs(r, y), kProbabilityFloor));
  }
  return sum / static_cast<double>(probs.rows());
}

inline Matrix cross_entropy_grad(const Matrix& probs, std::span<const int> labels) {
  Matrix g = Matrix::Zero(probs.rows(), probs.cols());
  const double n = static_cast<double>(probs.rows());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    const double p = probs(r, y);
    if (p > kProbabilityFloor) g(r, y) = -1.0 / (n * p);
  }
  return g;
}

// sqrt of the mean (over rows and coordinates) squared error.
inline double reconstruction_loss(const Matrix& x, const Matrix& x_recon) {
  if (x.rows() != x_recon.rows() || x.cols() != x_recon.cols()) {
    throw RejectedInput("reconstruction_loss: shapes differ");
  }
  if (x.size() == 0) return 0.0;
  return std::sqrt((x - x_recon).squaredNorm() / static_cast<double>(x.size()));
}

// d/d(x_recon) of reconstruction_loss; zero at a perfect reconstruction.
inline Matrix reconstruction_loss_grad(const Matrix& x, const Matrix& x_recon) {
  const double loss = reconstruction_loss(x, x_recon);
  if (loss == 0.0) return Matrix::Zero(x.rows(), x.cols());
  return (x_recon - x) / (static_cast<double>(x.size()) * loss);
}

// Lowest index wins ties.
inline int argmax(std::span<const double> p) {
  if (p.empty()) throw RejectedInput("argmax of an empty vector");
  int best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

inline int argmax(const Vector& p) { return argmax(std::span<const double>(p.data(), static_cast<std::size_t>(p.size()))); }

// ---------------------------------------------------------------------------
// Configuration and model containers.

struct Architecture {
  std::vector<std::size_t> encoder;     // hidden widths..., latent width
  std::vector<std::size_t> classifier;  // hidden widths..., output (forced to class count)
  std::vector<std::size_t> decoder;     // hidden widths..., output (forced to input width)
  bool batchnorm = true;
  Activation latent_activation = Activation::kRelu;
  Activation output_activation = Activation::kRelu;
  BatchNormOptions bn;

  std::size_t latent_dim() const { return encoder.empty() ? 0 : encoder.back(); }
};

enum class TrainingMode { kUnsupervised, kSemiSupervised };

inline std::string_view to_string(TrainingMode m) {
  return m == TrainingMode::kUnsupervised ? "unsupervised" : "semi_supervised";
}

struct TrainConfig {
  double w1 = 1.0;  // cross-entropy weight
  double w2 = 1.0;  // reconstruction weight
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::size_t full_batch_below = 0;  // N below this trains full-batch (0: always minibatch)
  std::uint64_t seed = 0;
  AdamOptions adam;
};

struct EpochLosses {
  double entropy = 0.0;
  double reconstruction = 0.0;
  double joint = 0.0;
};

struct TrainReport {
  EpochLosses initial;              // before the first update
  std::vector<EpochLosses> epochs;  // evaluated on the full training set after each epoch
  std::optional<double> test_accuracy;
  std::optional<double> test_reconstruction;
};

struct ModelStack {
  DenseNetwork encoder;
  DenseNetwork decoder;
  std::optional<DenseNetwork> head;
  TrainingMode mode = TrainingMode::kUnsupervised;
  std::size_t latent_dim = 0;
  std::size_t num_continuous = 0;
  EmbeddingTables tables;
  TrainConfig config;
  TrainReport report;
  std::string schema_fingerprint;

  std::size_t input_dim() const { return encoder.input_dim(); }
};

// Standalone black-box classifier over the dense space of `tables`.
struct Classifier {
  DenseNetwork body;
  DenseNetwork head;
  std::size_t num_continuous = 0;
  EmbeddingTables tables;
  TrainConfig config;
  TrainReport report;
  std::string schema_fingerprint;
};

// Training rows plus labels (labels may be empty for unsupervised use).
struct LabeledBatch {
  TabularBatch features;
  std::vector<int> labels;
};

// ---------------------------------------------------------------------------
// Network construction.

namespace detail {

inline std::vector<LayerPlan> hidden_then_output(const std::vector<std::size_t>& widths,
                                                 std::size_t output_width, Activation output_act,
                                                 bool batchnorm) {
  std::vector<LayerPlan> plan;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    plan.push_back({widths[i], Activation::kRelu, batchnorm});
  }
  plan.push_back({output_width, output_act, false});
  return plan;
}

}  // namespace detail

inline DenseNetwork make_encoder(std::size_t input_dim, const Architecture& arch, std::uint64_t seed) {
  if (arch.encoder.empty()) throw RejectedInput("encoder needs at least one layer");
  if (arch.latent_dim() >= input_dim) {
    throw RejectedInput("latent dimension " + std::to_string(arch.latent_dim()) +
                        " must be smaller than input dimension " + std::to_string(input_dim));
  }
  const auto plan = detail::hidden_then_output(arch.encoder, arch.latent_dim(),
                                               arch.latent_activation, arch.batchnorm);
  return make_network(input_dim, plan, seed, arch.bn);
}

inline DenseNetwork make_decoder(std::size_t output_dim, const Architecture& arch, std::uint64_t seed) {
  std::vector<std::size_t> widths = arch.decoder;
  if (widths.empty()) widths.push_back(output_dim);
  const auto plan = detail::hidden_then_output(widths, output_dim, arch.output_activation,
                                               arch.batchnorm);
  return make_network(arch.latent_dim(), plan, seed, arch.bn);
}

inline DenseNetwork make_head(std::size_t num_classes, const Architecture& arch, std::uint64_t seed) {
  std::vector<std::size_t> widths = arch.classifier;
  if (widths.empty()) widths.push_back(num_classes);
  const auto plan = detail::hidden_then_output(widths, num_classes, Activation::kSoftmax,
                                               arch.batchnorm);
  return make_network(arch.latent_dim(), plan, seed, arch.bn);
}

// ---------------------------------------------------------------------------
// One forward/backward pass of the joint objective.

struct JointPass {
  EpochLosses loss;
  Trace encoder_trace;
  std::optional<Trace> decoder_trace;
  std::optional<Trace> head_trace;
  Gradients encoder_grads;
  std::optional<Gradients> decoder_grads;
  std::optional<Gradients> head_grads;
  std::vector<Matrix> table_grads;
};

// `decoder` / `head` may be null. A path contributes gradient only when its
// weight is positive; its loss is still reported whenever the network exists.
// The reconstruction target is the dense input treated as a constant, so the
// embedding tables receive gradient through the encoder input only.
inline JointPass joint_pass(const DenseNetwork& encoder, const DenseNetwork* decoder,
                            const DenseNetwork* head, const EmbeddingTables& tables,
                            const LabeledBatch& data, double w1, double w2, Mode mode,
                            bool want_gradients = true) {
  JointPass pass;
  const Matrix x = embed_encode(data.features, tables);
  pass.encoder_trace = forward(encoder, x, mode);
  const Matrix& z = pass.encoder_trace.output();
  Matrix dz = Matrix::Zero(z.rows(), z.cols());
  if (decoder != nullptr) {
    pass.decoder_trace = forward(*decoder, z, mode);
    const Matrix& r = pass.decoder_trace->output();
    pass.loss.reconstruction = reconstruction_loss(x, r);
    if (want_gradients && w2 > 0.0) {
      pass.decoder_grads = backward(*decoder, *pass.decoder_trace, w2 * reconstruction_loss_grad(x, r));
      dz += pass.decoder_grads->input;
    }
  }
  if (head != nullptr) {
    pass.head_trace = forward(*head, z, mode);
    const Matrix& p = pass.head_trace->output();
    pass.loss.entropy = cross_entropy(p, data.labels);
    if (want_gradients && w1 > 0.0) {
      pass.head_grads = backward(*head, *pass.head_trace, w1 * cross_entropy_grad(p, data.labels));
      dz += pass.head_grads->input;
    }
  }
  pass.loss.joint = (head != nullptr ? w1 * pass.loss.entropy : 0.0) +
                    (decoder != nullptr ? w2 * pass.loss.reconstruction : 0.0);
  if (want_gradients) {
    pass.encoder_grads = backward(encoder, pass.encoder_trace, dz);
    pass.table_grads = table_gradients(pass.encoder_grads.input, data.features, tables);
  }
  return pass;
}

// The trainable parameter set of one training run, in a fixed block order:
// encoder, decoder, head, tables.
struct TrainableSet {
  DenseNetwork* encoder = nullptr;
  DenseNetwork* decoder = nullptr;
  DenseNetwork* head = nullptr;
  EmbeddingTables* tables = nullptr;  // null when frozen

  std::vector<std::span<double>> blocks() const {
    std::vector<std::span<double>> out = parameter_blocks(*encoder);
    if (decoder) {
      auto b = parameter_blocks(*decoder);
      out.insert(out.end(), b.begin(), b.end());
    }
    if (head) {
      auto b = parameter_blocks(*head);
      out.insert(out.end(), b.begin(), b.end());
    }
    if (tables) {
      auto b = parameter_blocks(*tables);
      out.insert(out.end(), b.begin(), b.end());
    }
    return out;
  }

  // Flat gradient aligned with blocks(); absent paths contribute zeros.
  std::vector<double> gradient(JointPass& pass) const {
    std::vector<double> g;
    append_blocks(g, gradient_blocks(*encoder, pass.encoder_grads));
    auto zeros_like = [&](DenseNetwork& net) { g.resize(g.size() + parameter_count(net), 0.0); };
    if (decoder) {
      if (pass.decoder_grads) append_blocks(g, gradient_blocks(*decoder, *pass.decoder_grads));
      else zeros_like(*decoder);
    }
    if (head) {
      if (pass.head_grads) append_blocks(g, gradient_blocks(*head, *pass.head_grads));
      else zeros_like(*head);
    }
    if (tables) {
      for (Matrix& m : pass.table_grads) g.insert(g.end(), m.data(), m.data() + m.size());
    }
    return g;
  }
};

namespace detail {

inline std::vector<std::vector<std::size_t>> minibatches(std::size_t n, const TrainConfig& cfg,
                                                         Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const std::size_t bs = (n < cfg.full_batch_below || cfg.batch_size == 0) ? n : cfg.batch_size;
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t end = std::min(n, start + bs);
    // A single leftover row cannot carry batch statistics; fold it back.
    if (end - start < 2 && !out.empty()) {
      out.back().insert(out.back().end(), order.begin() + static_cast<std::ptrdiff_t>(start),
                        order.begin() + static_cast<std::ptrdiff_t>(end));
      break;
    }
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

inline LabeledBatch select(const LabeledBatch& data, std::span<const std::size_t> rows) {
  LabeledBatch out;
  out.features = select_rows(data.features, rows);
  if (!data.labels.empty()) {
    out.labels.reserve(rows.size());
    for (std::size_t r : rows) out.labels.push_back(data.labels[r]);
  }
  return out;
}

inline void check_finite(const EpochLosses& l, long epoch) {
  if (!std::isfinite(l.joint) || !std::isfinite(l.entropy) || !std::isfinite(l.reconstruction)) {
    throw OptimizationDiverged("training loss is not finite", epoch);
  }
}

// Shared training loop. `tables` is trained when `train_tables` is set.
inline TrainReport run_training(DenseNetwork& encoder, DenseNetwork* decoder, DenseNetwork* head,
                                EmbeddingTables& tables, bool train_tables,
                                const LabeledBatch& data, const TrainConfig& cfg) {
  if (data.features.rows() == 0) throw EmptyDataset("no training rows");
  const double w1 = head ? cfg.w1 : 0.0;
  const double w2 = decoder ? cfg.w2 : 0.0;
  if (w1 < 0.0 || w2 < 0.0) throw InvalidConfig("loss weights must be non-negative");
  if (w1 == 0.0 && w2 == 0.0) throw InvalidConfig("loss weights w1 and w2 are both zero");
  if (head && data.labels.size() != data.features.rows()) {
    throw RejectedInput("classifier training needs one label per row");
  }
  TrainableSet set{&encoder, decoder, head, train_tables ? &tables : nullptr};
  std::vector<double> params;
  append_blocks(params, set.blocks());
  AdamState adam(params.size(), cfg.adam);
  Rng rng(derive_seed(cfg.seed, streams::kShuffle));

  auto evaluate = [&](long epoch) {
    JointPass p = joint_pass(encoder, decoder, head, tables, data, w1, w2, Mode::kInference, false);
    p.loss.joint = (head ? cfg.w1 * p.loss.entropy : 0.0) + (decoder ? cfg.w2 * p.loss.reconstruction : 0.0);
    check_finite(p.loss, epoch);
    return p.loss;
  };

  TrainReport report;
  report.initial = evaluate(-1);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& rows : minibatches(data.features.rows(), cfg, rng)) {
      const LabeledBatch mb = select(data, rows);
      JointPass pass = joint_pass(encoder, decoder, head, tables, mb, w1, w2, Mode::kTraining);
      check_finite(pass.loss, static_cast<long>(epoch));
      const std::vector<double> grad = set.gradient(pass);
      try {
        adam_step(params, grad, adam);
      } catch (const OptimizationDiverged&) {
        throw OptimizationDiverged("non-finite gradient", static_cast<long>(epoch));
      }
      scatter_blocks(params, set.blocks());
      update_running_stats(encoder, pass.encoder_trace);
      if (decoder && pass.decoder_trace) update_running_stats(*decoder, *pass.decoder_trace);
      if (head && pass.head_trace) update_running_stats(*head, *pass.head_trace);
    }
    report.epochs.push_back(evaluate(static_cast<long>(epoch)));
  }
  return report;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Inference helpers.

inline Matrix encode(const ModelStack& s, const Matrix& dense) { return predict(s.encoder, dense); }

inline Matrix reconstruct(const ModelStack& s, const Matrix& dense) {
  return predict(s.decoder, predict(s.encoder, dense));
}

inline Vector reconstruct(const ModelStack& s, const Vector& dense) {
  return predict_row(s.decoder, predict_row(s.encoder, dense));
}

inline Matrix predict_proba(const ModelStack& s, const Matrix& dense) {
  if (!s.head) throw RejectedInput("unsupervised stack has no classifier head");
  return predict(*s.head, predict(s.encoder, dense));
}

inline Matrix predict_proba(const Classifier& c, const Matrix& dense) {
  return predict(c.head, predict(c.body, dense));
}

struct Classification {
  int label = 0;
  Vector probabilities;
};

template <typename Model>
Classification classify(const Model& model, const Vector& dense) {
  Matrix batch = dense.transpose();
  Vector p = predict_proba(model, batch).row(0).transpose();
  return {argmax(p), std::move(p)};
}

template <typename Model>
double accuracy(const Model& model, const Matrix& dense, std::span<const int> labels) {
  const Matrix p = predict_proba(model, dense);
  std::size_t hits = 0;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const Vector row = p.row(r).transpose();
    if (argmax(row) == labels[static_cast<std::size_t>(r)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(p.rows());
}

inline Matrix dense_input(const ModelStack& s, const TabularBatch& b) { return embed_encode(b, s.tables); }
inline Matrix dense_input(const Classifier& c, const TabularBatch& b) { return embed_encode(b, c.tables); }

// ---------------------------------------------------------------------------
// Training entry points.

namespace detail {

inline EmbeddingTables initial_tables(const DatasetSchema& schema, const TrainConfig& cfg,
                                      const EmbeddingTables* frozen) {
  return frozen ? *frozen : make_tables(schema, derive_seed(cfg.seed, streams::kEmbeddingInit));
}

inline void attach_holdout(ModelStack& s, const LabeledBatch* holdout) {
  if (!holdout || holdout->features.rows() == 0) return;
  const Matrix x = dense_input(s, holdout->features);
  s.report.test_reconstruction = reconstruction_loss(x, reconstruct(s, x));
  if (s.head && holdout->labels.size() == holdout->features.rows()) {
    s.report.test_accuracy = accuracy(s, x, holdout->labels);
  }
}

}  // namespace detail

// Encoder + decoder on reconstruction loss only. When `frozen_tables` is
// given, the dense space is fixed to those embeddings.
inline ModelStack train_unsupervised(const DatasetSchema& schema, const LabeledBatch& train,
                                     const Architecture& arch, const TrainConfig& cfg,
                                     const EmbeddingTables* frozen_tables = nullptr,
                                     const LabeledBatch* holdout = nullptr) {
  ModelStack s;
  s.mode = TrainingMode::kUnsupervised;
  s.config = cfg;
  s.config.w1 = 0.0;
  s.num_continuous = static_cast<std::size_t>(train.features.continuous.cols());
  s.tables = detail::initial_tables(schema, cfg, frozen_tables);
  s.schema_fingerprint = schema_fingerprint(schema);
  const std::size_t in = dense_dim(s.num_continuous, s.tables);
  s.encoder = make_encoder(in, arch, derive_seed(cfg.seed, streams::kEncoderInit));
  s.decoder = make_decoder(in, arch, derive_seed(cfg.seed, streams::kDecoderInit));
  s.latent_dim = arch.latent_dim();
  TrainConfig run = cfg;
  run.w1 = 0.0;
  s.report = detail::run_training(s.encoder, &s.decoder, nullptr, s.tables, frozen_tables == nullptr,
                                  train, run);
  detail::attach_holdout(s, holdout);
  return s;
}

// Jointly trained encoder + decoder + classifier head.
inline ModelStack train_joint(const DatasetSchema& schema, const LabeledBatch& train,
                              const Architecture& arch, const TrainConfig& cfg,
                              const EmbeddingTables* frozen_tables = nullptr,
                              const LabeledBatch* holdout = nullptr) {
  if (cfg.w1 < 0.0 || cfg.w2 < 0.0 || (cfg.w1 == 0.0 && cfg.w2 == 0.0)) {
    throw InvalidConfig("joint training needs w1, w2 >= 0 and not both zero");
  }
  ModelStack s;
  s.mode = TrainingMode::kSemiSupervised;
  s.config = cfg;
  s.num_continuous = static_cast<std::size_t>(train.features.continuous.cols());
  s.tables = detail::initial_tables(schema, cfg, frozen_tables);
  s.schema_fingerprint = schema_fingerprint(schema);
  const std::size_t in = dense_dim(s.num_continuous, s.tables);
  s.encoder = make_encoder(in, arch, derive_seed(cfg.seed, streams::kEncoderInit));
  s.decoder = make_decoder(in, arch, derive_seed(cfg.seed, streams::kDecoderInit));
  s.head = make_head(schema.num_classes(), arch, derive_seed(cfg.seed, streams::kHeadInit));
  s.latent_dim = arch.latent_dim();
  s.report = detail::run_training(s.encoder, &s.decoder, &*s.head, s.tables, frozen_tables == nullptr,
                                  train, cfg);
  detail::attach_holdout(s, holdout);
  return s;
}

// Per-class autoencoder: train_unsupervised restricted to rows of one class.
inline ModelStack train_class_ae(const DatasetSchema& schema, const LabeledBatch& train, int class_index,
                                 const Architecture& arch, const TrainConfig& cfg,
                                 const EmbeddingTables* frozen_tables = nullptr) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < train.labels.size(); ++i) {
    if (train.labels[i] == class_index) rows.push_back(i);
  }
  if (rows.empty()) {
    throw EmptyDataset("class " + std::to_string(class_index) + " has no training rows");
  }
  return train_unsupervised(schema, detail::select(train, rows), arch, cfg, frozen_tables);
}

// Black-box classifier: encoder-shaped body + head on cross-entropy only.
// Uses the same sub-seeds as train_joint, so it equals train_joint with
// w2 = 0 on the same seed.
inline Classifier train_classifier(const DatasetSchema& schema, const LabeledBatch& train,
                                   const Architecture& arch, const TrainConfig& cfg,
                                   const EmbeddingTables* frozen_tables = nullptr,
                                   const LabeledBatch* holdout = nullptr) {
  Classifier c;
  c.config = cfg;
  c.config.w2 = 0.0;
  if (c.config.w1 <= 0.0) c.config.w1 = 1.0;
  c.num_continuous = static_cast<std::size_t>(train.features.continuous.cols());
  c.tables = detail::initial_tables(schema, cfg, frozen_tables);
  c.schema_fingerprint = schema_fingerprint(schema);
  const std::size_t in = dense_dim(c.num_continuous, c.tables);
  c.body = make_encoder(in, arch, derive_seed(cfg.seed, streams::kEncoderInit));
  c.head = make_head(schema.num_classes(), arch, derive_seed(cfg.seed, streams::kHeadInit));
  c.report = detail::run_training(c.body, nullptr, &c.head, c.tables, frozen_tables == nullptr, train,
                                  c.config);
  if (holdout && holdout->features.rows() > 0) {
    c.report.test_accuracy = accuracy(c, dense_input(c, holdout->features), holdout->labels);
  }
  return c;
}

}  // namespace cfproto
