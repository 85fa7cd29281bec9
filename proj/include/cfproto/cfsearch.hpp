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

// Prototype-guided counterfactual search.
//
// For a query with dense encoding z0 the search minimizes, over dense
// candidates z with perturbation delta = z - z0,
//
//   L(z) = c * max(0, p_t0(z) - p_t(z) + kappa)      prediction hinge
//        + beta * |delta|_1 + |delta|_2^2             elastic net
//        + gamma * |z - AE(z)|_2^2                    reconstruction
//        + theta * |ENC(z) - proto_t|_2^2             prototype pull
//
// The smooth part is differentiated analytically through the classifier and
// the autoencoder; the L1 term is handled by soft-thresholding toward z0
// (FISTA with restarts). The outer loop adjusts c: decreased after a round
// that found a valid counterfactual, increased after a miss, bisecting once
// both bounds are known. Validity is checked on the decoded record, i.e.
// after categorical blocks snap to table rows and continuous values go
// through original units.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cfproto/catembed.hpp"
#include "cfproto/error.hpp"
#include "cfproto/models.hpp"
#include "cfproto/ndkernel.hpp"
#include "cfproto/proto.hpp"

namespace cfproto {

enum class TargetMode { kExplicit, kNearestPrototype };

struct CfConfig {
  double c_init = 1.0;
  std::size_t c_steps = 5;
  double c_update_factor = 10.0;
  double kappa = 0.0;
  double beta = 0.1;
  double gamma = 100.0;
  double theta = 100.0;
  std::size_t K = kDefaultPrototypeK;
  std::size_t max_iters = 500;
  double learning_rate = 0.01;
  // Polynomial decay lr_k = lr * sqrt(1 - k / max_iters) within each round.
  bool decay_learning_rate = true;
  // Clamp range of the scaled continuous coordinates.
  double feature_min = 0.0;
  double feature_max = 1.0;
  TargetMode target_mode = TargetMode::kNearestPrototype;
  int target_class = -1;  // used with TargetMode::kExplicit
  bool class_mean_prototype = false;
  // Finite-difference gradient of the prediction term (for opaque classifiers).
  bool numerical_prediction_gradient = false;
  double numerical_step = 1e-5;
  bool record_trace = true;

  void validate() const {
    if (c_init < 0 || kappa < 0 || beta < 0 || gamma < 0 || theta < 0 || learning_rate < 0) {
      throw InvalidConfig("counterfactual weights and learning rate must be non-negative");
    }
    if (max_iters < 1) throw InvalidConfig("max_iters must be >= 1");
    if (c_steps < 1) throw InvalidConfig("c_steps must be >= 1");
    if (c_update_factor <= 1.0) throw InvalidConfig("c_update_factor must exceed 1");
    if (K < 1) throw InvalidConfig("K must be >= 1");
    if (!(feature_max > feature_min)) throw InvalidConfig("feature range is empty");
    if (target_mode == TargetMode::kExplicit && target_class < 0) {
      throw InvalidConfig("explicit target mode needs target_class");
    }
  }
};

// The networks one framework searches with. The classifier is body + head;
// the autoencoder (encoder + decoder) provides both the reconstruction and
// the latent space of the prototypes.
struct SearchModels {
  const DenseNetwork* encoder = nullptr;
  const DenseNetwork* decoder = nullptr;
  const DenseNetwork* classifier_body = nullptr;
  const DenseNetwork* classifier_head = nullptr;
};

// Semi-supervised framework: the stack's own head is the classifier.
inline SearchModels search_models(const ModelStack& stack) {
  if (!stack.head) throw RejectedInput("semi-supervised search needs a classifier head");
  return {&stack.encoder, &stack.decoder, &stack.encoder, &*stack.head};
}

// Unsupervised framework: autoencoder plus a separately trained classifier.
inline SearchModels search_models(const ModelStack& autoencoder, const Classifier& h) {
  return {&autoencoder.encoder, &autoencoder.decoder, &h.body, &h.head};
}

inline Vector class_probabilities(const SearchModels& m, const Vector& z) {
  return predict_row(*m.classifier_head, predict_row(*m.classifier_body, z));
}

inline int predicted_class(const SearchModels& m, const Vector& z) {
  return argmax(class_probabilities(m, z));
}

// max(0, p_t0 - p_t + kappa)
inline double hinge_pred_loss(const Vector& probs, int origin, int target, double kappa) {
  if (origin < 0 || target < 0 || origin >= probs.size() || target >= probs.size()) {
    throw RejectedInput("hinge_pred_loss: class index out of range");
  }
  return std::max(0.0, probs[origin] - probs[target] + kappa);
}

// Soft-thresholding of v toward `center`: coordinates within `threshold` of
// the center snap to it, the rest move `threshold` closer.
inline Vector shrink(const Vector& v, const Vector& center, double threshold) {
  Vector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double d = v[i] - center[i];
    if (d > threshold) out[i] = v[i] - threshold;
    else if (d < -threshold) out[i] = v[i] + threshold;
    else out[i] = center[i];
  }
  return out;
}

inline Vector clamp(const Vector& v, const DenseBounds& b) {
  return v.cwiseMax(b.lower).cwiseMin(b.upper);
}

inline Vector numerical_gradient(const std::function<double(const Vector&)>& f, const Vector& z,
                                 double step) {
  Vector g(z.size());
  Vector probe = z;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    probe[i] = z[i] + step;
    const double up = f(probe);
    probe[i] = z[i] - step;
    const double down = f(probe);
    probe[i] = z[i];
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

struct LossComponents {
  double pred = 0.0;   // hinge value (unweighted)
  double l1 = 0.0;     // |delta|_1 (unweighted)
  double l2 = 0.0;     // |delta|_2^2
  double recon = 0.0;  // |z - AE(z)|^2 (unweighted)
  double proto = 0.0;  // |ENC(z) - proto|^2 (unweighted)
  double total = 0.0;  // weighted sum including the L1 term
};

struct LossEvaluation {
  LossComponents components;
  Vector smooth_grad;  // gradient of everything except beta * |delta|_1
};

struct SearchTarget {
  int origin = 0;
  int target = 1;
  Vector prototype;  // latent centroid
};

inline LossEvaluation composite_loss(const Vector& z, const Vector& z0, const SearchTarget& tgt,
                                     const SearchModels& m, const CfConfig& cfg, double c,
                                     bool want_gradient = true) {
  if (z.size() != z0.size() || static_cast<std::size_t>(z.size()) != m.encoder->input_dim()) {
    throw RejectedInput("candidate dimension does not match the search models");
  }
  LossEvaluation ev;
  LossComponents& lc = ev.components;
  const Vector delta = z - z0;
  lc.l1 = delta.lpNorm<1>();
  lc.l2 = delta.squaredNorm();
  const Matrix zm = z.transpose();

  // Prediction hinge.
  const Trace body_tr = forward(*m.classifier_body, zm, Mode::kInference);
  const Trace head_tr = forward(*m.classifier_head, body_tr.output(), Mode::kInference);
  const Vector probs = head_tr.output().row(0).transpose();
  lc.pred = hinge_pred_loss(probs, tgt.origin, tgt.target, cfg.kappa);

  // Autoencoder terms share one encoder pass.
  const Trace enc_tr = forward(*m.encoder, zm, Mode::kInference);
  const Matrix& latent = enc_tr.output();
  const Trace dec_tr = forward(*m.decoder, latent, Mode::kInference);
  const Vector recon_err = z - dec_tr.output().row(0).transpose();
  lc.recon = recon_err.squaredNorm();
  const Vector proto_err = latent.row(0).transpose() - tgt.prototype;
  lc.proto = proto_err.squaredNorm();

  lc.total = c * lc.pred + cfg.beta * lc.l1 + lc.l2 + cfg.gamma * lc.recon + cfg.theta * lc.proto;
  if (!std::isfinite(lc.total)) throw OptimizationDiverged("counterfactual loss is not finite");
  if (!want_gradient) return ev;

  Vector grad = 2.0 * delta;
  if (c > 0.0 && lc.pred > 0.0) {
    if (cfg.numerical_prediction_gradient) {
      auto hinge = [&](const Vector& v) {
        return hinge_pred_loss(class_probabilities(m, v), tgt.origin, tgt.target, cfg.kappa);
      };
      grad += c * numerical_gradient(hinge, z, cfg.numerical_step);
    } else {
      Matrix up = Matrix::Zero(1, probs.size());
      up(0, tgt.origin) += c;
      up(0, tgt.target) -= c;
      const Gradients gh = backward(*m.classifier_head, head_tr, up);
      const Gradients gb = backward(*m.classifier_body, body_tr, gh.input);
      grad += gb.input.row(0).transpose();
    }
  }
  Matrix d_latent = Matrix::Zero(1, latent.cols());
  if (cfg.gamma > 0.0) {
    grad += cfg.gamma * 2.0 * recon_err;
    const Matrix up = (-cfg.gamma * 2.0 * recon_err).transpose();
    d_latent += backward(*m.decoder, dec_tr, up).input;
  }
  if (cfg.theta > 0.0) d_latent += (cfg.theta * 2.0 * proto_err).transpose();
  if (cfg.gamma > 0.0 || cfg.theta > 0.0) {
    grad += backward(*m.encoder, enc_tr, d_latent).input.row(0).transpose();
  }
  if (!grad.allFinite()) throw OptimizationDiverged("counterfactual gradient is not finite");
  ev.smooth_grad = std::move(grad);
  return ev;
}

struct IterationRecord {
  std::size_t round = 0;
  std::size_t iteration = 0;
  double c = 0.0;
  LossComponents loss;
  bool valid = false;
};

struct Candidate {
  Vector dense;   // re-encoded decoded record
  Vector record;  // original units / level indices
  double l1 = 0.0;
};

// Decodes, re-encodes and classifies a dense candidate.
struct CandidateCheck {
  Vector record;
  Vector dense;
  int label = 0;
};

inline CandidateCheck check_candidate(const Vector& z, const RecordCodec& codec, const SearchModels& m) {
  CandidateCheck out;
  out.record = codec.decode(z);
  out.dense = codec.encode(out.record);
  out.label = predicted_class(m, out.dense);
  return out;
}

struct RoundOutcome {
  std::optional<Candidate> best;
  Vector last;  // final iterate
  std::vector<IterationRecord> trace;
};

// One proximal-gradient run at fixed c.
inline RoundOutcome fista_search(const Vector& z0, const SearchTarget& tgt, const SearchModels& m,
                                 const RecordCodec& codec, const CfConfig& cfg, double c,
                                 const DenseBounds& bounds, std::size_t round = 0) {
  RoundOutcome out;
  Vector x = clamp(z0, bounds);
  Vector y = x;
  double loss_x = composite_loss(x, z0, tgt, m, cfg, c, false).components.total;
  std::size_t momentum_k = 0;
  for (std::size_t k = 0; k < cfg.max_iters; ++k) {
    double lr = cfg.learning_rate;
    if (cfg.decay_learning_rate) {
      lr *= std::sqrt(1.0 - static_cast<double>(k) / static_cast<double>(cfg.max_iters));
    }
    const LossEvaluation at_y = composite_loss(y, z0, tgt, m, cfg, c, true);
    const Vector x_new = clamp(shrink(y - lr * at_y.smooth_grad, z0, cfg.beta * lr), bounds);
    const LossComponents lc = composite_loss(x_new, z0, tgt, m, cfg, c, false).components;
    if (lc.total > loss_x) {
      momentum_k = 0;
      y = x_new;
    } else {
      const double mom = static_cast<double>(momentum_k) / static_cast<double>(momentum_k + 3);
      y = clamp(x_new + mom * (x_new - x), bounds);
      ++momentum_k;
    }
    x = x_new;
    loss_x = lc.total;

    const CandidateCheck chk = check_candidate(x, codec, m);
    const bool valid = chk.label == tgt.target;
    if (valid) {
      const double l1 = (chk.dense - z0).lpNorm<1>();
      if (!out.best || l1 < out.best->l1) out.best = Candidate{chk.dense, chk.record, l1};
    }
    if (cfg.record_trace) out.trace.push_back({round, k, c, lc, valid});
  }
  out.last = x;
  return out;
}

struct CounterfactualResult {
  Vector x0;      // query record
  Vector x_cfe;   // decoded counterfactual record
  Vector z0;      // dense query
  Vector z_cfe;   // dense counterfactual (re-encoded from x_cfe)
  Vector delta;   // z_cfe - z0
  int t0 = 0;     // origin class
  int t = 0;      // target class
  int achieved = 0;  // class of x_cfe under the classifier
  bool converged = false;
  Prototype prototype_used;
  std::vector<IterationRecord> loss_trace;
  std::vector<double> best_l1_by_round;  // +inf until a valid candidate exists
  double c_final = 0.0;
  std::size_t iterations = 0;
};

// Prototype choice for a query: explicit target class or nearest prototype.
inline Prototype choose_prototype(const Vector& query_latent, int origin,
                                  std::span<const ClassLatents> classes, const CfConfig& cfg) {
  if (cfg.target_mode == TargetMode::kExplicit) {
    for (const ClassLatents& cl : classes) {
      if (cl.class_index == cfg.target_class) {
        return target_prototype(cl, query_latent, cfg.K, cfg.class_mean_prototype);
      }
    }
    throw NoPrototype("no training rows for target class " + std::to_string(cfg.target_class));
  }
  std::vector<Prototype> candidates;
  for (const ClassLatents& cl : classes) {
    if (cl.class_index == origin || cl.latents.rows() == 0) continue;
    candidates.push_back(target_prototype(cl, query_latent, cfg.K, cfg.class_mean_prototype));
  }
  return candidates[nearest_prototype(candidates, query_latent, origin)];
}

// Encodes training rows per class in the latent space of `encoder`.
inline std::vector<ClassLatents> class_latents(const DenseNetwork& encoder, const Matrix& dense_rows,
                                               std::span<const int> labels,
                                               std::span<const std::size_t> row_ids, int num_classes) {
  const Matrix latents = predict(encoder, dense_rows);
  std::vector<ClassLatents> out(static_cast<std::size_t>(num_classes));
  std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    members[static_cast<std::size_t>(labels[i])].push_back(static_cast<Eigen::Index>(i));
  }
  for (int c = 0; c < num_classes; ++c) {
    ClassLatents& cl = out[static_cast<std::size_t>(c)];
    cl.class_index = c;
    const auto& idx = members[static_cast<std::size_t>(c)];
    cl.latents.resize(static_cast<Eigen::Index>(idx.size()), latents.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      cl.latents.row(static_cast<Eigen::Index>(k)) = latents.row(idx[k]);
      cl.row_ids.push_back(row_ids[static_cast<std::size_t>(idx[k])]);
    }
  }
  return out;
}

inline CounterfactualResult find_counterfactual(const Vector& x0, const SearchModels& m,
                                                const RecordCodec& codec,
                                                std::span<const ClassLatents> classes,
                                                const CfConfig& cfg) {
  cfg.validate();
  CounterfactualResult res;
  res.x0 = x0;
  res.z0 = codec.encode(x0);
  res.t0 = predicted_class(m, res.z0);
  const Vector q = predict_row(*m.encoder, res.z0);

  if (cfg.target_mode == TargetMode::kExplicit && cfg.target_class == res.t0) {
    res.t = res.t0;
    res.achieved = res.t0;
    res.x_cfe = x0;
    res.z_cfe = res.z0;
    res.delta = Vector::Zero(res.z0.size());
    res.converged = true;
    res.prototype_used = choose_prototype(q, res.t0, classes, cfg);
    return res;
  }
  res.prototype_used = choose_prototype(q, res.t0, classes, cfg);
  const SearchTarget tgt{res.t0, res.prototype_used.class_index, res.prototype_used.centroid};
  res.t = tgt.target;

  DenseBounds bounds = codec.bounds(cfg.feature_min, cfg.feature_max);
  bounds.lower = bounds.lower.cwiseMin(res.z0);
  bounds.upper = bounds.upper.cwiseMax(res.z0);

  std::optional<Candidate> best;
  Vector last = res.z0;
  double c = cfg.c_init;
  double c_lo = 0.0;
  double c_hi = std::numeric_limits<double>::infinity();
  for (std::size_t round = 0; round < cfg.c_steps; ++round) {
    RoundOutcome ro = fista_search(res.z0, tgt, m, codec, cfg, c, bounds, round);
    res.iterations += cfg.max_iters;
    if (cfg.record_trace) {
      res.loss_trace.insert(res.loss_trace.end(), ro.trace.begin(), ro.trace.end());
    }
    last = ro.last;
    res.c_final = c;
    if (ro.best) {
      if (!best || ro.best->l1 < best->l1) best = ro.best;
      c_hi = std::min(c_hi, c);
      c = c_lo > 0.0 ? 0.5 * (c_lo + c_hi) : c / cfg.c_update_factor;
    } else {
      c_lo = std::max(c_lo, c);
      c = std::isfinite(c_hi) ? 0.5 * (c_lo + c_hi) : c * cfg.c_update_factor;
    }
    res.best_l1_by_round.push_back(best ? best->l1 : std::numeric_limits<double>::infinity());
  }

  if (best) {
    res.converged = true;
    res.x_cfe = best->record;
    res.z_cfe = best->dense;
  } else {
    res.converged = false;
    res.x_cfe = codec.decode(last);
    res.z_cfe = codec.encode(res.x_cfe);
  }
  res.delta = res.z_cfe - res.z0;
  res.achieved = predicted_class(m, res.z_cfe);
  return res;
}

}  // namespace cfproto
