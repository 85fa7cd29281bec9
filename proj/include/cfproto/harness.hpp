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

// Experiment driver: dataset preparation, training of every model family,
// query sampling, counterfactual generation under both frameworks, metrics
// and file outputs.
//
// Output directory layout:
//
//   preprocess.json            schema, split, scaler, seed
//   checkpoints/*.json         ae_x, ae_d, classifier, class_ae_<i>
//   queries.json               sampled test rows and the sampling rule
//   explanations_<fw>.jsonl    one counterfactual record per query
//   metrics.tsv, metrics.json  comparison table
//   scatter_<fw>_points.tsv    latent coordinates per row (latent dim 2)
//   scatter_<fw>_grid.tsv      class probabilities on a latent lattice

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cfproto/catembed.hpp"
#include "cfproto/cfsearch.hpp"
#include "cfproto/checkpoint.hpp"
#include "cfproto/dataio.hpp"
#include "cfproto/error.hpp"
#include "cfproto/metrics.hpp"
#include "cfproto/models.hpp"
#include "cfproto/proto.hpp"
#include "cfproto/rng.hpp"
#include "cfproto/synthetic.hpp"

namespace cfproto {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration.

inline Json to_json(const CfConfig& c) {
  return {{"c_init", c.c_init},
          {"c_steps", c.c_steps},
          {"c_update_factor", c.c_update_factor},
          {"kappa", c.kappa},
          {"beta", c.beta},
          {"gamma", c.gamma},
          {"theta", c.theta},
          {"K", c.K},
          {"max_iters", c.max_iters},
          {"learning_rate", c.learning_rate},
          {"decay_learning_rate", c.decay_learning_rate},
          {"feature_range", {c.feature_min, c.feature_max}},
          {"target_mode", c.target_mode == TargetMode::kExplicit ? "explicit" : "nearest_prototype"},
          {"target_class", c.target_class},
          {"class_mean_prototype", c.class_mean_prototype},
          {"numerical_prediction_gradient", c.numerical_prediction_gradient}};
}

// Fields absent from `j` keep the values of `base`.
inline CfConfig cf_config_from_json(const Json& j, CfConfig base = {}) {
  CfConfig c = base;
  c.c_init = j.value("c_init", c.c_init);
  c.c_steps = j.value("c_steps", c.c_steps);
  c.c_update_factor = j.value("c_update_factor", c.c_update_factor);
  c.kappa = j.value("kappa", c.kappa);
  c.beta = j.value("beta", c.beta);
  c.gamma = j.value("gamma", c.gamma);
  c.theta = j.value("theta", c.theta);
  c.K = j.value("K", c.K);
  c.max_iters = j.value("max_iters", c.max_iters);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.decay_learning_rate = j.value("decay_learning_rate", c.decay_learning_rate);
  if (j.contains("feature_range")) {
    c.feature_min = j.at("feature_range").at(0).get<double>();
    c.feature_max = j.at("feature_range").at(1).get<double>();
  }
  if (j.contains("target_mode")) {
    const std::string m = j.at("target_mode").get<std::string>();
    if (m == "explicit") c.target_mode = TargetMode::kExplicit;
    else if (m == "nearest_prototype") c.target_mode = TargetMode::kNearestPrototype;
    else throw InvalidConfig("unknown target_mode '" + m + "'");
  }
  c.target_class = j.value("target_class", c.target_class);
  c.class_mean_prototype = j.value("class_mean_prototype", c.class_mean_prototype);
  c.numerical_prediction_gradient = j.value("numerical_prediction_gradient", c.numerical_prediction_gradient);
  c.validate();
  return c;
}

inline Json to_json(const Architecture& a) {
  return {{"encoder", a.encoder},
          {"classifier", a.classifier},
          {"decoder", a.decoder},
          {"batchnorm", a.batchnorm},
          {"latent_activation", to_string(a.latent_activation)},
          {"output_activation", to_string(a.output_activation)},
          {"bn_momentum", a.bn.momentum},
          {"bn_epsilon", a.bn.epsilon}};
}

inline Architecture architecture_from_json(const Json& j) {
  Architecture a;
  a.encoder = j.at("encoder").get<std::vector<std::size_t>>();
  a.classifier = j.value("classifier", std::vector<std::size_t>{2});
  a.decoder = j.at("decoder").get<std::vector<std::size_t>>();
  a.batchnorm = j.value("batchnorm", a.batchnorm);
  if (j.contains("latent_activation")) {
    a.latent_activation = activation_from_string(j.at("latent_activation").get<std::string>());
  }
  if (j.contains("output_activation")) {
    a.output_activation = activation_from_string(j.at("output_activation").get<std::string>());
  }
  a.bn.momentum = j.value("bn_momentum", a.bn.momentum);
  a.bn.epsilon = j.value("bn_epsilon", a.bn.epsilon);
  const auto positive = [](const std::vector<std::size_t>& w) {
    return !w.empty() && std::all_of(w.begin(), w.end(), [](std::size_t x) { return x > 0; });
  };
  if (!positive(a.encoder) || !positive(a.classifier) || !positive(a.decoder)) {
    throw InvalidConfig("layer widths must be positive and non-empty");
  }
  return a;
}

struct ExperimentConfig {
  std::string name;
  std::string csv_path;     // resolved against the config file directory
  std::string schema_path;
  Json synthetic;           // null, or a generator description
  bool drop_missing = true;
  double train_fraction = 0.8;
  Architecture arch;
  Architecture class_ae_arch;  // per-class autoencoders behind IM1/IM2
  TrainConfig train;
  CfConfig cf_ss;
  CfConfig cf_u;
  std::string origin_class;  // label of the class queries are drawn from
  std::size_t n_queries = 50;
  std::uint64_t seed = 0;
  std::vector<std::string> frameworks = {"ss", "u"};
  std::size_t scatter_resolution = 50;
  std::size_t threads = 0;  // 0 = hardware concurrency
  std::string output_dir = "out";

  void validate() const {
    if (n_queries < 1) throw InvalidConfig("n_queries must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidConfig("train_fraction must be in (0, 1)");
    if (synthetic.is_null() && (csv_path.empty() || schema_path.empty())) {
      throw InvalidConfig("dataset needs csv and schema paths or a synthetic generator");
    }
    if (frameworks.empty()) throw InvalidConfig("no framework selected");
    for (const std::string& f : frameworks) {
      if (f != "ss" && f != "u") throw InvalidConfig("unknown framework '" + f + "'");
    }
    if (scatter_resolution < 2) throw InvalidConfig("scatter_resolution must be >= 2");
    if (train.epochs < 1 || train.batch_size < 1) throw InvalidConfig("epochs and batch_size must be >= 1");
    cf_ss.validate();
    cf_u.validate();
  }
};

inline Json to_json(const ExperimentConfig& c) {
  Json dataset = {{"drop_missing", c.drop_missing}};
  if (c.synthetic.is_null()) {
    dataset["csv"] = c.csv_path;
    dataset["schema"] = c.schema_path;
  } else {
    dataset["synthetic"] = c.synthetic;
  }
  return {{"name", c.name},
          {"dataset", dataset},
          {"train_fraction", c.train_fraction},
          {"architecture", to_json(c.arch)},
          {"class_ae_architecture", to_json(c.class_ae_arch)},
          {"train",
           {{"epochs", c.train.epochs},
            {"batch_size", c.train.batch_size},
            {"full_batch_below", c.train.full_batch_below},
            {"w1", c.train.w1},
            {"w2", c.train.w2},
            {"learning_rate", c.train.adam.learning_rate}}},
          {"counterfactual", {{"ss", to_json(c.cf_ss)}, {"u", to_json(c.cf_u)}}},
          {"origin_class", c.origin_class},
          {"n_queries", c.n_queries},
          {"seed", c.seed},
          {"frameworks", c.frameworks},
          {"scatter_resolution", c.scatter_resolution},
          {"threads", c.threads},
          {"output_dir", c.output_dir}};
}

inline ExperimentConfig experiment_config_from_json(const Json& j, const fs::path& base_dir = {}) {
  ExperimentConfig c;
  c.name = j.value("name", std::string("experiment"));
  const Json& ds = j.at("dataset");
  const auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return (path.is_absolute() || base_dir.empty() ? path : base_dir / path).lexically_normal().string();
  };
  if (ds.contains("synthetic")) {
    c.synthetic = ds.at("synthetic");
  } else {
    c.csv_path = resolve(ds.at("csv").get<std::string>());
    c.schema_path = resolve(ds.at("schema").get<std::string>());
  }
  c.drop_missing = ds.value("drop_missing", c.drop_missing);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  c.arch = architecture_from_json(j.at("architecture"));
  if (j.contains("class_ae_architecture")) {
    Json merged = j.at("architecture");
    merged.update(j.at("class_ae_architecture"));
    c.class_ae_arch = architecture_from_json(merged);
  } else {
    c.class_ae_arch = c.arch;
  }
  if (j.contains("train")) {
    const Json& t = j.at("train");
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.full_batch_below = t.value("full_batch_below", c.train.full_batch_below);
    c.train.w1 = t.value("w1", c.train.w1);
    c.train.w2 = t.value("w2", c.train.w2);
    c.train.adam.learning_rate = t.value("learning_rate", c.train.adam.learning_rate);
  }
  if (j.contains("counterfactual")) {
    const Json& cf = j.at("counterfactual");
    CfConfig shared = cf.contains("both") ? cf_config_from_json(cf.at("both")) : CfConfig{};
    c.cf_ss = cf.contains("ss") ? cf_config_from_json(cf.at("ss"), shared) : shared;
    c.cf_u = cf.contains("u") ? cf_config_from_json(cf.at("u"), shared) : shared;
  }
  c.origin_class = j.value("origin_class", std::string());
  c.n_queries = j.value("n_queries", c.n_queries);
  c.seed = j.value("seed", c.seed);
  c.frameworks = j.value("frameworks", c.frameworks);
  c.scatter_resolution = j.value("scatter_resolution", c.scatter_resolution);
  c.threads = j.value("threads", c.threads);
  c.output_dir = j.value("output_dir", c.output_dir);
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot open config " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw InvalidConfig(path + ": " + e.what());
  }
  return experiment_config_from_json(j, fs::path(path).parent_path());
}

// ---------------------------------------------------------------------------
// Stage bookkeeping.

// Runs `fn`, converting any failure into a StageError tagged `stage`.
template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

// Remembers files written by a run and removes them unless committed.
class OutputTracker {
 public:
  explicit OutputTracker(fs::path dir) : dir_(std::move(dir)) {}
  OutputTracker(const OutputTracker&) = delete;
  OutputTracker& operator=(const OutputTracker&) = delete;
  ~OutputTracker() {
    if (committed_) return;
    std::error_code ec;
    for (auto it = written_.rbegin(); it != written_.rend(); ++it) fs::remove(*it, ec);
    for (auto it = created_dirs_.rbegin(); it != created_dirs_.rend(); ++it) fs::remove(*it, ec);
  }

  fs::path path(const std::string& rel) {
    const fs::path p = dir_ / rel;
    ensure_dir(p.parent_path());
    written_.push_back(p);
    return p;
  }

  void commit() { committed_ = true; }
  const fs::path& dir() const { return dir_; }

 private:
  void ensure_dir(const fs::path& d) {
    if (d.empty() || fs::exists(d)) return;
    ensure_dir(d.parent_path());
    fs::create_directory(d);
    created_dirs_.push_back(d);
  }

  fs::path dir_;
  std::vector<fs::path> written_;
  std::vector<fs::path> created_dirs_;
  bool committed_ = false;
};

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Data preparation.

inline Dataset synthetic_dataset(const Json& spec) {
  const std::string kind = spec.at("kind").get<std::string>();
  const auto n = spec.value("n_per_class", std::size_t{250});
  const auto seed = spec.value("seed", std::uint64_t{0});
  if (kind == "two_gaussians") {
    return two_gaussians(n, seed, spec.value("separation", 4.0), spec.value("sd", 1.0));
  }
  if (kind == "planted_blobs") {
    return planted_blobs(n, spec.value("num_classes", std::size_t{2}), spec.value("signal_dims", std::size_t{2}),
                         spec.value("noise_dims", std::size_t{4}), seed, spec.value("separation", 3.0),
                         spec.value("signal_sd", 1.0), spec.value("noise_sd", 3.0));
  }
  throw InvalidConfig("unknown synthetic kind '" + kind + "'");
}

inline Dataset load_experiment_data(const ExperimentConfig& cfg) {
  if (!cfg.synthetic.is_null()) return synthetic_dataset(cfg.synthetic);
  return load_dataset(cfg.csv_path, load_schema(cfg.schema_path), cfg.drop_missing);
}

struct PreparedData {
  Dataset data;
  SplitIndices split;
  FeatureScaler scaler;
  LabeledBatch train;
  LabeledBatch test;
};

inline LabeledBatch labeled_batch(const Dataset& ds, const FeatureScaler& sc, std::span<const std::size_t> rows) {
  LabeledBatch b{make_batch(ds, sc, rows), {}};
  b.labels.reserve(rows.size());
  for (std::size_t r : rows) b.labels.push_back(ds.labels[r]);
  return b;
}

inline PreparedData prepare_data(Dataset data, double train_fraction, std::uint64_t seed) {
  PreparedData p;
  p.data = std::move(data);
  p.split = split(p.data.labels, train_fraction, derive_seed(seed, streams::kSplit));
  if (p.split.train.empty() || p.split.test.empty()) throw EmptyDataset("split left an empty partition");
  p.scaler = fit_scaler(p.data, p.split.train);
  p.train = labeled_batch(p.data, p.scaler, p.split.train);
  p.test = labeled_batch(p.data, p.scaler, p.split.test);
  return p;
}

// Origin "*" draws queries from every class; returns kAnyClass.
inline constexpr int kAnyClass = -1;

inline int origin_class_index(const ExperimentConfig& cfg, const DatasetSchema& schema) {
  if (cfg.origin_class.empty()) return static_cast<int>(schema.num_classes()) - 1;
  if (cfg.origin_class == "*") return kAnyClass;
  return schema.class_index(cfg.origin_class);
}

inline std::string origin_class_label(const ExperimentConfig& cfg, const DatasetSchema& schema) {
  const int origin = origin_class_index(cfg, schema);
  return origin == kAnyClass ? "*" : schema.target.classes.at(static_cast<std::size_t>(origin));
}

// ---------------------------------------------------------------------------
// Model families.

struct TrainedModels {
  ModelStack ae_x;                   // unsupervised autoencoder, defines the U dense space
  ModelStack ae_d;                   // jointly trained autoencoder + head (SS)
  Classifier h;                      // classifier searched by the U framework
  std::vector<ModelStack> class_aes; // one per class, on ae_x's tables
};

inline TrainConfig seeded(TrainConfig cfg, std::uint64_t master, std::uint64_t stream) {
  cfg.seed = derive_seed(master, stream);
  return cfg;
}

inline TrainedModels train_models(const ExperimentConfig& cfg, const PreparedData& p) {
  const DatasetSchema& schema = p.data.schema;
  TrainedModels m;
  m.ae_x = train_unsupervised(schema, p.train, cfg.arch, seeded(cfg.train, cfg.seed, streams::kModelAEX), nullptr,
                              &p.test);
  m.ae_d = train_joint(schema, p.train, cfg.arch, seeded(cfg.train, cfg.seed, streams::kModelAED), nullptr, &p.test);
  m.h = train_classifier(schema, p.train, cfg.arch, seeded(cfg.train, cfg.seed, streams::kModelClassifier),
                         &m.ae_x.tables, &p.test);
  for (std::size_t c = 0; c < schema.num_classes(); ++c) {
    m.class_aes.push_back(train_class_ae(schema, p.train, static_cast<int>(c), cfg.class_ae_arch,
                                         seeded(cfg.train, cfg.seed, streams::kModelClassAE + c),
                                         &m.ae_x.tables));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Frameworks.

struct Framework {
  std::string name;  // "ss" or "u"
  RecordCodec codec;
  SearchModels models;
  std::vector<ClassLatents> classes;
  CfConfig cf;
};

inline Framework make_framework(const std::string& name, const TrainedModels& m, const PreparedData& p,
                                const ExperimentConfig& cfg) {
  Framework f;
  f.name = name;
  if (name == "ss") {
    f.codec = RecordCodec{p.scaler, m.ae_d.tables};
    f.models = search_models(m.ae_d);
    f.cf = cfg.cf_ss;
  } else if (name == "u") {
    f.codec = RecordCodec{p.scaler, m.ae_x.tables};
    f.models = search_models(m.ae_x, m.h);
    f.cf = cfg.cf_u;
  } else {
    throw InvalidConfig("unknown framework '" + name + "'");
  }
  const Matrix dense = embed_encode(p.train.features, f.codec.tables);
  f.classes = class_latents(*f.models.encoder, dense, p.train.labels, p.split.train,
                            static_cast<int>(p.data.schema.num_classes()));
  return f;
}

// ---------------------------------------------------------------------------
// Query sampling.

struct QuerySample {
  std::vector<std::size_t> rows;
  std::size_t available = 0;
  bool truncated = false;  // fewer rows available than requested
};

// Uniform sample without replacement, returned in ascending row order.
inline QuerySample sample_queries(std::span<const std::size_t> eligible, std::size_t n, std::uint64_t seed) {
  if (eligible.empty()) throw EmptyDataset("no test rows are classified into the origin class");
  QuerySample s;
  s.available = eligible.size();
  std::vector<std::size_t> pool(eligible.begin(), eligible.end());
  if (n >= pool.size()) {
    s.truncated = n > pool.size();
    s.rows = pool;
  } else {
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    s.rows.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
  }
  std::sort(s.rows.begin(), s.rows.end());
  return s;
}

// Test rows every selected framework classifies as `origin`. With kAnyClass
// the frameworks only have to agree with each other.
inline std::vector<std::size_t> eligible_rows(const PreparedData& p, std::span<const Framework> frameworks,
                                              int origin) {
  std::vector<std::size_t> out;
  for (std::size_t row : p.split.test) {
    const Vector rec = p.data.record(row);
    int agreed = origin;
    bool ok = true;
    for (const Framework& f : frameworks) {
      const int label = predicted_class(f.models, f.codec.encode(rec));
      if (agreed == kAnyClass) agreed = label;
      if (label != agreed) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Counterfactual generation.

inline std::size_t worker_count(std::size_t requested, std::size_t jobs) {
  std::size_t n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  return std::max<std::size_t>(1, std::min(n, jobs));
}

// Calls fn(i) for i in [0, n) over `threads` workers; the first exception is rethrown.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = worker_count(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::vector<CounterfactualResult> explain_queries(const Framework& f, const Dataset& data,
                                                         std::span<const std::size_t> rows, std::size_t threads) {
  std::vector<CounterfactualResult> out(rows.size());
  parallel_for(rows.size(), threads, [&](std::size_t i) {
    out[i] = find_counterfactual(data.record(rows[i]), f.models, f.codec, f.classes, f.cf);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Explanation records.

inline Json feature_value(const FeatureSpec& f, double v) {
  if (f.categorical()) return f.levels.at(static_cast<std::size_t>(v));
  return v;
}

inline Json record_to_json(const DatasetSchema& schema, const Vector& rec) {
  Json j = Json::object();
  for (std::size_t i = 0; i < schema.features.size(); ++i) {
    j[schema.features[i].name] = feature_value(schema.features[i], rec[static_cast<Eigen::Index>(i)]);
  }
  return j;
}

inline Json components_to_json(const LossComponents& c) {
  return {{"pred", c.pred}, {"l1", c.l1}, {"l2", c.l2}, {"recon", c.recon}, {"proto", c.proto}, {"total", c.total}};
}

inline Json explanation_to_json(const CounterfactualResult& r, std::size_t query_id, std::size_t row,
                                const std::string& framework, const DatasetSchema& schema) {
  Json changes = Json::array();
  for (std::size_t i = 0; i < schema.features.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const FeatureSpec& f = schema.features[i];
    if (!feature_changed(f, r.x0[k], r.x_cfe[k], kContinuousTolerance)) continue;
    changes.push_back({{"feature", f.name}, {"from", feature_value(f, r.x0[k])}, {"to", feature_value(f, r.x_cfe[k])}});
  }
  Json by_round = Json::array();
  for (double v : r.best_l1_by_round) by_round.push_back(std::isfinite(v) ? Json(v) : Json(nullptr));
  Json loss = {{"c_final", r.c_final}, {"iterations", r.iterations}, {"best_l1_by_round", by_round}};
  if (!r.loss_trace.empty()) loss["final"] = components_to_json(r.loss_trace.back().loss);
  const auto& classes = schema.target.classes;
  return {{"query_id", query_id},
          {"row", row},
          {"framework", framework},
          {"origin", classes.at(static_cast<std::size_t>(r.t0))},
          {"target", classes.at(static_cast<std::size_t>(r.t))},
          {"achieved", classes.at(static_cast<std::size_t>(r.achieved))},
          {"converged", r.converged},
          {"x0", record_to_json(schema, r.x0)},
          {"x_cfe", record_to_json(schema, r.x_cfe)},
          {"changes", changes},
          {"x0_values", std::vector<double>(r.x0.data(), r.x0.data() + r.x0.size())},
          {"x_cfe_values", std::vector<double>(r.x_cfe.data(), r.x_cfe.data() + r.x_cfe.size())},
          {"delta_l1", r.delta.lpNorm<1>()},
          {"prototype",
           {{"class", classes.at(static_cast<std::size_t>(r.prototype_used.class_index))},
            {"k_used", r.prototype_used.k_used},
            {"centroid", std::vector<double>(r.prototype_used.centroid.data(),
                                             r.prototype_used.centroid.data() + r.prototype_used.centroid.size())}}},
          {"loss", loss}};
}

// The fields of an explanation record the metrics need.
struct ExplanationRecord {
  std::size_t query_id = 0;
  std::size_t row = 0;
  std::string framework;
  int origin = 0;
  int target = 0;
  bool converged = false;
  Vector x0;
  Vector x_cfe;
};

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline ExplanationRecord explanation_from_json(const Json& j, const DatasetSchema& schema) {
  ExplanationRecord e;
  e.query_id = j.at("query_id").get<std::size_t>();
  e.row = j.at("row").get<std::size_t>();
  e.framework = j.at("framework").get<std::string>();
  e.origin = schema.class_index(j.at("origin").get<std::string>());
  e.target = schema.class_index(j.at("target").get<std::string>());
  e.converged = j.at("converged").get<bool>();
  e.x0 = to_vector(j.at("x0_values").get<std::vector<double>>());
  e.x_cfe = to_vector(j.at("x_cfe_values").get<std::vector<double>>());
  return e;
}

inline std::string emit_jsonl(const std::vector<Json>& records) {
  std::string out;
  for (const Json& r : records) out += r.dump() + '\n';
  return out;
}

inline std::vector<ExplanationRecord> read_explanations(const fs::path& path, const DatasetSchema& schema) {
  std::istringstream in(read_text(path));
  std::vector<ExplanationRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(explanation_from_json(Json::parse(line), schema));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation.

// Metric space: ae_x's dense encoding; IM1/IM2 use the class autoencoders
// and ae_x.
struct MetricModels {
  const FeatureScaler* scaler = nullptr;
  const ModelStack* ae_x = nullptr;
  const std::vector<ModelStack>* class_aes = nullptr;
};

inline QueryMetrics query_metrics(const ExplanationRecord& e, const DatasetSchema& schema, const MetricModels& mm) {
  QueryMetrics q;
  q[0] = sparsity(e.x0, e.x_cfe, schema);
  q[1] = cat_proximity(e.x0, e.x_cfe, schema);
  q[2] = cont_proximity(e.x0, e.x_cfe, *mm.scaler);
  const RecordCodec codec{*mm.scaler, mm.ae_x->tables};
  const Vector x = codec.encode(e.x_cfe);
  const Vector r_t = reconstruct((*mm.class_aes).at(static_cast<std::size_t>(e.target)), x);
  const Vector r_t0 = reconstruct((*mm.class_aes).at(static_cast<std::size_t>(e.origin)), x);
  q[3] = im1(x, r_t, r_t0);
  q[4] = im2(x, r_t, reconstruct(*mm.ae_x, x));
  return q;
}

// Metrics over converged records; none converged leaves every summary absent.
inline FrameworkResult evaluate_records(std::span<const ExplanationRecord> records, const DatasetSchema& schema,
                                        const MetricModels& mm) {
  FrameworkResult res;
  for (const ExplanationRecord& e : records) {
    if (e.converged) res.queries.push_back(query_metrics(e, schema, mm));
  }
  if (!res.queries.empty()) res.summary = aggregate(res.queries);
  return res;
}

// ---------------------------------------------------------------------------
// Latent scatter export.

struct ScatterExport {
  Matrix points;  // rows x 2 latent coordinates
  std::vector<int> true_class;
  std::vector<int> predicted_class;
  Vector grid_x;     // resolution lattice values
  Vector grid_y;
  Matrix grid_probs; // resolution^2 x classes, x varies fastest
};

// Semi-supervised stacks colour the lattice with their own head; other
// stacks pass the classifier applied to the decoded lattice point.
inline ScatterExport export_latent_scatter(const ModelStack& stack, const Classifier* h, const Matrix& dense,
                                           std::span<const int> labels, std::size_t resolution) {
  if (stack.latent_dim != 2) {
    throw UnsupportedDimension("latent scatter needs latent dimension 2, got " + std::to_string(stack.latent_dim));
  }
  if (!stack.head && !h) throw RejectedInput("scatter needs a classifier for an unsupervised stack");
  if (resolution < 2) throw RejectedInput("scatter resolution must be >= 2");
  if (dense.rows() == 0) throw EmptyDataset("scatter needs at least one row");
  ScatterExport s;
  s.points = predict(stack.encoder, dense);
  const Matrix probs = stack.head ? predict(*stack.head, s.points) : predict_proba(*h, dense);
  s.true_class.assign(labels.begin(), labels.end());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) s.predicted_class.push_back(argmax(Vector(probs.row(r).transpose())));

  const auto n = static_cast<Eigen::Index>(resolution);
  const auto axis = [&](Eigen::Index col) {
    const double lo = s.points.col(col).minCoeff();
    const double hi = s.points.col(col).maxCoeff();
    const double margin = 0.1 * (hi > lo ? hi - lo : 1.0);
    return Vector(Vector::LinSpaced(n, lo - margin, hi + margin));
  };
  s.grid_x = axis(0);
  s.grid_y = axis(1);
  Matrix lattice(n * n, 2);
  for (Eigen::Index iy = 0; iy < n; ++iy) {
    for (Eigen::Index ix = 0; ix < n; ++ix) lattice.row(iy * n + ix) << s.grid_x[ix], s.grid_y[iy];
  }
  s.grid_probs = stack.head ? predict(*stack.head, lattice) : predict_proba(*h, predict(stack.decoder, lattice));
  return s;
}

inline std::string emit_scatter_points(const ScatterExport& s, const DatasetSchema& schema) {
  std::ostringstream out;
  out << "z0\tz1\ttrue_class\tpredicted_class\n";
  for (Eigen::Index r = 0; r < s.points.rows(); ++r) {
    out << format_double(s.points(r, 0)) << '\t' << format_double(s.points(r, 1)) << '\t'
        << schema.target.classes.at(static_cast<std::size_t>(s.true_class[static_cast<std::size_t>(r)])) << '\t'
        << schema.target.classes.at(static_cast<std::size_t>(s.predicted_class[static_cast<std::size_t>(r)])) << '\n';
  }
  return out.str();
}

inline std::string emit_scatter_grid(const ScatterExport& s, const DatasetSchema& schema) {
  std::ostringstream out;
  out << "z0\tz1";
  for (const std::string& c : schema.target.classes) out << "\tp_" << c;
  out << '\n';
  const Eigen::Index n = s.grid_x.size();
  for (Eigen::Index iy = 0; iy < n; ++iy) {
    for (Eigen::Index ix = 0; ix < n; ++ix) {
      out << format_double(s.grid_x[ix]) << '\t' << format_double(s.grid_y[iy]);
      for (Eigen::Index c = 0; c < s.grid_probs.cols(); ++c) out << '\t' << format_double(s.grid_probs(iy * n + ix, c));
      out << '\n';
    }
  }
  return out.str();
}

// Fraction of lattice cells whose top class probability exceeds `level`.
inline double confident_fraction(const ScatterExport& s, double level = 0.9) {
  std::size_t hits = 0;
  for (Eigen::Index r = 0; r < s.grid_probs.rows(); ++r) {
    if (s.grid_probs.row(r).maxCoeff() > level) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(s.grid_probs.rows());
}

// Mean pairwise distance between class centroids of the latent encodings,
// divided by the root-mean-square distance of rows to their class centroid.
inline double centroid_separation(const Matrix& latents, std::span<const int> labels, int num_classes) {
  std::vector<Vector> centroids(static_cast<std::size_t>(num_classes), Vector::Zero(latents.cols()));
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (Eigen::Index r = 0; r < latents.rows(); ++r) {
    const auto c = static_cast<std::size_t>(labels[static_cast<std::size_t>(r)]);
    centroids[c] += latents.row(r).transpose();
    ++counts[c];
  }
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    if (counts[c] == 0) throw EmptyDataset("class without rows in centroid_separation");
    centroids[c] /= static_cast<double>(counts[c]);
  }
  double within = 0.0;
  for (Eigen::Index r = 0; r < latents.rows(); ++r) {
    within += (latents.row(r).transpose() - centroids[static_cast<std::size_t>(labels[static_cast<std::size_t>(r)])])
                  .squaredNorm();
  }
  within = std::sqrt(within / static_cast<double>(latents.rows()));
  double between = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < centroids.size(); ++a) {
    for (std::size_t b = a + 1; b < centroids.size(); ++b, ++pairs) between += (centroids[a] - centroids[b]).norm();
  }
  between /= static_cast<double>(pairs);
  return within > 0.0 ? between / within : std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------
// Persistence of a trained experiment.

// Config is stored without its output directory.
inline Json preprocess_to_json(const ExperimentConfig& cfg, const PreparedData& p) {
  Json config = to_json(cfg);
  config.erase("output_dir");
  return {{"format", "cfproto.preprocess"},
          {"version", kCheckpointVersion},
          {"config", config},
          {"schema", to_json(p.data.schema)},
          {"schema_fingerprint", schema_fingerprint(p.data.schema)},
          {"rows", p.data.rows()},
          {"split", {{"train", p.split.train}, {"test", p.split.test}}},
          {"scaler", to_json(p.scaler)}};
}

inline void write_models(OutputTracker& out, const TrainedModels& m) {
  write_json(out.path("checkpoints/ae_x.json").string(), to_json(m.ae_x));
  write_json(out.path("checkpoints/ae_d.json").string(), to_json(m.ae_d));
  write_json(out.path("checkpoints/classifier.json").string(), to_json(m.h));
  for (std::size_t c = 0; c < m.class_aes.size(); ++c) {
    write_json(out.path("checkpoints/class_ae_" + std::to_string(c) + ".json").string(), to_json(m.class_aes[c]));
  }
}

inline TrainedModels read_models(const fs::path& dir, std::size_t num_classes) {
  TrainedModels m;
  m.ae_x = model_stack_from_json(read_json((dir / "checkpoints/ae_x.json").string()));
  m.ae_d = model_stack_from_json(read_json((dir / "checkpoints/ae_d.json").string()));
  m.h = classifier_from_json(read_json((dir / "checkpoints/classifier.json").string()));
  for (std::size_t c = 0; c < num_classes; ++c) {
    m.class_aes.push_back(
        model_stack_from_json(read_json((dir / ("checkpoints/class_ae_" + std::to_string(c) + ".json")).string())));
  }
  return m;
}

// Reloads data and models written by a previous `train` into `dir`.
struct LoadedExperiment {
  PreparedData prepared;
  TrainedModels models;
};

inline LoadedExperiment load_experiment(const ExperimentConfig& cfg, const fs::path& dir) {
  const Json pre = read_json((dir / "preprocess.json").string());
  detail::check_header(pre, "cfproto.preprocess");
  LoadedExperiment le;
  PreparedData& p = le.prepared;
  p.data = load_experiment_data(cfg);
  if (schema_fingerprint(p.data.schema) != pre.at("schema_fingerprint").get<std::string>() ||
      p.data.rows() != pre.at("rows").get<std::size_t>()) {
    throw SchemaViolation("dataset does not match the trained experiment in " + dir.string());
  }
  p.split.train = pre.at("split").at("train").get<std::vector<std::size_t>>();
  p.split.test = pre.at("split").at("test").get<std::vector<std::size_t>>();
  p.scaler = scaler_from_json(pre.at("scaler"));
  p.train = labeled_batch(p.data, p.scaler, p.split.train);
  p.test = labeled_batch(p.data, p.scaler, p.split.test);
  le.models = read_models(dir, p.data.schema.num_classes());
  return le;
}

// ---------------------------------------------------------------------------
// Stages.

inline std::vector<std::string> ordered_frameworks(const std::vector<std::string>& fws) {
  std::vector<std::string> out;
  for (const char* f : {"ss", "u"}) {
    if (std::find(fws.begin(), fws.end(), f) != fws.end()) out.emplace_back(f);
  }
  return out;
}

inline std::string framework_label(const std::string& f) { return f == "ss" ? "SS" : "U"; }

// Trains every model family and writes preprocess.json and checkpoints.
inline LoadedExperiment stage_train(const ExperimentConfig& cfg, OutputTracker& out) {
  LoadedExperiment le;
  le.prepared = run_stage("preprocess", [&] { return prepare_data(load_experiment_data(cfg), cfg.train_fraction, cfg.seed); });
  le.models = run_stage("train", [&] { return train_models(cfg, le.prepared); });
  run_stage("write", [&] {
    write_json(out.path("preprocess.json").string(), preprocess_to_json(cfg, le.prepared));
    write_models(out, le.models);
  });
  return le;
}

// Samples queries and writes explanations_<fw>.jsonl for each framework.
inline void stage_explain(const ExperimentConfig& cfg, const LoadedExperiment& le, OutputTracker& out) {
  const PreparedData& p = le.prepared;
  const std::vector<std::string> names = ordered_frameworks(cfg.frameworks);
  std::vector<Framework> fws;
  for (const std::string& n : names) fws.push_back(make_framework(n, le.models, p, cfg));
  const int origin = run_stage("sample", [&] { return origin_class_index(cfg, p.data.schema); });
  const QuerySample qs = run_stage("sample", [&] {
    return sample_queries(eligible_rows(p, fws, origin), cfg.n_queries, derive_seed(cfg.seed, streams::kSampling));
  });
  if (qs.truncated) {
    std::cerr << "warning: " << cfg.name << ": only " << qs.available << " eligible queries, " << cfg.n_queries
              << " requested\n";
  }
  std::vector<std::string> texts;
  run_stage("explain", [&] {
    for (const Framework& f : fws) {
      const std::vector<CounterfactualResult> results = explain_queries(f, p.data, qs.rows, cfg.threads);
      std::vector<Json> records;
      for (std::size_t i = 0; i < results.size(); ++i) {
        records.push_back(explanation_to_json(results[i], i, qs.rows[i], f.name, p.data.schema));
      }
      texts.push_back(emit_jsonl(records));
    }
  });
  run_stage("write", [&] {
    const Json qdoc = {{"format", "cfproto.queries"},
                       {"version", kCheckpointVersion},
                       {"origin_class", origin_class_label(cfg, p.data.schema)},
                       {"rule", "uniform without replacement among test rows every selected framework's "
                                "classifier assigns to the origin class (\"*\": any class they agree on)"},
                       {"frameworks", names},
                       {"available", qs.available},
                       {"requested", cfg.n_queries},
                       {"rows", qs.rows}};
    write_json(out.path("queries.json").string(), qdoc);
    for (std::size_t i = 0; i < names.size(); ++i) {
      write_text(out.path("explanations_" + names[i] + ".jsonl"), texts[i]);
    }
  });
}

// One dataset's report row plus its metadata entry.
struct EvaluatedDataset {
  DatasetRow row;
  Json metadata;
};

// Metrics for the explanation files present in `dir`.
inline EvaluatedDataset stage_evaluate(const ExperimentConfig& cfg, const LoadedExperiment& le, const fs::path& dir) {
  return run_stage("evaluate", [&] {
    const PreparedData& p = le.prepared;
    const MetricModels mm{&p.scaler, &le.models.ae_x, &le.models.class_aes};
    EvaluatedDataset ev{DatasetRow{cfg.name, {}}, Json::object()};
    Json counts = Json::object();
    for (const std::string& f : ordered_frameworks(cfg.frameworks)) {
      const fs::path path = dir / ("explanations_" + f + ".jsonl");
      const std::vector<ExplanationRecord> recs = read_explanations(path, p.data.schema);
      const auto converged = static_cast<std::size_t>(
          std::count_if(recs.begin(), recs.end(), [](const ExplanationRecord& e) { return e.converged; }));
      counts[framework_label(f)] = {{"queries", recs.size()}, {"converged", converged}};
      ev.row.frameworks[framework_label(f)] = evaluate_records(recs, p.data.schema, mm);
    }
    ev.metadata = {{"seed", cfg.seed},
                   {"origin_class", origin_class_label(cfg, p.data.schema)},
                   {"query_rule", "uniform without replacement among test rows all frameworks classify as the "
                                  "origin class (\"*\": any class both agree on)"},
                   {"frameworks", counts},
                   {"test_accuracy",
                    {{"SS", le.models.ae_d.report.test_accuracy.value_or(-1.0)},
                     {"U", le.models.h.report.test_accuracy.value_or(-1.0)}}}};
    return ev;
  });
}

inline Json report_metadata_common() {
  return {{"stdev", "sample (n - 1); population stdev in the per-metric summary"},
          {"metrics_over", "converged counterfactuals only"},
          {"sparsity_tolerance", kContinuousTolerance}};
}

inline void write_report(OutputTracker& out, const MetricsReport& report, const std::string& stem = "metrics") {
  write_text(out.path(stem + ".tsv"), emit_table(report));
  write_text(out.path(stem + ".json"), to_json(report).dump(1) + "\n");
}

// Writes scatter files for every selected framework with a 2-D latent.
inline std::size_t stage_scatter(const ExperimentConfig& cfg, const LoadedExperiment& le, OutputTracker& out,
                                 bool require = true) {
  return run_stage("scatter", [&] {
    const PreparedData& p = le.prepared;
    std::size_t written = 0;
    for (const std::string& f : ordered_frameworks(cfg.frameworks)) {
      const ModelStack& stack = f == "ss" ? le.models.ae_d : le.models.ae_x;
      if (stack.latent_dim != 2 && !require) continue;
      const Matrix dense = embed_encode(p.test.features, stack.tables);
      const ScatterExport s = export_latent_scatter(stack, f == "ss" ? nullptr : &le.models.h, dense,
                                                    p.test.labels, cfg.scatter_resolution);
      write_text(out.path("scatter_" + f + "_points.tsv"), emit_scatter_points(s, p.data.schema));
      write_text(out.path("scatter_" + f + "_grid.tsv"), emit_scatter_grid(s, p.data.schema));
      ++written;
    }
    return written;
  });
}

inline MetricsReport make_report(std::span<const EvaluatedDataset> datasets) {
  MetricsReport r;
  r.metadata = report_metadata_common();
  r.metadata["datasets"] = Json::object();
  for (const EvaluatedDataset& d : datasets) {
    r.rows.push_back(d.row);
    r.metadata["datasets"][d.row.dataset] = d.metadata;
  }
  return r;
}

// Full pipeline for one config into cfg.output_dir. Partial outputs are
// removed when a stage fails.
inline EvaluatedDataset run_experiment(const ExperimentConfig& cfg) {
  run_stage("config", [&] { cfg.validate(); });
  OutputTracker out(cfg.output_dir);
  const LoadedExperiment le = stage_train(cfg, out);
  stage_explain(cfg, le, out);
  EvaluatedDataset ev = stage_evaluate(cfg, le, out.dir());
  run_stage("write", [&] { write_report(out, make_report(std::span<const EvaluatedDataset>(&ev, 1))); });
  stage_scatter(cfg, le, out, false);
  out.commit();
  return ev;
}

}  // namespace cfproto
