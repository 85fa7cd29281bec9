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

// Checkpoints are JSON documents with named fields. Matrices are stored as
// {"rows", "cols", "data"} with data in row-major order. Doubles are written
// in shortest round-trip form, so save/load is bit-exact for finite values.

#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "cfproto/catembed.hpp"
#include "cfproto/dataio.hpp"
#include "cfproto/error.hpp"
#include "cfproto/models.hpp"
#include "cfproto/ndkernel.hpp"

namespace cfproto {

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline Json matrix_to_json(const Matrix& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix matrix_from_json(const Json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw RejectedInput("matrix payload has wrong element count");
  }
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  }
  return m;
}

inline Json vector_to_json(const Vector& v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Vector vector_from_json(const Json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

inline void check_header(const Json& j, const std::string& format) {
  if (j.value("format", std::string{}) != format) {
    throw RejectedInput("expected a '" + format + "' document");
  }
  if (j.value("version", 0) != kCheckpointVersion) {
    throw RejectedInput("unsupported " + format + " version " + std::to_string(j.value("version", 0)));
  }
}

}  // namespace detail

inline Json to_json(const DenseNetwork& net) {
  Json layers = Json::array();
  for (const Layer& l : net.layers) {
    Json jl = {{"in", l.in_dim()},
               {"out", l.out_dim()},
               {"activation", std::string(to_string(l.activation))},
               {"weights", detail::matrix_to_json(l.weights)},
               {"bias", detail::vector_to_json(l.bias)}};
    if (l.batchnorm) {
      const BatchNorm& bn = *l.batchnorm;
      jl["batchnorm"] = {{"gamma", detail::vector_to_json(bn.gamma)},
                         {"beta", detail::vector_to_json(bn.beta)},
                         {"running_mean", detail::vector_to_json(bn.running_mean)},
                         {"running_var", detail::vector_to_json(bn.running_var)},
                         {"momentum", bn.momentum},
                         {"epsilon", bn.epsilon},
                         {"updates", bn.updates}};
    } else {
      jl["batchnorm"] = nullptr;
    }
    layers.push_back(std::move(jl));
  }
  return Json{{"format", "cfproto.network"},
              {"version", kCheckpointVersion},
              {"seed", net.seed},
              {"layers", std::move(layers)}};
}

inline DenseNetwork network_from_json(const Json& j) {
  detail::check_header(j, "cfproto.network");
  DenseNetwork net;
  try {
    net.seed = j.at("seed").get<std::uint64_t>();
    for (const Json& jl : j.at("layers")) {
      Layer l;
      l.weights = detail::matrix_from_json(jl.at("weights"));
      l.bias = detail::vector_from_json(jl.at("bias"));
      l.activation = activation_from_string(jl.at("activation").get<std::string>());
      if (!jl.at("batchnorm").is_null()) {
        const Json& b = jl.at("batchnorm");
        BatchNorm bn;
        bn.gamma = detail::vector_from_json(b.at("gamma"));
        bn.beta = detail::vector_from_json(b.at("beta"));
        bn.running_mean = detail::vector_from_json(b.at("running_mean"));
        bn.running_var = detail::vector_from_json(b.at("running_var"));
        bn.momentum = b.at("momentum").get<double>();
        bn.epsilon = b.at("epsilon").get<double>();
        bn.updates = b.at("updates").get<std::uint64_t>();
        l.batchnorm = std::move(bn);
      }
      net.layers.push_back(std::move(l));
    }
  } catch (const Json::exception& e) {
    throw RejectedInput(std::string("malformed network document: ") + e.what());
  }
  validate(net);
  return net;
}

inline Json to_json(const EmbeddingTables& tables) {
  Json out = Json::array();
  for (const EmbeddingTable& t : tables) {
    out.push_back({{"levels", t.levels}, {"dim", t.dim()}, {"matrix", detail::matrix_to_json(t.matrix)}});
  }
  return out;
}

inline EmbeddingTables tables_from_json(const Json& j) {
  EmbeddingTables tables;
  for (const Json& jt : j) {
    EmbeddingTable t;
    t.levels = jt.at("levels").get<std::vector<std::string>>();
    t.matrix = detail::matrix_from_json(jt.at("matrix"));
    if (t.cardinality() != t.levels.size() || t.dim() != jt.at("dim").get<std::size_t>()) {
      throw RejectedInput("embedding table shape does not match its vocabulary");
    }
    tables.push_back(std::move(t));
  }
  return tables;
}

inline Json to_json(const TrainConfig& c) {
  return Json{{"w1", c.w1},
              {"w2", c.w2},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"full_batch_below", c.full_batch_below},
              {"seed", c.seed},
              {"adam",
               {{"learning_rate", c.adam.learning_rate},
                {"beta1", c.adam.beta1},
                {"beta2", c.adam.beta2},
                {"epsilon", c.adam.epsilon}}}};
}

inline TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  c.w1 = j.value("w1", c.w1);
  c.w2 = j.value("w2", c.w2);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.full_batch_below = j.value("full_batch_below", c.full_batch_below);
  c.seed = j.value("seed", c.seed);
  if (j.contains("adam")) {
    const Json& a = j.at("adam");
    c.adam.learning_rate = a.value("learning_rate", c.adam.learning_rate);
    c.adam.beta1 = a.value("beta1", c.adam.beta1);
    c.adam.beta2 = a.value("beta2", c.adam.beta2);
    c.adam.epsilon = a.value("epsilon", c.adam.epsilon);
  }
  return c;
}

namespace detail {

inline Json losses_to_json(const EpochLosses& l) {
  return Json{{"entropy", l.entropy}, {"reconstruction", l.reconstruction}, {"joint", l.joint}};
}

inline EpochLosses losses_from_json(const Json& j) {
  return {j.at("entropy").get<double>(), j.at("reconstruction").get<double>(), j.at("joint").get<double>()};
}

}  // namespace detail

inline Json to_json(const TrainReport& r) {
  Json epochs = Json::array();
  for (const EpochLosses& l : r.epochs) epochs.push_back(detail::losses_to_json(l));
  Json j = {{"initial", detail::losses_to_json(r.initial)}, {"epochs", std::move(epochs)}};
  j["test_accuracy"] = r.test_accuracy ? Json(*r.test_accuracy) : Json(nullptr);
  j["test_reconstruction"] = r.test_reconstruction ? Json(*r.test_reconstruction) : Json(nullptr);
  return j;
}

inline TrainReport train_report_from_json(const Json& j) {
  TrainReport r;
  r.initial = detail::losses_from_json(j.at("initial"));
  for (const Json& e : j.at("epochs")) r.epochs.push_back(detail::losses_from_json(e));
  if (!j.at("test_accuracy").is_null()) r.test_accuracy = j.at("test_accuracy").get<double>();
  if (!j.at("test_reconstruction").is_null()) r.test_reconstruction = j.at("test_reconstruction").get<double>();
  return r;
}

inline Json to_json(const ModelStack& s) {
  Json j = {{"format", "cfproto.model_stack"},
            {"version", kCheckpointVersion},
            {"mode", std::string(to_string(s.mode))},
            {"latent_dim", s.latent_dim},
            {"num_continuous", s.num_continuous},
            {"schema_fingerprint", s.schema_fingerprint},
            {"encoder", to_json(s.encoder)},
            {"decoder", to_json(s.decoder)},
            {"embedding_tables", to_json(s.tables)},
            {"train_config", to_json(s.config)},
            {"train_report", to_json(s.report)}};
  j["classifier_head"] = s.head ? to_json(*s.head) : Json(nullptr);
  return j;
}

inline ModelStack model_stack_from_json(const Json& j) {
  detail::check_header(j, "cfproto.model_stack");
  ModelStack s;
  try {
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "unsupervised") s.mode = TrainingMode::kUnsupervised;
    else if (mode == "semi_supervised") s.mode = TrainingMode::kSemiSupervised;
    else throw RejectedInput("unknown training mode '" + mode + "'");
    s.latent_dim = j.at("latent_dim").get<std::size_t>();
    s.num_continuous = j.at("num_continuous").get<std::size_t>();
    s.schema_fingerprint = j.at("schema_fingerprint").get<std::string>();
    s.encoder = network_from_json(j.at("encoder"));
    s.decoder = network_from_json(j.at("decoder"));
    if (!j.at("classifier_head").is_null()) s.head = network_from_json(j.at("classifier_head"));
    s.tables = tables_from_json(j.at("embedding_tables"));
    s.config = train_config_from_json(j.at("train_config"));
    s.report = train_report_from_json(j.at("train_report"));
  } catch (const Json::exception& e) {
    throw RejectedInput(std::string("malformed model stack document: ") + e.what());
  }
  if (s.mode == TrainingMode::kUnsupervised && s.head) {
    throw RejectedInput("unsupervised stack must not carry a classifier head");
  }
  if (s.encoder.output_dim() != s.latent_dim || s.decoder.input_dim() != s.latent_dim) {
    throw RejectedInput("encoder/decoder widths do not match latent_dim");
  }
  return s;
}

inline Json to_json(const Classifier& c) {
  return Json{{"format", "cfproto.classifier"},
              {"version", kCheckpointVersion},
              {"num_continuous", c.num_continuous},
              {"schema_fingerprint", c.schema_fingerprint},
              {"body", to_json(c.body)},
              {"head", to_json(c.head)},
              {"embedding_tables", to_json(c.tables)},
              {"train_config", to_json(c.config)},
              {"train_report", to_json(c.report)}};
}

inline Classifier classifier_from_json(const Json& j) {
  detail::check_header(j, "cfproto.classifier");
  Classifier c;
  try {
    c.num_continuous = j.at("num_continuous").get<std::size_t>();
    c.schema_fingerprint = j.at("schema_fingerprint").get<std::string>();
    c.body = network_from_json(j.at("body"));
    c.head = network_from_json(j.at("head"));
    c.tables = tables_from_json(j.at("embedding_tables"));
    c.config = train_config_from_json(j.at("train_config"));
    c.report = train_report_from_json(j.at("train_report"));
  } catch (const Json::exception& e) {
    throw RejectedInput(std::string("malformed classifier document: ") + e.what());
  }
  return c;
}

inline void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << j.dump(1) << '\n';
  if (!out) throw Error("write to '" + path + "' failed");
}

inline Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  try {
    Json j;
    in >> j;
    return j;
  } catch (const Json::exception& e) {
    throw RejectedInput("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace cfproto
