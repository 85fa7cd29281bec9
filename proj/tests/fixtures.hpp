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

// Small trained and untrained problems shared by the unit and acceptance
// tests.

#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "cfproto/cfproto.hpp"
#include "oracles.hpp"

namespace cfproto::fixture {

// Two continuous features plus one four-level categorical: dense width 4.
inline DatasetSchema toy_schema() {
  DatasetSchema s;
  s.name = "toy";
  s.features = {{"a", FeatureKind::kContinuous, {}},
                {"b", FeatureKind::kContinuous, {}},
                {"k", FeatureKind::kCategorical, {"p", "q", "r", "s"}}};
  s.target = {"y", {"n", "y"}};
  return s;
}

inline Architecture toy_arch() {
  Architecture a;
  a.encoder = {6, 2};
  a.classifier = {4, 2};
  a.decoder = {6, 4};
  a.latent_activation = Activation::kLinear;
  return a;
}

// Randomly initialised networks for a dim-4 / latent-2 / 2-class search,
// with non-trivial biases and batch-norm statistics.
struct ToyNetworks {
  DenseNetwork encoder, decoder, body, head;

  SearchModels semi_supervised() const { return {&encoder, &decoder, &encoder, &head}; }
  SearchModels unsupervised() const { return {&encoder, &decoder, &body, &head}; }
};

inline ToyNetworks toy_networks(Rng& rng, std::uint64_t seed) {
  const Architecture a = toy_arch();
  ToyNetworks t{make_encoder(4, a, seed), make_decoder(4, a, seed + 1), make_encoder(4, a, seed + 2),
                make_head(2, a, seed + 3)};
  for (DenseNetwork* n : {&t.encoder, &t.decoder, &t.body, &t.head}) {
    oracle::perturb_batchnorm(*n, rng);
    for (Layer& l : n->layers) l.bias = oracle::random_vector(rng, l.bias.size(), -0.3, 0.3);
  }
  return t;
}

// A trained semi-supervised stack on an all-continuous dataset, with the
// pieces a search needs.
struct SearchProblem {
  PreparedData prepared;
  ModelStack stack;
  RecordCodec codec;
  std::vector<ClassLatents> classes;

  SearchModels models() const { return search_models(stack); }

  // Test rows the stack assigns to `origin`.
  std::vector<std::size_t> test_rows_predicted(int origin) const {
    std::vector<std::size_t> out;
    const SearchModels m = models();
    for (std::size_t r : prepared.split.test) {
      if (predicted_class(m, codec.encode(prepared.data.record(r))) == origin) out.push_back(r);
    }
    return out;
  }
};

inline SearchProblem search_problem(Dataset data, const Architecture& arch, std::size_t epochs,
                                    std::uint64_t seed) {
  SearchProblem p;
  p.prepared = prepare_data(std::move(data), 0.8, seed);
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = derive_seed(seed, streams::kModelAED);
  p.stack = train_joint(p.prepared.data.schema, p.prepared.train, arch, cfg, nullptr, &p.prepared.test);
  p.codec = RecordCodec{p.prepared.scaler, p.stack.tables};
  const Matrix dense = embed_encode(p.prepared.train.features, p.stack.tables);
  p.classes = class_latents(p.stack.encoder, dense, p.prepared.train.labels, p.prepared.split.train,
                            static_cast<int>(p.prepared.data.schema.num_classes()));
  return p;
}

// Two planar Gaussians separated along the second axis; one-dimensional
// latent space.
inline SearchProblem two_gaussian_problem(std::size_t n_per_class, std::uint64_t seed) {
  Architecture a;
  a.encoder = {8, 1};
  a.classifier = {2};
  a.decoder = {8, 2};
  a.latent_activation = Activation::kLinear;
  a.output_activation = Activation::kLinear;
  return search_problem(two_gaussians(n_per_class, seed), a, 60, seed);
}

}  // namespace cfproto::fixture
