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

#include "cfproto/models.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "cfproto/synthetic.hpp"
#include "oracles.hpp"

namespace cfproto {
namespace {

struct Split {
  DatasetSchema schema;
  LabeledBatch train;
  LabeledBatch test;
};

LabeledBatch rows_of(const Dataset& ds, const FeatureScaler& sc, const std::vector<std::size_t>& rows) {
  LabeledBatch b{make_batch(ds, sc, rows), {}};
  for (std::size_t r : rows) b.labels.push_back(ds.labels[r]);
  return b;
}

Split prepare(const Dataset& ds, std::uint64_t seed) {
  const SplitIndices s = split(ds.labels, 0.8, seed);
  const FeatureScaler sc = fit_scaler(ds, s.train);
  return {ds.schema, rows_of(ds, sc, s.train), rows_of(ds, sc, s.test)};
}

Architecture small_arch() {
  Architecture a;
  a.encoder = {8, 2};
  a.classifier = {2};
  a.decoder = {8, 6};
  return a;
}

TrainConfig quick_config(std::size_t epochs, std::uint64_t seed) {
  TrainConfig c;
  c.epochs = epochs;
  c.seed = seed;
  return c;
}

TEST(CrossEntropyTest, ClosedForms) {
  Matrix onehot(2, 2);
  onehot << 1.0, 0.0, 0.0, 1.0;
  EXPECT_EQ(cross_entropy(onehot, std::vector<int>{0, 1}), 0.0);
  const Matrix uniform = Matrix::Constant(3, 2, 0.5);
  EXPECT_NEAR(cross_entropy(uniform, std::vector<int>{0, 1, 1}), std::log(2.0), 1e-15);
  EXPECT_NEAR(cross_entropy(onehot, std::vector<int>{1, 1}), -0.5 * std::log(1e-12), 1e-9);
}

TEST(CrossEntropyTest, MatchesHandSummation) {
  Rng rng(3);
  Matrix p = oracle::random_matrix(rng, 5, 3, 0.05, 1.0);
  for (Eigen::Index r = 0; r < 5; ++r) p.row(r) /= p.row(r).sum();
  const std::vector<int> y = {2, 0, 1, 1, 2};
  double want = 0.0;
  for (int r = 0; r < 5; ++r) want += -std::log(p(r, y[static_cast<std::size_t>(r)]));
  EXPECT_NEAR(cross_entropy(p, y), want / 5.0, 1e-12);
}

TEST(ReconstructionLossTest, Examples) {
  Matrix x(1, 2), r(1, 2);
  x << 3.0, 4.0;
  r << 0.0, 0.0;
  EXPECT_EQ(reconstruction_loss(x, x), 0.0);
  EXPECT_NEAR(reconstruction_loss(x, r), std::sqrt(25.0 / 2.0), 1e-15);
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    EXPECT_GE(reconstruction_loss(oracle::random_matrix(rng, 4, 3), oracle::random_matrix(rng, 4, 3)), 0.0);
  }
  EXPECT_THROW(reconstruction_loss(x, Matrix::Zero(2, 2)), RejectedInput);
}

TEST(ArgmaxTest, TieRuleAndScan) {
  EXPECT_EQ(argmax(std::vector<double>{0.5, 0.5}), 0);
  EXPECT_EQ(argmax(std::vector<double>{0.0, 1.0, 0.0}), 1);
  Rng rng(77);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> v(1 + rng.below(6));
    for (double& x : v) x = std::round(rng.uniform() * 8.0) / 8.0;
    int want = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] > v[static_cast<std::size_t>(want)]) want = static_cast<int>(i);
    }
    EXPECT_EQ(argmax(v), want);
  }
}

TEST(ArchitectureTest, LatentMustBeUndercomplete) {
  Architecture a = small_arch();
  EXPECT_THROW(make_encoder(2, a, 0), RejectedInput);
  EXPECT_NO_THROW(make_encoder(3, a, 0));
}

TEST(TrainingTest, ZeroEpochsKeepsInitialisation) {
  const Split s = prepare(planted_blobs(40, 2, 2, 4, 5), 1);
  const ModelStack m = train_joint(s.schema, s.train, small_arch(), quick_config(0, 4));
  EXPECT_TRUE(m.report.epochs.empty());
  const DenseNetwork fresh = make_encoder(6, small_arch(), derive_seed(4, streams::kEncoderInit));
  EXPECT_TRUE(m.encoder.layers[0].weights == fresh.layers[0].weights);
}

TEST(TrainingTest, JointLossIsWeightedSumEachEpoch) {
  const Split s = prepare(planted_blobs(100, 2, 2, 4, 5, 5.0), 2);
  TrainConfig cfg = quick_config(10, 9);
  cfg.w1 = 0.7;
  cfg.w2 = 1.3;
  const ModelStack m = train_joint(s.schema, s.train, small_arch(), cfg);
  ASSERT_EQ(m.report.epochs.size(), 10u);
  for (const EpochLosses& l : m.report.epochs) {
    EXPECT_NEAR(l.joint, 0.7 * l.entropy + 1.3 * l.reconstruction, 1e-9);
  }
  EXPECT_LT(m.report.epochs.back().joint, m.report.initial.joint);
}

TEST(TrainingTest, SameSeedIsBitIdentical) {
  const Split s = prepare(planted_blobs(60, 2, 2, 4, 5, 5.0), 2);
  const ModelStack a = train_joint(s.schema, s.train, small_arch(), quick_config(5, 3));
  const ModelStack b = train_joint(s.schema, s.train, small_arch(), quick_config(5, 3));
  for (std::size_t i = 0; i < a.encoder.layers.size(); ++i) {
    EXPECT_TRUE(a.encoder.layers[i].weights == b.encoder.layers[i].weights);
  }
  EXPECT_TRUE(a.head->layers[0].weights == b.head->layers[0].weights);
}

TEST(TrainingTest, ZeroClassifierWeightEqualsUnsupervised) {
  const Split s = prepare(planted_blobs(60, 2, 2, 4, 5, 5.0), 2);
  TrainConfig cfg = quick_config(6, 21);
  cfg.w1 = 0.0;
  const ModelStack joint = train_joint(s.schema, s.train, small_arch(), cfg);
  const ModelStack plain = train_unsupervised(s.schema, s.train, small_arch(), cfg);
  std::vector<double> a, b;
  append_blocks(a, parameter_blocks(const_cast<DenseNetwork&>(joint.encoder)));
  append_blocks(a, parameter_blocks(const_cast<DenseNetwork&>(joint.decoder)));
  append_blocks(b, parameter_blocks(const_cast<DenseNetwork&>(plain.encoder)));
  append_blocks(b, parameter_blocks(const_cast<DenseNetwork&>(plain.decoder)));
  EXPECT_EQ(a, b);
}

TEST(TrainingTest, ZeroReconstructionWeightEqualsClassifierAlone) {
  const Split s = prepare(planted_blobs(60, 2, 2, 4, 5, 5.0), 2);
  TrainConfig cfg = quick_config(6, 22);
  cfg.w2 = 0.0;
  const ModelStack joint = train_joint(s.schema, s.train, small_arch(), cfg);
  const Classifier alone = train_classifier(s.schema, s.train, small_arch(), cfg);
  for (std::size_t i = 0; i < joint.encoder.layers.size(); ++i) {
    EXPECT_TRUE(joint.encoder.layers[i].weights == alone.body.layers[i].weights);
  }
  EXPECT_TRUE(joint.head->layers[0].weights == alone.head.layers[0].weights);
}

TEST(TrainingTest, BothWeightsZeroIsRejected) {
  const Split s = prepare(two_gaussians(20, 2), 1);
  TrainConfig cfg = quick_config(1, 0);
  cfg.w1 = 0.0;
  cfg.w2 = 0.0;
  EXPECT_THROW(train_joint(s.schema, s.train, small_arch(), cfg), InvalidConfig);
}

TEST(TrainingTest, PlantedSubspaceIsReconstructed) {
  // Six coordinates driven by two latent factors.
  Rng rng(13);
  Matrix mix = oracle::random_matrix(rng, 2, 6, -1.0, 1.0);
  Dataset ds;
  ds.schema = continuous_schema("subspace", 6, 2);
  ds.values.resize(400, 6);
  for (Eigen::Index r = 0; r < 400; ++r) {
    const Vector f = oracle::random_vector(rng, 2, 0.0, 1.0);
    ds.values.row(r) = f.transpose() * mix;
    ds.labels.push_back(static_cast<int>(r % 2));
  }
  const Split s = prepare(ds, 3);
  Architecture a;
  a.encoder = {16, 2};
  a.decoder = {16, 6};
  a.batchnorm = false;
  a.latent_activation = Activation::kLinear;
  a.output_activation = Activation::kLinear;
  const ModelStack m = train_unsupervised(s.schema, s.train, a, quick_config(300, 5), nullptr, &s.test);
  ASSERT_TRUE(m.report.test_reconstruction.has_value());
  EXPECT_LT(*m.report.test_reconstruction, 0.05);
}

TEST(TrainingTest, JointBlobsSeparateInLatentSpace) {
  const Split s = prepare(planted_blobs(200, 2, 2, 4, 7, 5.0), 4);
  const ModelStack m = train_joint(s.schema, s.train, small_arch(), quick_config(40, 8), nullptr, &s.test);
  ASSERT_TRUE(m.report.test_accuracy.has_value());
  EXPECT_GE(*m.report.test_accuracy, 0.95);
  const Matrix z = encode(m, dense_input(m, s.test.features));
  Vector c[2] = {Vector::Zero(2), Vector::Zero(2)};
  double n[2] = {0, 0};
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const int y = s.test.labels[static_cast<std::size_t>(r)];
    c[y] += z.row(r).transpose();
    n[y] += 1;
  }
  c[0] /= n[0];
  c[1] /= n[1];
  double radius = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    radius += (z.row(r).transpose() - c[s.test.labels[static_cast<std::size_t>(r)]]).norm();
  }
  radius /= static_cast<double>(z.rows());
  EXPECT_GT((c[0] - c[1]).norm(), 2.0 * radius);
}

TEST(ClassAeTest, IdenticalRowsReconstructAlmostExactly) {
  Rng rng(5);
  Dataset ds;
  ds.schema = continuous_schema("flat", 4, 2);
  ds.values.resize(80, 4);
  for (Eigen::Index r = 0; r < 80; ++r) {
    if (r < 40) ds.values.row(r) << 1.0, 2.0, 5.0, -1.0;
    else ds.values.row(r) = oracle::random_vector(rng, 4, -3.0, 6.0).transpose();
    ds.labels.push_back(r < 40 ? 0 : 1);
  }
  std::vector<std::size_t> all(80);
  for (std::size_t i = 0; i < 80; ++i) all[i] = i;
  const LabeledBatch b = rows_of(ds, fit_scaler(ds, all), all);
  Architecture a;
  a.encoder = {4, 1};
  a.decoder = {4, 4};
  a.batchnorm = false;
  a.output_activation = Activation::kLinear;
  const ModelStack m = train_class_ae(ds.schema, b, 0, a, quick_config(300, 3));
  EXPECT_LT(m.report.epochs.back().reconstruction, 1e-2);
}

TEST(ClassAeTest, PrefersItsOwnClass) {
  const Split s = prepare(planted_blobs(200, 2, 2, 4, 17, 5.0, 0.5, 0.5), 6);
  Architecture a = small_arch();
  a.encoder = {8, 2};
  a.decoder = {8, 6};
  const ModelStack ae0 = train_class_ae(s.schema, s.train, 0, a, quick_config(60, 4));
  double own = 0.0, other = 0.0;
  std::size_t n_own = 0, n_other = 0;
  const Matrix x = dense_input(ae0, s.test.features);
  const Matrix r = reconstruct(ae0, x);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double e = (x.row(i) - r.row(i)).squaredNorm();
    if (s.test.labels[static_cast<std::size_t>(i)] == 0) {
      own += e;
      ++n_own;
    } else {
      other += e;
      ++n_other;
    }
  }
  EXPECT_LT(own / static_cast<double>(n_own), other / static_cast<double>(n_other));
}

TEST(ClassAeTest, EmptyClassIsRejected) {
  const Split s = prepare(two_gaussians(20, 2), 1);
  LabeledBatch only0 = s.train;
  for (int& y : only0.labels) y = 0;
  EXPECT_THROW(train_class_ae(s.schema, only0, 1, small_arch(), quick_config(1, 0)), EmptyDataset);
}

// Joint objective with the reconstruction target held fixed, as a function
// of every parameter including the embedding tables.
double joint_objective(const DenseNetwork& enc, const DenseNetwork& dec, const DenseNetwork& head,
                       const EmbeddingTables& tables, const LabeledBatch& b, const Matrix& target, double w1,
                       double w2) {
  const Matrix x = embed_encode(b.features, tables);
  const Matrix z = forward(enc, x, Mode::kTraining).output();
  return w1 * cross_entropy(forward(head, z, Mode::kTraining).output(), b.labels) +
         w2 * reconstruction_loss(target, forward(dec, z, Mode::kTraining).output());
}

TEST(JointGradientTest, MatchesFiniteDifferencesOnTinyStack) {
  DatasetSchema schema;
  schema.name = "tiny";
  schema.features = {{"a", FeatureKind::kContinuous, {}},
                     {"b", FeatureKind::kContinuous, {}},
                     {"k", FeatureKind::kCategorical, {"p", "q", "r", "s"}}};
  schema.target = {"y", {"n", "y"}};
  Rng rng(99);
  Architecture arch;
  arch.encoder = {5, 2};
  arch.classifier = {3, 2};
  arch.decoder = {5, 4};
  arch.latent_activation = Activation::kLinear;
  arch.output_activation = Activation::kLinear;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    EmbeddingTables tables = make_tables(schema, static_cast<std::uint64_t>(trial));
    ASSERT_EQ(dense_dim(2, tables), 4u);
    DenseNetwork enc = make_encoder(4, arch, static_cast<std::uint64_t>(100 + trial));
    DenseNetwork dec = make_decoder(4, arch, static_cast<std::uint64_t>(200 + trial));
    DenseNetwork head = make_head(2, arch, static_cast<std::uint64_t>(300 + trial));
    for (DenseNetwork* n : {&enc, &dec, &head}) {
      oracle::perturb_batchnorm(*n, rng);
      for (Layer& l : n->layers) l.bias = oracle::random_vector(rng, l.bias.size(), -0.3, 0.3);
    }
    LabeledBatch b;
    b.features.continuous = oracle::random_matrix(rng, 6, 2, 0.0, 1.0);
    for (int r = 0; r < 6; ++r) {
      b.features.levels.push_back({static_cast<int>(rng.below(4))});
      b.labels.push_back(static_cast<int>(rng.below(2)));
    }
    const double w1 = rng.uniform(0.2, 2.0), w2 = rng.uniform(0.2, 2.0);
    JointPass pass = joint_pass(enc, &dec, &head, tables, b, w1, w2, Mode::kTraining);
    TrainableSet set{&enc, &dec, &head, &tables};
    const std::vector<double> analytic = set.gradient(pass);
    const Matrix target = embed_encode(b.features, tables);
    const auto f = [&] { return joint_objective(enc, dec, head, tables, b, target, w1, w2); };
    EXPECT_NEAR(f(), pass.loss.joint, 1e-12);
    std::size_t k = 0;
    for (const auto& block : set.blocks()) {
      for (double& v : block) worst = std::max(worst, oracle::rel_err(analytic[k++], oracle::central_difference(f, v)));
    }
    EXPECT_EQ(k, analytic.size());
  }
  EXPECT_LT(worst, 1e-4);
}

}  // namespace
}  // namespace cfproto
