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

#include "cfproto/cfsearch.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"

namespace cfproto {
namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

TEST(HingeTest, Examples) {
  EXPECT_EQ(hinge_pred_loss(vec({0.1, 0.9}), 0, 1, 0.0), 0.0);
  EXPECT_NEAR(hinge_pred_loss(vec({0.6, 0.4}), 0, 1, 0.1), 0.3, 1e-15);
  EXPECT_GT(hinge_pred_loss(vec({0.2, 0.8}), 0, 1, 1.0), 0.0);
  EXPECT_EQ(hinge_pred_loss(vec({0.0, 1.0}), 0, 1, 1.0), 0.0);
  EXPECT_THROW(hinge_pred_loss(vec({0.5, 0.5}), 0, 2, 0.0), RejectedInput);
}

TEST(HingeTest, ZeroExactlyWhenMarginHolds) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const double p = rng.uniform();
    const double kappa = rng.uniform(0.0, 0.5);
    const Vector probs = vec({p, 1.0 - p});
    EXPECT_EQ(hinge_pred_loss(probs, 0, 1, kappa) == 0.0, probs[1] >= probs[0] + kappa);
  }
}

TEST(ShrinkTest, SoftThresholdTowardCenter) {
  EXPECT_EQ(shrink(vec({0.05}), vec({0.0}), 0.1)[0], 0.0);
  EXPECT_NEAR(shrink(vec({0.3}), vec({0.0}), 0.1)[0], 0.2, 1e-15);
  EXPECT_NEAR(shrink(vec({-0.3}), vec({0.0}), 0.1)[0], -0.2, 1e-15);
  const Vector s = shrink(vec({0.55, 0.9, 0.1}), vec({0.5, 0.5, 0.5}), 0.1);
  EXPECT_EQ(s[0], 0.5);
  EXPECT_NEAR(s[1], 0.8, 1e-15);
  EXPECT_NEAR(s[2], 0.2, 1e-15);
}

TEST(ClampTest, Box) {
  const DenseBounds b{vec({0.0, -1.0}), vec({1.0, 1.0})};
  const Vector c = clamp(vec({1.5, -3.0}), b);
  EXPECT_EQ(c[0], 1.0);
  EXPECT_EQ(c[1], -1.0);
}

TEST(CompositeLossTest, ZeroPerturbationAndZeroWeights) {
  Rng rng(1);
  const fixture::ToyNetworks t = fixture::toy_networks(rng, 10);
  CfConfig cfg;
  cfg.gamma = 0.0;
  cfg.theta = 0.0;
  const Vector z0 = oracle::random_vector(rng, 4, 0.0, 1.0);
  const SearchTarget tgt{0, 1, Vector::Zero(2)};
  const LossEvaluation ev = composite_loss(z0, z0, tgt, t.semi_supervised(), cfg, 0.0);
  EXPECT_EQ(ev.components.total, 0.0);
  EXPECT_EQ(ev.smooth_grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(CompositeLossTest, PrototypeTermVanishesAtPrototype) {
  Rng rng(2);
  const fixture::ToyNetworks t = fixture::toy_networks(rng, 20);
  const Vector z = oracle::random_vector(rng, 4, 0.0, 1.0);
  const SearchTarget tgt{0, 1, predict_row(t.encoder, z)};
  const LossEvaluation ev = composite_loss(z, z, tgt, t.semi_supervised(), CfConfig{}, 1.0);
  EXPECT_EQ(ev.components.proto, 0.0);
}

TEST(CompositeLossTest, TotalIsWeightedSumOfComponents) {
  Rng rng(4);
  const fixture::ToyNetworks t = fixture::toy_networks(rng, 30);
  CfConfig cfg;
  cfg.beta = 0.3;
  cfg.gamma = 2.0;
  cfg.theta = 5.0;
  cfg.kappa = 0.2;
  const Vector z0 = oracle::random_vector(rng, 4, 0.0, 1.0);
  const Vector z = oracle::random_vector(rng, 4, 0.0, 1.0);
  const SearchTarget tgt{1, 0, oracle::random_vector(rng, 2)};
  const LossComponents lc = composite_loss(z, z0, tgt, t.unsupervised(), cfg, 3.0).components;
  EXPECT_NEAR(lc.total, 3.0 * lc.pred + 0.3 * lc.l1 + lc.l2 + 2.0 * lc.recon + 5.0 * lc.proto, 1e-12);
  EXPECT_NEAR(lc.l1, (z - z0).lpNorm<1>(), 1e-15);
  EXPECT_NEAR(lc.recon, (z - predict_row(t.decoder, predict_row(t.encoder, z))).squaredNorm(), 1e-12);
}

// Relative error between the analytic smooth gradient and central
// differences of total - beta * |delta|_1.
double smooth_gradient_error(const SearchModels& m, const Vector& z, const Vector& z0, const SearchTarget& tgt,
                             const CfConfig& cfg, double c) {
  const Vector g = composite_loss(z, z0, tgt, m, cfg, c).smooth_grad;
  Vector probe = z;
  const auto f = [&] {
    const LossComponents lc = composite_loss(probe, z0, tgt, m, cfg, c, false).components;
    return lc.total - cfg.beta * lc.l1;
  };
  double worst = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    worst = std::max(worst, oracle::rel_err(g[i], oracle::central_difference(f, probe[i])));
  }
  return worst;
}

TEST(CompositeLossTest, SmoothGradientMatchesFiniteDifferences) {
  Rng rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const fixture::ToyNetworks t = fixture::toy_networks(rng, static_cast<std::uint64_t>(1000 + 10 * trial));
    CfConfig cfg;
    cfg.beta = rng.uniform(0.0, 1.0);
    cfg.gamma = rng.uniform(0.0, 10.0);
    cfg.theta = rng.uniform(0.0, 10.0);
    cfg.kappa = 1.0;
    const Vector z0 = oracle::random_vector(rng, 4, 0.0, 1.0);
    const Vector z = oracle::random_vector(rng, 4, 0.0, 1.0);
    const SearchTarget tgt{trial % 2, 1 - trial % 2, oracle::random_vector(rng, 2)};
    const SearchModels m = trial % 4 < 2 ? t.semi_supervised() : t.unsupervised();
    worst = std::max(worst, smooth_gradient_error(m, z, z0, tgt, cfg, rng.uniform(0.1, 5.0)));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(CompositeLossTest, NumericalPredictionGradientAgrees) {
  Rng rng(6);
  const fixture::ToyNetworks t = fixture::toy_networks(rng, 40);
  CfConfig cfg;
  cfg.kappa = 1.0;
  const Vector z0 = oracle::random_vector(rng, 4, 0.0, 1.0);
  const Vector z = oracle::random_vector(rng, 4, 0.0, 1.0);
  const SearchTarget tgt{0, 1, oracle::random_vector(rng, 2)};
  const Vector a = composite_loss(z, z0, tgt, t.unsupervised(), cfg, 2.0).smooth_grad;
  cfg.numerical_prediction_gradient = true;
  const Vector n = composite_loss(z, z0, tgt, t.unsupervised(), cfg, 2.0).smooth_grad;
  EXPECT_LT((a - n).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(CompositeLossTest, DimensionMismatchIsRejected) {
  Rng rng(7);
  const fixture::ToyNetworks t = fixture::toy_networks(rng, 50);
  EXPECT_THROW(composite_loss(Vector::Zero(3), Vector::Zero(3), {0, 1, Vector::Zero(2)}, t.unsupervised(),
                              CfConfig{}, 1.0),
               RejectedInput);
}

TEST(CfConfigTest, Validation) {
  CfConfig c;
  EXPECT_NO_THROW(c.validate());
  c.beta = -1.0;
  EXPECT_THROW(c.validate(), InvalidConfig);
  c = CfConfig{};
  c.max_iters = 0;
  EXPECT_THROW(c.validate(), InvalidConfig);
  c = CfConfig{};
  c.target_mode = TargetMode::kExplicit;
  EXPECT_THROW(c.validate(), InvalidConfig);
  c.target_class = 1;
  EXPECT_NO_THROW(c.validate());
}

class TwoGaussianSearchTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { problem_ = new fixture::SearchProblem(fixture::two_gaussian_problem(150, 3)); }
  static void TearDownTestSuite() {
    delete problem_;
    problem_ = nullptr;
  }
  static fixture::SearchProblem* problem_;
};

fixture::SearchProblem* TwoGaussianSearchTest::problem_ = nullptr;

CfConfig sparse_config() {
  CfConfig cfg;
  cfg.beta = 1.0;
  cfg.gamma = 0.0;
  cfg.theta = 0.0;
  cfg.max_iters = 300;
  return cfg;
}

TEST_F(TwoGaussianSearchTest, StackSeparatesTheClasses) {
  ASSERT_TRUE(problem_->stack.report.test_accuracy.has_value());
  EXPECT_GE(*problem_->stack.report.test_accuracy, 0.95);
}

TEST_F(TwoGaussianSearchTest, ConvergedResultsRevalidateAfterDecode) {
  const std::vector<std::size_t> rows = problem_->test_rows_predicted(1);
  ASSERT_GE(rows.size(), 10u);
  const SearchModels m = problem_->models();
  std::size_t converged = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    const CounterfactualResult r =
        find_counterfactual(problem_->prepared.data.record(rows[i]), m, problem_->codec, problem_->classes,
                            sparse_config());
    EXPECT_EQ(r.t0, 1);
    EXPECT_EQ(r.t, 0);
    EXPECT_TRUE(r.delta.allFinite());
    for (std::size_t k = 1; k < r.best_l1_by_round.size(); ++k) {
      EXPECT_LE(r.best_l1_by_round[k], r.best_l1_by_round[k - 1]);
    }
    if (!r.converged) continue;
    ++converged;
    EXPECT_EQ(predicted_class(m, problem_->codec.encode(r.x_cfe)), r.t);
    EXPECT_EQ(r.achieved, r.t);
    EXPECT_LT((r.delta - (r.z_cfe - r.z0)).cwiseAbs().maxCoeff(), 1e-15);
  }
  EXPECT_GE(converged, 9u);
}

TEST_F(TwoGaussianSearchTest, QueryAlreadyInTargetIsReturnedUnchanged) {
  const std::vector<std::size_t> rows = problem_->test_rows_predicted(1);
  ASSERT_FALSE(rows.empty());
  CfConfig cfg = sparse_config();
  cfg.target_mode = TargetMode::kExplicit;
  cfg.target_class = 1;
  const Vector x0 = problem_->prepared.data.record(rows.front());
  const CounterfactualResult r = find_counterfactual(x0, problem_->models(), problem_->codec, problem_->classes, cfg);
  EXPECT_TRUE(r.converged);
  EXPECT_TRUE(r.x_cfe == x0);
  EXPECT_EQ(r.delta.cwiseAbs().maxCoeff(), 0.0);
}

TEST_F(TwoGaussianSearchTest, ZeroWeightsKeepTheQuery) {
  const std::vector<std::size_t> rows = problem_->test_rows_predicted(1);
  ASSERT_FALSE(rows.empty());
  CfConfig cfg;
  cfg.c_init = 0.0;
  cfg.gamma = 0.0;
  cfg.theta = 0.0;
  cfg.max_iters = 50;
  cfg.c_steps = 2;
  const CounterfactualResult r = find_counterfactual(problem_->prepared.data.record(rows.front()), problem_->models(),
                                                     problem_->codec, problem_->classes, cfg);
  EXPECT_EQ(r.delta.cwiseAbs().maxCoeff(), 0.0);
  for (const IterationRecord& it : r.loss_trace) EXPECT_EQ(it.loss.l2, 0.0);
}

TEST_F(TwoGaussianSearchTest, PrototypePullMovesLatentTowardPrototype) {
  const std::vector<std::size_t> rows = problem_->test_rows_predicted(1);
  const SearchModels m = problem_->models();
  CfConfig cfg;
  cfg.c_init = 0.0;
  cfg.c_steps = 1;
  cfg.beta = 0.0;
  cfg.gamma = 0.0;
  cfg.theta = 1.0;
  cfg.max_iters = 200;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < std::min<std::size_t>(rows.size(), 8); ++i) {
    const CounterfactualResult r =
        find_counterfactual(problem_->prepared.data.record(rows[i]), m, problem_->codec, problem_->classes, cfg);
    if (!r.converged) continue;
    ++checked;
    const Vector& proto = r.prototype_used.centroid;
    EXPECT_LT((predict_row(*m.encoder, r.z_cfe) - proto).norm(), (predict_row(*m.encoder, r.z0) - proto).norm());
  }
  EXPECT_GT(checked, 0u);
}

TEST_F(TwoGaussianSearchTest, DeterministicAcrossCalls) {
  const std::vector<std::size_t> rows = problem_->test_rows_predicted(1);
  const Vector x0 = problem_->prepared.data.record(rows.front());
  const CounterfactualResult a = find_counterfactual(x0, problem_->models(), problem_->codec, problem_->classes, sparse_config());
  const CounterfactualResult b = find_counterfactual(x0, problem_->models(), problem_->codec, problem_->classes, sparse_config());
  EXPECT_TRUE(a.x_cfe == b.x_cfe);
  EXPECT_EQ(a.loss_trace.size(), b.loss_trace.size());
}

TEST(CandidateCheckTest, DecodesCategoricalBlocksBeforeClassifying) {
  Rng rng(8);
  const fixture::ToyNetworks t = fixture::toy_networks(rng, 60);
  const DatasetSchema s = fixture::toy_schema();
  FeatureScaler sc;
  sc.continuous = {0, 1};
  sc.categorical = {2};
  sc.params = {{0.0, 10.0}, {-1.0, 1.0}};
  sc.mad = {1.0, 1.0};
  const RecordCodec codec{sc, make_tables(s, 3)};
  Vector z = codec.encode(vec({5.0, 0.0, 2.0}));
  z.tail(2) += Vector::Constant(2, 0.01);
  const CandidateCheck chk = check_candidate(z, codec, t.unsupervised());
  EXPECT_EQ(chk.record[2], 2.0);
  EXPECT_TRUE(chk.dense.tail(2) == codec.tables[0].matrix.row(2).transpose());
  EXPECT_EQ(chk.label, predicted_class(t.unsupervised(), chk.dense));
}

}  // namespace
}  // namespace cfproto
