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

#include "cfproto/catembed.hpp"

#include <gtest/gtest.h>

#include <limits>
#include <string>
#include <vector>

#include "oracles.hpp"

namespace cfproto {
namespace {

const std::string kDataDir = std::string(CFPROTO_SOURCE_DIR) + "/data/";

EmbeddingTable table_of(const Matrix& m) {
  EmbeddingTable t;
  for (Eigen::Index r = 0; r < m.rows(); ++r) t.levels.push_back("l" + std::to_string(r));
  t.matrix = m;
  return t;
}

TEST(EmbeddingDimTest, Rule) {
  EXPECT_EQ(embedding_dim(2), 1u);
  EXPECT_EQ(embedding_dim(3), 2u);
  EXPECT_EQ(embedding_dim(10), 5u);
  EXPECT_EQ(embedding_dim(16), 8u);
  EXPECT_EQ(embedding_dim(40), 8u);
  EXPECT_THROW(embedding_dim(1), RejectedInput);
}

TEST(EncodeTest, NoCategoricalFeaturesIsIdentity) {
  Vector cont(3);
  cont << 0.1, 0.5, 0.9;
  const Vector out = embed_encode(cont, std::vector<int>{}, EmbeddingTables{});
  EXPECT_TRUE(out == cont);
}

TEST(EncodeTest, TableLookupAppendsRow) {
  Matrix m(2, 1);
  m << 0.2, 0.9;
  const EmbeddingTables tables = {table_of(m)};
  Vector cont(1);
  cont << 0.4;
  const Vector out = embed_encode(cont, std::vector<int>{1}, tables);
  ASSERT_EQ(out.size(), 2);
  EXPECT_EQ(out[0], 0.4);
  EXPECT_EQ(out[1], 0.9);
  EXPECT_THROW(embed_encode(cont, std::vector<int>{2}, tables), SchemaViolation);
  EXPECT_THROW(embed_encode(cont, std::vector<int>{}, tables), SchemaViolation);
}

TEST(EncodeTest, GermanDenseWidthMatchesCount) {
  const DatasetSchema s = load_schema(kDataDir + "german.schema.json");
  const Dataset ds = load_dataset(kDataDir + "german.csv", s, true);
  const EmbeddingTables tables = make_tables(s, 1);
  std::size_t expected = 0;
  for (const FeatureSpec& f : s.features) {
    if (!f.categorical()) {
      ++expected;
      continue;
    }
    std::size_t half = 0;
    while (2 * half < f.levels.size()) ++half;
    expected += half < 8 ? half : 8;
  }
  std::vector<std::size_t> rows(ds.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const RecordCodec codec{fit_scaler(ds, rows), tables};
  EXPECT_EQ(codec.encode(ds.record(0)).size(), static_cast<Eigen::Index>(expected));
}

TEST(DecodeTest, ExactRowAndTieRule) {
  Matrix m(3, 2);
  m << 0.0, 0.0, 1.0, 0.0, 0.3, 0.8;
  const EmbeddingTable t = table_of(m);
  for (int r = 0; r < 3; ++r) EXPECT_EQ(embed_decode(Vector(m.row(r).transpose()), t), r);
  Vector mid(2);
  mid << 0.5, 0.0;
  EXPECT_EQ(embed_decode(mid, t), 0);
  EXPECT_THROW(embed_decode(Vector::Zero(3), t), RejectedInput);
}

TEST(DecodeTest, MatchesExhaustiveScan) {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const auto card = static_cast<Eigen::Index>(2 + rng.below(9));
    const auto dim = static_cast<Eigen::Index>(1 + rng.below(4));
    const EmbeddingTable t = table_of(oracle::random_matrix(rng, card, dim, 0.0, 1.0));
    const Vector seg = oracle::random_vector(rng, dim, -0.2, 1.2);
    int want = -1;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index r = 0; r < card; ++r) {
      double d = 0.0;
      for (Eigen::Index c = 0; c < dim; ++c) d += (t.matrix(r, c) - seg[c]) * (t.matrix(r, c) - seg[c]);
      if (d < best) {
        best = d;
        want = static_cast<int>(r);
      }
    }
    EXPECT_EQ(embed_decode(seg, t), want);
  }
}

TEST(RoundTripTest, EveryGermanRowDecodesToItsLevels) {
  const DatasetSchema s = load_schema(kDataDir + "german.schema.json");
  const Dataset ds = load_dataset(kDataDir + "german.csv", s, true);
  std::vector<std::size_t> rows(ds.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const RecordCodec codec{fit_scaler(ds, rows), make_tables(s, 9)};
  for (std::size_t r : rows) {
    const Vector rec = ds.record(r);
    const Vector back = codec.decode(codec.encode(rec));
    for (std::size_t c : codec.scaler.categorical) {
      EXPECT_EQ(back[static_cast<Eigen::Index>(c)], rec[static_cast<Eigen::Index>(c)]);
    }
    EXPECT_LT((back - rec).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(TablesTest, SeededUnitIntervalInitialisation) {
  const DatasetSchema s = load_schema(kDataDir + "german.schema.json");
  const EmbeddingTables a = make_tables(s, 5);
  const EmbeddingTables b = make_tables(s, 5);
  ASSERT_EQ(a.size(), 13u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(a[i].matrix == b[i].matrix);
    EXPECT_GE(a[i].matrix.minCoeff(), 0.0);
    EXPECT_LT(a[i].matrix.maxCoeff(), 1.0);
    EXPECT_EQ(a[i].cardinality(), a[i].levels.size());
  }
}

TEST(TablesTest, GradientScatterAccumulatesPerLevel) {
  Matrix m(2, 1);
  m << 0.2, 0.9;
  const EmbeddingTables tables = {table_of(m)};
  TabularBatch b;
  b.continuous = Matrix::Zero(3, 1);
  b.levels = {{1}, {0}, {1}};
  Matrix g(3, 2);
  g << 9.0, 1.0, 9.0, 2.0, 9.0, 4.0;
  const std::vector<Matrix> tg = table_gradients(g, b, tables);
  EXPECT_EQ(tg[0](0, 0), 2.0);
  EXPECT_EQ(tg[0](1, 0), 5.0);
}

TEST(BoundsTest, ContinuousUnitBoxAndTableRange) {
  Matrix m(3, 2);
  m << 0.1, 0.7, 0.4, 0.2, 0.9, 0.5;
  const DenseBounds b = dense_bounds(2, {table_of(m)});
  ASSERT_EQ(b.lower.size(), 4);
  EXPECT_EQ(b.lower[0], 0.0);
  EXPECT_EQ(b.upper[1], 1.0);
  EXPECT_EQ(b.lower[2], 0.1);
  EXPECT_EQ(b.upper[2], 0.9);
  EXPECT_EQ(b.lower[3], 0.2);
  EXPECT_EQ(b.upper[3], 0.7);
}

}  // namespace
}  // namespace cfproto
