#include <gtest/gtest.h>

#include <sstream>

#include "midx/kmeans.hpp"
#include "midx/quantizer.hpp"
#include "support/oracles.hpp"

using namespace midx;

namespace {

Matrix column(std::initializer_list<double> values) {
  Matrix m(values.size(), 1);
  std::size_t i = 0;
  for (double v : values) m(i++, 0) = v;
  return m;
}

double brute_objective(const Matrix& pts, const Matrix& cents, std::vector<std::uint32_t>& assign) {
  double sse = 0.0;
  assign.resize(pts.rows());
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    double best = INFINITY;
    for (std::size_t k = 0; k < cents.rows(); ++k) {
      const double d = squared_distance(pts.row(i), cents.row(k));
      if (d < best) {
        best = d;
        assign[i] = static_cast<std::uint32_t>(k);
      }
    }
    sse += best;
  }
  return sse;
}

void expect_reconstruction(const MultiIndex& idx, const Matrix& emb) {
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    const auto rec = idx.reconstruction(static_cast<ItemId>(i));
    const auto r = idx.residuals.row(i);
    for (std::size_t d = 0; d < emb.cols(); ++d) {
      const double q = emb(i, d);
      ASSERT_LE(std::abs(rec[d] + r[d] - q), 1e-6 * std::max(1.0, std::abs(q)));
    }
    ASSERT_LE(norm(r), idx.max_residual_norm + 1e-15);
  }
}

void expect_partition(const MultiIndex& idx) {
  std::vector<int> seen(idx.num_items(), 0);
  std::size_t total = 0;
  for (std::size_t k1 = 0; k1 < idx.codebook_size; ++k1)
    for (std::size_t k2 = 0; k2 < idx.codebook_size; ++k2)
      for (ItemId i : idx.bucket(k1, k2)) {
        ++seen[i];
        ++total;
        ASSERT_EQ(idx.code1[i], k1);
        ASSERT_EQ(idx.code2[i], k2);
      }
  EXPECT_EQ(total, idx.num_items());
  for (int s : seen) ASSERT_EQ(s, 1);
}

}  // namespace

TEST(KMeans, TwoExactClusters) {
  const auto r = kmeans(column({0, 0, 10, 10}), 2, 20, 1);
  std::vector<double> c{r.centroids(0, 0), r.centroids(1, 0)};
  std::sort(c.begin(), c.end());
  EXPECT_EQ(c, (std::vector<double>{0, 10}));
  EXPECT_EQ(r.objective(), 0.0);
  EXPECT_TRUE(r.converged);
}

TEST(KMeans, SingleClusterIsTheMean) {
  Rng rng(4);
  const Matrix pts = gaussian_matrix(37, 3, rng);
  const auto r = kmeans(pts, 1, 20, 9);
  for (std::size_t d = 0; d < 3; ++d) {
    double mean = 0;
    for (std::size_t i = 0; i < pts.rows(); ++i) mean += pts(i, d);
    EXPECT_NEAR(r.centroids(0, d), mean / 37.0, 1e-12);
  }
}

TEST(KMeans, MonotoneObjectiveAndNearestAssignments) {
  Rng rng(8);
  const Matrix pts = gaussian_matrix(100, 4, rng);
  const auto r = kmeans(pts, 8, 50, 3);
  ASSERT_GE(r.objective_trace.size(), 2u);
  for (std::size_t t = 1; t < r.objective_trace.size(); ++t)
    EXPECT_LE(r.objective_trace[t], r.objective_trace[t - 1] + 1e-12);
  EXPECT_LE(r.objective(), r.objective_trace.front());
  std::vector<std::uint32_t> brute;
  const double sse = brute_objective(pts, r.centroids, brute);
  EXPECT_EQ(brute, r.assignments);
  EXPECT_NEAR(sse, r.objective(), 1e-9);
}

TEST(KMeans, DeterministicGivenSeed) {
  Rng rng(2);
  const Matrix pts = gaussian_matrix(60, 2, rng);
  EXPECT_EQ(kmeans(pts, 5, 20, 77).assignments, kmeans(pts, 5, 20, 77).assignments);
}

TEST(KMeans, MoreClustersThanDistinctPointsKeepsK) {
  const auto r = kmeans(column({1, 1, 1, 2}), 4, 20, 5);
  EXPECT_EQ(r.centroids.rows(), 4u);
  EXPECT_EQ(r.objective(), 0.0);
}

TEST(KMeans, Errors) {
  EXPECT_THROW(kmeans(column({1}), 0, 10, 1), Error);
  EXPECT_THROW(kmeans(Matrix(3, 0), 1, 10, 1), Error);
  EXPECT_THROW(kmeans(Matrix(0, 2), 1, 10, 1), Error);
}

TEST(BuildIndex, SingleCodewordResidualsAreMeanOffsets) {
  Rng rng(1);
  const Matrix emb = gaussian_matrix(20, 6, rng);
  const auto idx = build_index(emb, 1, 3);
  EXPECT_EQ(idx.bucket(0, 0).size(), 20u);
  for (std::size_t d = 0; d < 6; ++d) {
    double mean = 0;
    for (std::size_t i = 0; i < 20; ++i) mean += emb(i, d);
    mean /= 20.0;
    for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(idx.residuals(i, d), emb(i, d) - mean, 1e-12);
  }
}

TEST(BuildIndex, IdenticalEmbeddingsHaveZeroResiduals) {
  Matrix emb(15, 4);
  for (std::size_t i = 0; i < 15; ++i)
    for (std::size_t d = 0; d < 4; ++d) emb(i, d) = 0.25 * static_cast<double>(d) - 1.0;
  const auto idx = build_index(emb, 3, 2);
  EXPECT_EQ(idx.max_residual_norm, 0.0);
  for (double v : idx.residuals.data()) EXPECT_EQ(v, 0.0);
}

TEST(BuildIndex, RandomInstancePartitionAndReconstruction) {
  Rng rng(12);
  const Matrix emb = gaussian_matrix(50, 8, rng);
  const auto idx = build_index(emb, 4, 6);
  expect_partition(idx);
  expect_reconstruction(idx, emb);
}

TEST(BuildIndex, RejectsOddDimension) {
  EXPECT_THROW(build_index(Matrix(5, 3, 1.0), 2, 1), Error);
  EXPECT_THROW(build_index(Matrix(5, 4, 1.0), 0, 1), Error);
}

TEST(Rebuild, UnchangedEmbeddingsKeepAssignments) {
  Rng rng(21);
  const Matrix emb = midx::testing::clustered_embeddings(80, 8, 5, 0.2, rng);
  const auto idx = build_index(emb, 4, 2, 100);
  const auto again = rebuild(idx, emb);
  EXPECT_EQ(again.code1, idx.code1);
  EXPECT_EQ(again.code2, idx.code2);
  EXPECT_EQ(again.bucket_items, idx.bucket_items);
  expect_reconstruction(again, emb);
}

TEST(Rebuild, ScaledEmbeddingsScaleCentroids) {
  Rng rng(22);
  const Matrix emb = midx::testing::clustered_embeddings(80, 8, 5, 0.2, rng);
  const auto idx = build_index(emb, 4, 2, 100);
  Matrix doubled = emb;
  for (double& v : doubled.data()) v *= 2.0;
  const auto r = rebuild(idx, doubled);
  EXPECT_EQ(r.code1, idx.code1);
  EXPECT_EQ(r.code2, idx.code2);
  for (std::size_t i = 0; i < idx.codebook1.data().size(); ++i) {
    EXPECT_NEAR(r.codebook1.data()[i], 2.0 * idx.codebook1.data()[i], 1e-12);
    EXPECT_NEAR(r.codebook2.data()[i], 2.0 * idx.codebook2.data()[i], 1e-12);
  }
  // Independent check: a plain k-means run seeded from the doubled centroids
  // lands on the same partition.
  Matrix first_half(80, 4);
  for (std::size_t i = 0; i < 80; ++i)
    for (std::size_t d = 0; d < 4; ++d) first_half(i, d) = doubled(i, d);
  std::vector<std::uint32_t> direct;
  Matrix doubled_c1 = idx.codebook1;
  for (double& v : doubled_c1.data()) v *= 2.0;
  brute_objective(first_half, doubled_c1, direct);
  EXPECT_EQ(direct, r.code1);
}

TEST(Rebuild, MovedItemChangesBucket) {
  // Two well separated groups in each half; item 0 jumps to the other group.
  Matrix emb(20, 2);
  for (std::size_t i = 0; i < 20; ++i) {
    const double base = i < 10 ? 0.0 : 100.0;
    emb(i, 0) = base + 0.1 * static_cast<double>(i % 10);
    emb(i, 1) = base - 0.1 * static_cast<double>(i % 10);
  }
  const auto idx = build_index(emb, 2, 5, 50);
  Matrix moved = emb;
  moved(0, 0) = 100.5;
  moved(0, 1) = 100.5;
  const auto r = rebuild(idx, moved);
  EXPECT_NE(r.code1[0], idx.code1[0]);
  EXPECT_EQ(r.code1[0], r.code1[15]);
  expect_partition(r);
  expect_reconstruction(r, moved);
}

TEST(Rebuild, ShapeMismatch) {
  Rng rng(1);
  const auto idx = build_index(gaussian_matrix(10, 4, rng), 2, 1);
  EXPECT_THROW(rebuild(idx, Matrix(11, 4)), Error);
  EXPECT_THROW(rebuild(idx, Matrix(10, 6)), Error);
}

TEST(IndexFile, RoundTrip) {
  Rng rng(5);
  const auto idx = build_index(gaussian_matrix(30, 6, rng), 3, 1);
  std::stringstream buf;
  save_index(buf, idx);
  EXPECT_EQ(load_index(buf), idx);
}
