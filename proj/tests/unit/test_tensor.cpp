#include <gtest/gtest.h>

#include "otbr/tensor.hpp"
#include "test_support.hpp"

using namespace otbr;
using otbr::testing::random_tensor;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor a({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(matmul(eye, a), a);
}

TEST(Matmul, RowTimesColumn) {
  Tensor r = matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}));
  ASSERT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_EQ(r[0], 11.0f);
}

TEST(Matmul, MatchesTripleLoop) {
  Tensor a = random_tensor({5, 7}, 1), b = random_tensor({7, 3}, 2);
  Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 7; ++k) s += double(a.at(i, k)) * double(b.at(k, j));
      EXPECT_NEAR(c.at(i, j), s, 1e-6);
    }
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
  EXPECT_THROW(matmul(Tensor({6}), Tensor({6, 1})), DimensionError);
}

TEST(Matmul, AssociativeWithinFloatTolerance) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Tensor a = random_tensor({4, 6}, 10 + s), b = random_tensor({6, 5}, 20 + s), c = random_tensor({5, 3}, 30 + s);
    Tensor l = matmul(matmul(a, b), c), r = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < l.size(); ++i)
      EXPECT_LE(std::fabs(l[i] - r[i]), 1e-4 * std::max(1.0f, std::fabs(l[i])));
  }
}

TEST(Matmul, DoubleMatrixVersion) {
  Matrix a(2, 2, {1, 2, 3, 4}), b(2, 1, {1, 1});
  Matrix c = matmul(a, b);
  EXPECT_EQ(c(0, 0), 3.0);
  EXPECT_EQ(c(1, 0), 7.0);
  EXPECT_THROW(matmul(b, b), DimensionError);
}

TEST(RowL1, IdenticalRowsGiveZeros) {
  Tensor a = random_tensor({3, 4}, 5);
  for (double v : row_l1_distance(a, a)) EXPECT_EQ(v, 0.0);
}

TEST(RowL1, HandExample) {
  auto d = row_l1_distance(Tensor({1, 2}, {1, -2}), Tensor({1, 2}, {1.5f, -1}));
  ASSERT_EQ(d.size(), 1u);
  EXPECT_DOUBLE_EQ(d[0], 1.5);
}

TEST(RowL1, MatchesLoopExactly) {
  Tensor a = random_tensor({4, 6}, 7), b = random_tensor({4, 6}, 8);
  auto d = row_l1_distance(a, b);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) s += std::fabs(double(a.at(i, j)) - double(b.at(i, j)));
    EXPECT_EQ(d[i], s);
  }
}

TEST(RowL1, ShapeMismatchThrows) { EXPECT_THROW(row_l1_distance(Tensor({2, 3}), Tensor({3, 2})), DimensionError); }

TEST(PairwiseSq, SelfDistance) {
  Tensor a({3, 2}, {0, 0, 1, 0, 0, 2});
  Tensor c = pairwise_sq_euclidean(a, a);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j) EXPECT_EQ(c.at(i, j), 0.0f);
      else EXPECT_GT(c.at(i, j), 0.0f);
    }
}

TEST(PairwiseSq, ThreeFourFive) {
  Tensor c = pairwise_sq_euclidean(Tensor({1, 2}, {0, 0}), Tensor({1, 2}, {3, 4}));
  EXPECT_EQ(c.at(0, 0), 25.0f);
}

TEST(PairwiseSq, MatchesLoopAndIsSymmetric) {
  Tensor a = random_tensor({3, 5}, 11), b = random_tensor({4, 5}, 12);
  Tensor c = pairwise_sq_euclidean(a, b), ct = pairwise_sq_euclidean(b, a);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += std::pow(double(a.at(i, k)) - double(b.at(j, k)), 2);
      EXPECT_NEAR(c.at(i, j), s, 1e-6);
      EXPECT_EQ(c.at(i, j), ct.at(j, i));
    }
  EXPECT_THROW(pairwise_sq_euclidean(Tensor({2, 3}), Tensor({2, 4})), DimensionError);
}

TEST(TensorBasics, PayloadMustMatchShape) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  Tensor t({2, 3}, 1.5f);
  EXPECT_EQ(t.reshaped({3, 2}).shape(), (Shape{3, 2}));
  EXPECT_THROW(t.reshaped({4}), DimensionError);
  EXPECT_TRUE(t.all_finite());
  t[4] = std::nanf("");
  EXPECT_FALSE(t.all_finite());
}

TEST(TensorBasics, ChecksumTracksPayload) {
  Tensor a = random_tensor({3, 3}, 1);
  Tensor b = a;
  EXPECT_EQ(checksum(a), checksum(b));
  b[0] += 1.0f;
  EXPECT_NE(checksum(a), checksum(b));
}
