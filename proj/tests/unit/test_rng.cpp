#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "otbr/rng.hpp"

using namespace otbr;

TEST(Rng, SameSeedSameMillionDraws) {
  Rng a(42), b(42);
  bool same = true;
  for (int i = 0; i < 1000000; ++i) same &= a.next_u64() == b.next_u64();
  EXPECT_TRUE(same);
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(1), b(2);
  int equal = 0;
  for (int i = 0; i < 1000; ++i) equal += a.next_u64() == b.next_u64();
  EXPECT_EQ(equal, 0);
}

TEST(Rng, KnownFirstDrawIsStable) {
  // pins the stream so a platform or refactor change is noticed
  Rng a(0);
  const std::uint64_t first = a.next_u64();
  Rng b(0);
  EXPECT_EQ(first, b.next_u64());
  EXPECT_EQ(mix64(0), 0u);
  EXPECT_EQ(mix64(0x9E3779B97F4A7C15ULL), 0xE220A8397B1DCDAFULL);  // splitmix64 reference
}

TEST(Rng, SplitsAreIndependentOfDrawOrder) {
  Rng parent(9);
  Rng s1 = parent.split("init");
  parent.next_u64();
  Rng s2 = parent.split("init");
  EXPECT_EQ(s1.next_u64(), s2.next_u64());
  EXPECT_NE(parent.split("init").next_u64(), parent.split("noise").next_u64());
  EXPECT_NE(parent.split(std::uint64_t{0}).next_u64(), parent.split(std::uint64_t{1}).next_u64());
}

TEST(Rng, UniformRangeAndMean) {
  Rng r(3);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.005);
}

TEST(Rng, BelowIsInRangeAndCoversAll) {
  Rng r(4);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 10000; ++i) {
    auto v = r.below(7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, NormalMoments) {
  Rng r(5);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(6);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  r.shuffle(v);
  std::set<int> s(v.begin(), v.end());
  EXPECT_EQ(s.size(), 50u);
  bool moved = false;
  for (int i = 0; i < 50; ++i) moved |= v[i] != i;
  EXPECT_TRUE(moved);
}
