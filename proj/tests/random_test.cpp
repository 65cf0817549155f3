#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "pension/random.hpp"

using pension::Rng;

TEST(Rng, SameSeedSameSequence) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.bits(), b.bits());
}

TEST(Rng, UniformStaysInUnitInterval) {
  Rng r(1);
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, BelowCoversRangeUniformly) {
  Rng r(2);
  const int n = 7, draws = 70000;
  std::vector<int> counts(n, 0);
  for (int i = 0; i < draws; ++i) {
    const auto k = r.below(n);
    ASSERT_LT(k, static_cast<std::uint64_t>(n));
    ++counts[k];
  }
  const double p = 1.0 / n, sd = std::sqrt(p * (1 - p) / draws);
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / draws, p, 4 * sd);
}

TEST(Rng, NormalMoments) {
  Rng r(3);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, SplitStreamsAreDistinctAndStable) {
  const Rng root(9);
  std::set<std::uint64_t> firsts;
  for (std::uint64_t k = 0; k < 100; ++k) {
    Rng child = root.split(k);
    Rng again = root.split(k);
    const auto x = child.bits();
    EXPECT_EQ(x, again.bits());
    firsts.insert(x);
  }
  EXPECT_EQ(firsts.size(), 100u);
}

TEST(Rng, SplitDoesNotAdvanceParent) {
  Rng a(5), b(5);
  (void)a.split(3);
  EXPECT_EQ(a.bits(), b.bits());
}
