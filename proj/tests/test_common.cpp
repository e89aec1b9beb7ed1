#include <gtest/gtest.h>

#include <atomic>
#include <numeric>

#include "mvlov/common.hpp"

using namespace mvlov;

TEST(PairwiseSum, MatchesExactSumOfIntegers) {
  std::vector<double> v(1000);
  std::iota(v.begin(), v.end(), 1.0);
  EXPECT_EQ(pairwise_sum(v), 500500.0);
  EXPECT_EQ(pairwise_sum(std::span<const double>{}), 0.0);
}

TEST(PairwiseSum, BeatsNaiveOnIllConditionedInput) {
  // 0.1 is inexact; naive accumulation drifts linearly, pairwise logarithmically.
  std::vector<double> v(1 << 20, 0.1);
  const double exact = 0.1L * (1 << 20);
  EXPECT_NEAR(pairwise_sum(v), exact, 1e-9);
}

TEST(PairwiseSum, StridedPicksOneComponent) {
  std::vector<double> v{1, 10, 2, 20, 3, 30};
  EXPECT_EQ(pairwise_sum_strided(v, 1, 2, 3), 60.0);
  EXPECT_EQ(pairwise_sum_strided(v, 0, 2, 3), 6.0);
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
  for (unsigned w : {1u, 2u, 3u, 7u, 64u}) {
    std::vector<std::atomic<int>> hits(101);
    parallel_for(hits.size(), [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) hits[i]++;
    }, w);
    for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
}

TEST(MeanEstimate, KnownValues) {
  const std::vector<double> v{1, 2, 3, 4};
  const auto e = mean_and_se(v);
  EXPECT_DOUBLE_EQ(e.mean, 2.5);
  EXPECT_NEAR(e.std_error, std::sqrt((1.25 * 4 / 3.0) / 4.0), 1e-15);
}

TEST(FitSlope, RecoversLine) {
  const std::vector<double> x{0, 1, 2, 3}, y{1, 3, 5, 7};
  EXPECT_NEAR(fit_slope(x, y), 2.0, 1e-14);
}

TEST(StepsIn, AcceptsMultiplesAndRejectsOthers) {
  EXPECT_EQ(steps_in(0.5, 1e-3), 500u);
  EXPECT_EQ(steps_in(0.3, 0.1), 3u);
  EXPECT_THROW(steps_in(0.25, 0.1), ValidationError);
}
