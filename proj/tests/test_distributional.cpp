#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "dail/distributional.hpp"
#include "dail/tensor.hpp"
#include "oracles.hpp"

using namespace dail;

TEST(Support, PaperDefaults) {
  const Support s = make_support(-20.0, 20.0, 51);
  EXPECT_DOUBLE_EQ(s.delta_z, 0.8);
  EXPECT_EQ(s.atoms.front(), -20.0);
  EXPECT_EQ(s.atoms.back(), 20.0);
  for (std::size_t i = 1; i < s.m; ++i) EXPECT_GT(s.atoms[i], s.atoms[i - 1]);
  EXPECT_EQ(make_support(0.0, 1.0, 2).atoms, (std::vector<double>{0.0, 1.0}));
  EXPECT_THROW(make_support(1.0, 1.0, 5), InvalidArgument);
  EXPECT_THROW(make_support(0.0, 1.0, 1), InvalidArgument);
}

TEST(Projection, IdentityShift) {
  const Support s = make_support(-20.0, 20.0, 51);
  Rng rng = make_rng(1);
  for (int k = 0; k < 20; ++k) {
    const auto p = oracle::random_distribution(51, rng);
    const auto out = project_target(0.0, 1.0, p, s, false).probs;
    for (std::size_t i = 0; i < 51; ++i) EXPECT_NEAR(out[i], p[i], 1e-12);
  }
}

TEST(Projection, HalfStepSplitsMass) {
  const Support s = make_support(0.0, 2.0, 3);
  const auto out = project_target(0.5, 1.0, std::vector<double>{0.0, 1.0, 0.0}, s, false).probs;
  EXPECT_NEAR(out[0], 0.0, 1e-15);
  EXPECT_NEAR(out[1], 0.5, 1e-15);
  EXPECT_NEAR(out[2], 0.5, 1e-15);
}

TEST(Projection, TerminalRewardPointSeven) {
  const Support s = make_support(-20.0, 20.0, 51);
  const auto out = project_target(0.7, 0.99, CategoricalDistribution::uniform(s).probs, s, true).probs;
  EXPECT_NEAR(out[25], 0.125, 1e-12);
  EXPECT_NEAR(out[26], 0.875, 1e-12);
  EXPECT_NEAR(std::accumulate(out.begin(), out.end(), 0.0), 1.0, 1e-12);
}

TEST(Projection, MatchesKernelOracleOnFuzz) {
  Rng rng = make_rng(2);
  for (int k = 0; k < 2000; ++k) {
    const std::size_t m = 2 + uniform_below(rng, 60);
    const double lo = uniform(rng, -30.0, 0.0);
    const Support s = make_support(lo, lo + uniform(rng, 0.5, 40.0), m);
    const auto p = oracle::random_distribution(m, rng);
    const double r = uniform(rng, -40.0, 40.0);
    const double gamma = uniform_below(rng, 5) == 0 ? 1.0 : uniform01(rng);
    const bool done = uniform_below(rng, 4) == 0;
    const auto got = project_target(r, gamma, p, s, done).probs;
    const auto want = oracle::projection(r, gamma, p, s, done);
    for (std::size_t i = 0; i < m; ++i) ASSERT_NEAR(got[i], want[i], 1e-9) << "case " << k;
    ASSERT_NEAR(std::accumulate(got.begin(), got.end(), 0.0), 1.0, 1e-9);
  }
}

TEST(Projection, ExpectationConsistencyWhenUnclamped) {
  const Support s = make_support(-20.0, 20.0, 51);
  Rng rng = make_rng(3);
  int checked = 0;
  for (int k = 0; k < 2000; ++k) {
    const auto p = oracle::random_distribution(51, rng);
    const double r = uniform(rng, -2.0, 2.0);
    const double gamma = uniform(rng, 0.0, 0.9);
    if (std::abs(r) + gamma * 20.0 > 20.0) continue;
    ++checked;
    EXPECT_NEAR(expectation(project_target(r, gamma, p, s, false), s), r + gamma * expectation(p, s), 1e-9);
  }
  EXPECT_GT(checked, 1000);
}

TEST(Projection, GammaZeroDependsOnlyOnReward) {
  const Support s = make_support(-20.0, 20.0, 51);
  Rng rng = make_rng(4);
  const auto a = project_target(0.3, 0.0, oracle::random_distribution(51, rng), s, false);
  const auto b = project_target(0.3, 0.0, oracle::random_distribution(51, rng), s, false);
  for (std::size_t i = 0; i < 51; ++i) EXPECT_NEAR(a.probs[i], b.probs[i], 1e-15);
}

TEST(KlLoss, ClosedForms) {
  const std::vector<double> logits{0.3, -1.2, 2.0};
  const auto p = softmax(logits);
  EXPECT_NEAR(kl_loss(p, logits), 0.0, 1e-12);
  EXPECT_NEAR(kl_loss(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 0.0}), std::log(2.0), 1e-15);
  EXPECT_THROW(kl_loss(std::vector<double>{1.0}, std::vector<double>{0.0, 0.0}), ShapeError);
}

TEST(KlLoss, GradientIsSoftmaxMinusTarget) {
  Rng rng = make_rng(5);
  const auto target = oracle::random_distribution(7, rng);
  std::vector<double> logits(7);
  for (double& v : logits) v = uniform(rng, -2.0, 2.0);
  Tape t;
  const Var x = t.record(logits, true, [](Tape&, std::size_t) {});
  t.backward(kl_div(t, target, x));
  const auto p = softmax(logits);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_NEAR(t.grad(x)[i], p[i] - target[i], 1e-10);
    auto up = logits, down = logits;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    EXPECT_NEAR((kl_loss(target, up) - kl_loss(target, down)) / 2e-6, p[i] - target[i], 1e-8);
  }
}

TEST(Expectation, Examples) {
  const Support s = make_support(-20.0, 20.0, 51);
  EXPECT_EQ(expectation(CategoricalDistribution::point_mass(s, 37), s), s.atoms[37]);
  EXPECT_NEAR(expectation(CategoricalDistribution::uniform(s), s), 0.0, 1e-12);
  Rng rng = make_rng(6);
  const auto p = oracle::random_distribution(51, rng);
  EXPECT_NEAR(expectation(p, s), oracle::mean(p, s), 1e-12);
}

TEST(Wasserstein, Examples) {
  const Support s = make_support(-20.0, 20.0, 51);
  Rng rng = make_rng(7);
  const auto p = oracle::random_distribution(51, rng);
  EXPECT_EQ(wasserstein1(p, p, s), 0.0);
  const auto a = CategoricalDistribution::point_mass(s, 25), b = CategoricalDistribution::point_mass(s, 26);
  EXPECT_NEAR(wasserstein1(a, b, s), 0.8, 1e-12);
  const Support f = make_support(-1.0, 1.0, 3);
  const CategoricalDistribution bimodal{{0.5, 0.0, 0.5}}, point{{0.0, 1.0, 0.0}};
  EXPECT_EQ(expectation(bimodal, f), 0.0);
  EXPECT_EQ(expectation(point, f), 0.0);
  EXPECT_EQ(wasserstein1(bimodal, point, f), 1.0);
  EXPECT_THROW(wasserstein1(a, s, bimodal, f), InvalidArgument);
  EXPECT_THROW(wasserstein1(a.probs, bimodal.probs, s), InvalidArgument);
}

TEST(Wasserstein, MetricPropertiesOnFuzz) {
  Rng rng = make_rng(8);
  for (int k = 0; k < 1000; ++k) {
    const std::size_t m = 2 + uniform_below(rng, 60);
    const Support s = make_support(-20.0, 20.0, m);
    const auto a = oracle::random_distribution(m, rng), b = oracle::random_distribution(m, rng),
               c = oracle::random_distribution(m, rng);
    const double ab = wasserstein1(a, b, s);
    EXPECT_EQ(ab, wasserstein1(b, a, s));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(wasserstein1(a, c, s), ab + wasserstein1(b, c, s) + 1e-9);
    EXPECT_GE(ab, std::abs(expectation(a, s) - expectation(b, s)) - 1e-9);
  }
}
