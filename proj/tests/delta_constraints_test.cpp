#include "dvae/delta_constraints.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace dvae {
namespace {

TEST(FeasibleSigmaInterval, ZeroDeltaIsUnitStd) {
  const auto c = feasible_sigma_interval(0.0);
  EXPECT_EQ(c.sigma_low, 1.0);
  EXPECT_EQ(c.sigma_high, 1.0);
}

TEST(FeasibleSigmaInterval, EndpointsSolveDefiningEquation) {
  // 0.08 bits is the smallest target used for the independent variant.
  for (double delta : {0.5, 0.08 * kLn2, 1e-6, 0.01, 0.1, 1.0, 5.0, 40.0}) {
    const auto c = feasible_sigma_interval(delta);
    EXPECT_LE(c.sigma_low, 1.0);
    EXPECT_GE(c.sigma_high, 1.0);
    EXPECT_LT(c.sigma_low, c.sigma_high);
    EXPECT_NEAR(independent_feasibility(c.sigma_low, delta), 0.0, 1e-10) << delta;
    EXPECT_NEAR(independent_feasibility(c.sigma_high, delta), 0.0, 1e-10) << delta;
    // Just outside the interval the condition fails.
    EXPECT_LT(independent_feasibility(c.sigma_low * 0.999, delta), 0.0);
    EXPECT_LT(independent_feasibility(c.sigma_high * 1.001, delta), 0.0);
  }
  EXPECT_THROW(feasible_sigma_interval(-0.1), DomainError);
}

TEST(ConstrainIndependent, ZeroDelta) {
  const auto c = feasible_sigma_interval(0.0);
  for (double raw_mu : {-2.0, 0.0, 1.5}) {
    const auto [mu, sigma] = constrain_independent(raw_mu, 0.7, c);
    EXPECT_EQ(sigma, 1.0);
    EXPECT_EQ(mu, std::max(0.0, raw_mu));
    EXPECT_NEAR(kl_univariate(mu, sigma, 0, 1), 0.5 * mu * mu, 1e-15);
  }
}

TEST(ConstrainIndependent, MidpointAtZeroRaw) {
  const auto c = feasible_sigma_interval(0.5);
  const auto [mu, sigma] = constrain_independent(0.0, 0.0, c);
  EXPECT_DOUBLE_EQ(sigma, 0.5 * (c.sigma_low + c.sigma_high));
  EXPECT_DOUBLE_EQ(mu, std::sqrt(2 * 0.5 + 1 + std::log(sigma * sigma) - sigma * sigma));
  EXPECT_GE(kl_univariate(mu, sigma, 0, 1), 0.5 - 1e-12);
}

TEST(ConstrainIndependent, FuzzedGuarantee) {
  Rng rng(7);
  std::normal_distribution<double> wide(0.0, 5.0);
  for (double delta : {0.01, 0.1, 1.0}) {
    const auto c = feasible_sigma_interval(delta);
    for (int i = 0; i < 10000; ++i) {
      const auto [mu, sigma] = constrain_independent(wide(rng), wide(rng), c);
      ASSERT_GE(sigma, c.sigma_low);
      ASSERT_LE(sigma, c.sigma_high);
      ASSERT_GE(kl_univariate(mu, sigma, 0, 1), delta - 1e-9);
    }
    // Saturated logistic lands exactly on the endpoints.
    for (double raw_sigma : {-1e3, 1e3}) {
      const auto [mu, sigma] = constrain_independent(-1.0, raw_sigma, c);
      ASSERT_GE(kl_univariate(mu, sigma, 0, 1), delta - 1e-9);
    }
  }
}

TEST(TemporalPosterior, SoftplusFloor) {
  const auto q = temporal_posterior(Mat::Zero(3, 2), Mat::Zero(3, 2));
  EXPECT_NEAR(q.stds(0, 0), 0.693247180559945, 1e-15);
  EXPECT_EQ(q.means, Mat::Zero(3, 2));

  const auto floored = temporal_posterior(Mat::Zero(2, 1), Mat::Constant(2, 1, -1e4));
  EXPECT_EQ(floored.stds(0, 0), kSigmaFloor);
  const auto kl = kl_seq_closed_form(floored, Ar1Prior({0.5}));
  EXPECT_TRUE(std::isfinite(kl.total));

  EXPECT_THROW(temporal_posterior(Mat::Zero(2, 1), Mat::Zero(3, 1)), ConfigError);
}

TEST(TemporalPosterior, FuzzedAgainstCommittedRate) {
  Rng rng(11);
  std::normal_distribution<double> raw(0.0, 3.0);
  std::uniform_real_distribution<double> alpha(0.0, 0.99);
  std::uniform_int_distribution<int> len(2, 24), dims(1, 4);
  for (int i = 0; i < 3000; ++i) {
    const int n = len(rng), d = dims(rng);
    std::vector<double> alphas(d);
    for (double& a : alphas) a = alpha(rng);
    const Mat mus = Mat::NullaryExpr(n, d, [&] { return raw(rng); });
    const Mat sigmas = Mat::NullaryExpr(n, d, [&] { return raw(rng); });
    const Ar1Prior p(alphas);
    const auto q = temporal_posterior(mus, sigmas);
    ASSERT_GE(kl_seq_closed_form(q, p).total, committed_rate(p, n) - 1e-9);
  }
}

}  // namespace
}  // namespace dvae
