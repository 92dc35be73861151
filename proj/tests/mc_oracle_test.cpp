#include "dvae/mc_oracle.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace dvae {
namespace {

TEST(McKlEstimate, ZeroWhenPosteriorEqualsPrior) {
  const GaussianSeqPosterior q(Mat::Zero(5, 2), Mat::Ones(5, 2));
  const auto est = mc_kl_estimate(q, Ar1Prior({0.0, 0.0}), 10000, 1);
  EXPECT_LE(std::abs(est.mean), 4 * est.stderr_ + 1e-12);
}

TEST(McKlEstimate, AgreesWithClosedFormOnFuzzedCases) {
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const auto c = testing::random_case(rng, 8, 3);
    const auto est = mc_kl_estimate(c.q, c.p, 100000, 100 + i);
    EXPECT_NEAR(est.mean, kl_seq_closed_form(c.q, c.p).total, 4 * est.stderr_) << i;
  }
}

TEST(McKlEstimate, StderrShrinksWithSamples) {
  Mat mu(3, 1), sd(3, 1);
  mu << 0.2, -0.4, 0.1;
  sd << 0.7, 1.2, 0.5;
  const GaussianSeqPosterior q(mu, sd);
  const Ar1Prior p({0.6});
  const auto small = mc_kl_estimate(q, p, 200000, 9);
  const auto large = mc_kl_estimate(q, p, 400000, 9);
  EXPECT_NEAR(small.stderr_ / large.stderr_, std::sqrt(2.0), 0.1);
}

TEST(McKlEstimate, DeterministicAndAntitheticHelps) {
  Mat mu(4, 1), sd(4, 1);
  // Mean-dominated case: the odd (linear in eps) part of the log ratio
  // carries most of the variance, which pairing cancels exactly.
  mu << 2.0, 1.5, -1.5, 2.5;
  sd << 0.3, 0.3, 0.3, 0.3;
  const GaussianSeqPosterior q(mu, sd);
  const Ar1Prior p({0.8});
  const auto a = mc_kl_estimate(q, p, 50001, 3);
  const auto b = mc_kl_estimate(q, p, 50001, 3);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.stderr_, b.stderr_);
  const auto plain = mc_kl_estimate(q, p, 50001, 3, /*antithetic=*/false);
  EXPECT_LT(a.stderr_, plain.stderr_);
  EXPECT_THROW(mc_kl_estimate(q, p, 999, 3), DomainError);
}

TEST(NumericMinKl, IndependentPriorIsMatchedExactly) {
  const auto res = numeric_min_kl(Ar1Prior({0.0}), 6);
  EXPECT_NEAR(res.min_kl, 0.0, 1e-12);
  for (Eigen::Index t = 0; t < 6; ++t) {
    EXPECT_NEAR(res.argmin.means(t, 0), 0.0, 1e-6);
    EXPECT_NEAR(res.argmin.stds(t, 0), 1.0, 1e-6);
  }
}

TEST(NumericMinKl, AlphaHalfLength32) {
  const auto res = numeric_min_kl(Ar1Prior({0.5}), 32);
  EXPECT_NEAR(res.min_kl, 3.490994305939037, 1e-6);
}

TEST(NumericMinKl, MinimizerStructure) {
  const auto res = numeric_min_kl(Ar1Prior({0.9}), 8);
  const double edge = 1 - 0.81;
  const double interior = 0.104972375690608;  // (1 - 0.81) / (1 + 0.81)
  EXPECT_NEAR(res.argmin.stds(0, 0) * res.argmin.stds(0, 0), edge, 1e-4);
  EXPECT_NEAR(res.argmin.stds(7, 0) * res.argmin.stds(7, 0), edge, 1e-4);
  for (Eigen::Index t = 1; t < 7; ++t) {
    EXPECT_NEAR(res.argmin.stds(t, 0) * res.argmin.stds(t, 0), interior, 1e-4);
    EXPECT_NEAR(res.argmin.means(t, 0), 0.0, 1e-4);
  }
  EXPECT_LE(res.restart_spread, 1e-8);
}

TEST(NumericMinKl, TwoStepsGiveHalfNegLogOneMinusAlphaSquared) {
  for (double a : {0.2, 0.6, 0.95}) {
    const auto res = numeric_min_kl(Ar1Prior({a}), 2);
    EXPECT_NEAR(res.min_kl, -0.5 * std::log(1 - a * a), 1e-9);
  }
  EXPECT_THROW(numeric_min_kl(Ar1Prior({0.5}), 1), DomainError);
}

// Some starts send trial steps below the std floor; those must be rejected
// by the line search, not thrown.
TEST(NumericMinKl, SurvivesAggressiveStarts) {
  for (std::uint64_t s = 1; s <= 3; ++s)
    for (double a : {0.1, 0.5, 0.9})
      for (std::size_t n : {3u, 8u, 32u}) {
        MinKlOptions opt;
        opt.seed = derive_seed(s, n);
        double min_kl = 0.0;
        ASSERT_NO_THROW(min_kl = numeric_min_kl(Ar1Prior({a}), n, opt).min_kl) << s << " " << a << " " << n;
        EXPECT_NEAR(min_kl, committed_rate_1d(a, n), 1e-6);
      }
}

TEST(NumericMinKl, ArgminMatchesOptimalStds) {
  for (double a : {0.3, 0.8})
    for (std::size_t n : {2u, 5u, 12u}) {
      const auto res = numeric_min_kl(Ar1Prior({a}), n);
      const Vec sd = optimal_posterior_stds(a, n);
      for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(n); ++t)
        EXPECT_NEAR(res.argmin.stds(t, 0), sd(t), 1e-4) << a << " " << n << " " << t;
    }
}

}  // namespace
}  // namespace dvae
