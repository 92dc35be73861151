#include "dvae/ar1_prior.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include <gtest/gtest.h>

#include "dvae/mc_oracle.hpp"

namespace dvae {
namespace {

TEST(MakePrior, NoiseScales) {
  EXPECT_EQ(make_prior(std::vector<double>{0.0}).noise_stds(), std::vector<double>{1.0});
  EXPECT_DOUBLE_EQ(Ar1Prior({0.6}).noise_std(0), 0.8);
  const Ar1Prior p({0.5, 0.95});
  EXPECT_DOUBLE_EQ(p.noise_std(0), std::sqrt(0.75));
  EXPECT_DOUBLE_EQ(p.noise_std(1), std::sqrt(1 - 0.95 * 0.95));
}

TEST(MakePrior, RangeChecks) {
  EXPECT_THROW(Ar1Prior({1.0}), DomainError);
  EXPECT_THROW(Ar1Prior({-0.1}), DomainError);
  EXPECT_THROW(Ar1Prior({std::nan("")}), DomainError);
  EXPECT_THROW(Ar1Prior(std::vector<double>{}), DomainError);
  EXPECT_NO_THROW(Ar1Prior({kAlphaMax}));
  const Ar1Prior clamped({1.5, -0.2}, /*clamp=*/true);
  EXPECT_EQ(clamped.alpha(0), kAlphaMax);
  EXPECT_EQ(clamped.alpha(1), 0.0);
}

TEST(LinspaceAlphas, Examples) {
  EXPECT_EQ(linspace_alphas(0.5, 0.95, 2), (std::vector<double>{0.5, 0.95}));
  EXPECT_EQ(linspace_alphas(0.3, 0.3, 3), (std::vector<double>{0.3, 0.3, 0.3}));
  EXPECT_EQ(linspace_alphas(0.2, 0.4, 2), (std::vector<double>{0.2, 0.4}));
  EXPECT_EQ(linspace_alphas(0.2, 0.4, 1), (std::vector<double>{0.2}));
  const auto five = linspace_alphas(0.0, 0.8, 5);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(five[i], 0.2 * i, 1e-15);
  EXPECT_THROW(linspace_alphas(0.5, 0.4, 2), DomainError);
  EXPECT_THROW(linspace_alphas(0.5, 1.0, 2), DomainError);
  EXPECT_THROW(linspace_alphas(0.1, 0.2, 0), DomainError);
}

TEST(SamplePrior, IndependentCaseHasUnitVariance) {
  const Mat z = sample_prior(Ar1Prior({0.0}), 10000, 3);
  const double mean = z.mean();
  const double var = (z.array() - mean).square().sum() / double(z.size() - 1);
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(SamplePrior, LagOneAutocorrelation) {
  const Ar1Prior p({0.9});
  double num = 0.0, den = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Mat z = sample_prior(p, 10000, seed);
    for (Eigen::Index t = 1; t < z.rows(); ++t) num += z(t, 0) * z(t - 1, 0);
    den += z.col(0).squaredNorm();
  }
  EXPECT_NEAR(num / den, 0.9, 0.02);
}

TEST(SamplePrior, StationaryMarginalsPerTimestep) {
  const Ar1Prior p({0.9, 0.3});
  const std::size_t n = 16, runs = 10000;
  Mat sum_sq = Mat::Zero(n, 2);
  for (std::size_t r = 0; r < runs; ++r) sum_sq += sample_prior(p, n, 1000 + r).array().square().matrix();
  sum_sq /= double(runs);
  for (Eigen::Index t = 0; t < sum_sq.rows(); ++t)
    for (Eigen::Index k = 0; k < 2; ++k) EXPECT_NEAR(sum_sq(t, k), 1.0, 0.05) << t << "," << k;
}

TEST(SamplePrior, Deterministic) {
  const Ar1Prior p({0.4, 0.8});
  const Mat a = sample_prior(p, 50, 99);
  const Mat b = sample_prior(p, 50, 99);
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(double) * a.size()));
  EXPECT_NE(a, sample_prior(p, 50, 100));
}

TEST(LogProb, Examples) {
  const double half_log_2pi = 0.5 * std::log(2 * std::numbers::pi);
  EXPECT_DOUBLE_EQ(log_prob(Ar1Prior({0.7}), Mat::Zero(1, 1)), -half_log_2pi);
  EXPECT_NEAR(log_prob(Ar1Prior({0.6}), Mat::Zero(2, 1)), -1.614733515095136, 1e-14);
  EXPECT_THROW(log_prob(Ar1Prior({0.6}), Mat::Zero(2, 2)), ConfigError);
}

TEST(LogProb, MatchesBivariateNormal) {
  Mat z(2, 1);
  z << 0.4, -0.3;
  // scipy multivariate_normal([0,0], [[1,.6],[.6,1]]).logpdf([0.4,-0.3])
  EXPECT_NEAR(log_prob(Ar1Prior({0.6}), z), -1.922546015095136, 1e-13);
}

TEST(LogProb, QuadratureOracle) {
  // Integrating the n = 2 joint density over z_1 must give the stationary
  // N(0, 1) marginal of z_2; integrating over both gives total mass 1.
  const Ar1Prior p({0.8});
  const double h = 0.01, lim = 9.0;
  double mass = 0.0;
  for (double z2 : {-1.3, 0.0, 0.7, 2.1}) {
    double marginal = 0.0;
    for (double z1 = -lim; z1 <= lim; z1 += h) {
      Mat z(2, 1);
      z << z1, z2;
      marginal += std::exp(log_prob(p, z)) * h;
    }
    EXPECT_NEAR(std::log(marginal), normal_log_density(z2, 0, 1), 1e-9) << z2;
  }
  for (double z1 = -lim; z1 <= lim; z1 += 0.05)
    for (double z2 = -lim; z2 <= lim; z2 += 0.05) {
      Mat z(2, 1);
      z << z1, z2;
      mass += std::exp(log_prob(p, z)) * 0.05 * 0.05;
    }
  EXPECT_NEAR(mass, 1.0, 1e-8);
}

TEST(CommittedRate, Examples) {
  for (std::size_t n : {2u, 3u, 32u, 1000u}) EXPECT_EQ(committed_rate(Ar1Prior({0.0}), n), 0.0);
  EXPECT_NEAR(committed_rate(Ar1Prior({0.5}), 32), 3.490994305939037, 1e-12);
  EXPECT_NEAR(committed_rate(Ar1Prior({0.5, 0.95}), 32),
              committed_rate(Ar1Prior({0.5}), 32) + committed_rate(Ar1Prior({0.95}), 32), 1e-13);
  EXPECT_NEAR(committed_rate(Ar1Prior({0.9}), 2), -0.5 * std::log(1 - 0.81), 1e-14);
  EXPECT_THROW(committed_rate(Ar1Prior({0.5}), 1), DomainError);
}

TEST(CommittedRate, ReportedImageModelTotals) {
  // 32 rows, alphas linearly spaced; totals reported as 79.44 and 666.6
  // bits per image.
  const double low = nats_to_bits(committed_rate(Ar1Prior(linspace_alphas(0.5, 0.95, 8)), 32));
  const double high = nats_to_bits(committed_rate(Ar1Prior(linspace_alphas(0.5, 0.99, 64)), 32));
  EXPECT_NEAR(low, 79.44, 0.01);
  EXPECT_NEAR(high, 666.6, 0.05);
}

TEST(CommittedRate, MatchesNumericMinimum) {
  const auto res = numeric_min_kl(Ar1Prior({0.5}), 32);
  EXPECT_NEAR(res.min_kl, committed_rate(Ar1Prior({0.5}), 32), 1e-6);
}

TEST(CommittedRate, StrictlyIncreasingInAlpha) {
  for (std::size_t n : {3u, 8u, 32u}) {
    double prev = committed_rate_1d(0.0, n);
    for (double a = 0.001; a < kAlphaMax; a += 0.001) {
      const double cur = committed_rate_1d(a, n);
      ASSERT_GT(cur, prev) << "n=" << n << " a=" << a;
      prev = cur;
    }
  }
}

TEST(OptimalStds, Examples) {
  const Vec sd = optimal_posterior_stds(0.9, 4);
  EXPECT_DOUBLE_EQ(sd(0) * sd(0), 1 - 0.81);
  EXPECT_DOUBLE_EQ(sd(3) * sd(3), 1 - 0.81);
  EXPECT_NEAR(sd(1) * sd(1), 0.104972375690608, 1e-15);
  EXPECT_EQ(optimal_posterior_stds(0.0, 3), Vec::Ones(3));
  EXPECT_THROW(optimal_posterior_stds(0.5, 1), DomainError);
}

// Plugging the optimal stds (zero means) into the closed form recovers the bound.
TEST(OptimalStds, AttainCommittedRate) {
  for (double a : {0.1, 0.5, 0.9})
    for (std::size_t n : {2u, 3u, 8u, 32u}) {
      const Vec sd = optimal_posterior_stds(a, n);
      const GaussianSeqPosterior q(Mat::Zero(sd.size(), 1), sd);
      EXPECT_NEAR(kl_seq_closed_form(q, Ar1Prior({a})).total, committed_rate_1d(a, n), 1e-12);
    }
}

TEST(SolveAlpha, Examples) {
  EXPECT_EQ(solve_alpha_for_rate(0.0, 10, 3), std::vector<double>(3, 0.0));
  const auto a = solve_alpha_for_rate(3.4908, 32, 1);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_NEAR(a[0], 0.5, 1e-4);
  const auto exact = solve_alpha_for_rate(committed_rate(Ar1Prior({0.5}), 32), 32, 1);
  EXPECT_NEAR(exact[0], 0.5, 1e-6);
  EXPECT_THROW(solve_alpha_for_rate(1e6, 8, 1), InfeasibleError);
  EXPECT_THROW(solve_alpha_for_rate(-1.0, 8, 1), DomainError);
  EXPECT_THROW(solve_alpha_for_rate(1.0, 2, 1), DomainError);
}

TEST(SolveAlpha, SplitsRateEquallyAcrossDims) {
  const auto a = solve_alpha_for_rate(2.0, 24, 4);
  ASSERT_EQ(a.size(), 4u);
  for (double v : a) EXPECT_EQ(v, a[0]);
  EXPECT_NEAR(committed_rate(Ar1Prior(a), 24), 2.0, 1e-9);
}

TEST(SolveAlpha, RoundTrip) {
  for (std::size_t n : {3u, 5u, 8u, 24u, 32u, 100u})
    for (double alpha = 0.0; alpha < 0.999; alpha += 0.037) {
      const double delta = committed_rate(Ar1Prior({alpha, alpha}), n);
      const auto back = solve_alpha_for_rate(delta, n, 2);
      ASSERT_NEAR(back[0], alpha, 1e-6) << "n=" << n;
      ASSERT_NEAR(committed_rate(Ar1Prior(back), n), delta, 1e-9);
    }
}

}  // namespace
}  // namespace dvae
