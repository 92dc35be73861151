#include "dvae/gauss_kl.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "dvae/mc_oracle.hpp"
#include "test_util.hpp"

namespace dvae {
namespace {

using testing::dense_gaussian_kl;
using testing::random_case;
using testing::rel_close;

GaussianSeqPosterior make_q(std::initializer_list<double> mu, std::initializer_list<double> sd) {
  Mat m(mu.size(), 1), s(sd.size(), 1);
  int i = 0;
  for (double v : mu) m(i++, 0) = v;
  i = 0;
  for (double v : sd) s(i++, 0) = v;
  return GaussianSeqPosterior(m, s);
}

TEST(KlUnivariate, Examples) {
  EXPECT_EQ(kl_univariate(0, 1, 0, 1), 0.0);
  EXPECT_DOUBLE_EQ(kl_univariate(1, 1, 0, 1), 0.5);
  // 1/2 (3 - ln 4)
  EXPECT_NEAR(kl_univariate(0, 2, 0, 1), 0.806852819440055, 1e-14);
}

TEST(KlUnivariate, AgreesWithMonteCarlo) {
  // A one-step sequence against alpha = 0 is exactly a univariate N(0, 1).
  const auto q = make_q({0.0}, {2.0});
  const auto est = mc_kl_estimate(q, Ar1Prior({0.0}), 1'000'000, 17);
  EXPECT_NEAR(est.mean, kl_univariate(0, 2, 0, 1), 4 * est.stderr_);
}

TEST(KlUnivariate, RejectsNonPositiveSigma) {
  EXPECT_THROW(kl_univariate(0, 0, 0, 1), DomainError);
  EXPECT_THROW(kl_univariate(0, 1, 0, -1), DomainError);
}

TEST(KlSeqClosedForm, TrivialCases) {
  for (double a : {0.0, 0.3, 0.99})
    EXPECT_NEAR(kl_seq_closed_form(make_q({0}, {1}), Ar1Prior({a})).total, 0.0, 1e-15);
  EXPECT_NEAR(kl_seq_closed_form(make_q({0, 0}, {1, 1}), Ar1Prior({0.0})).total, 0.0, 1e-15);
}

TEST(KlSeqClosedForm, FourStepCase) {
  const auto q = make_q({0.3, -0.1, 0.2, 0.0}, {0.9, 1.1, 0.8, 1.0});
  const Ar1Prior p({0.5});
  const auto kl = kl_seq_closed_form(q, p);
  // Dense-covariance evaluation of the same KL.
  EXPECT_NEAR(kl.total, 0.685004111823373, 1e-12);
  const auto est = mc_kl_estimate(q, p, 1'000'000, 4);
  EXPECT_NEAR(kl.total, est.mean, 4 * est.stderr_);
}

TEST(KlSeqClosedForm, TwoDimensionalFixedCase) {
  Mat mu(3, 2), sd(3, 2);
  mu << 0.5, -1.2, 0.1, 0.4, -0.7, 2.0;
  sd << 0.6, 1.3, 1.7, 0.4, 0.9, 2.2;
  const auto kl = kl_seq_closed_form(GaussianSeqPosterior(mu, sd), Ar1Prior({0.3, 0.8}));
  EXPECT_NEAR(kl.total, 15.270699989035741, 1e-11);
}

TEST(KlSeqClosedForm, ShapeMismatch) {
  EXPECT_THROW(kl_seq_closed_form(make_q({0, 0}, {1, 1}), Ar1Prior({0.1, 0.2})), ConfigError);
  EXPECT_THROW(kl_seq_decomposed(make_q({0, 0}, {1, 1}), Ar1Prior({0.1, 0.2})), ConfigError);
}

TEST(KlSeqDecomposed, StrongCorrelationTwoSteps) {
  const auto q = make_q({0, 0}, {1, 1});
  const Ar1Prior p({0.9});
  EXPECT_NEAR(kl_seq_decomposed(q, p), 3.432792291326018, 1e-12);
  EXPECT_TRUE(rel_close(kl_seq_decomposed(q, p), kl_seq_closed_form(q, p).total, 1e-10));
}

TEST(KlSeqProperties, FuzzedInvariants) {
  Rng rng(20190115);
  for (int i = 0; i < 2000; ++i) {
    const auto c = random_case(rng);
    const auto kl = kl_seq_closed_form(c.q, c.p);
    ASSERT_GE(kl.per_cell.minCoeff(), 0.0);
    ASSERT_TRUE(rel_close(kl.total, kl.per_cell.sum(), 1e-10));
    ASSERT_TRUE(rel_close(kl.total, kl_seq_decomposed(c.q, c.p), 1e-10)) << "case " << i;
    ASSERT_TRUE(rel_close(kl.total, dense_gaussian_kl(c.q, c.p), 1e-8)) << "case " << i;

    double by_dim = 0.0;
    for (Eigen::Index k = 0; k < c.q.means.cols(); ++k) {
      GaussianSeqPosterior qk(c.q.means.col(k), c.q.stds.col(k));
      by_dim += kl_seq_closed_form(qk, Ar1Prior({c.p.alpha(k)})).total;
    }
    ASSERT_TRUE(rel_close(kl.total, by_dim, 1e-12));

    if (c.q.steps() >= 2) {
      ASSERT_GE(kl.total, committed_rate(c.p, c.q.steps()) - 1e-9);
    }
  }
}

TEST(KlSeqProperties, CellsDominateCommittedShare) {
  // At the minimizing stds, mu = 0, the cells sum exactly to the bound.
  const double a = 0.7;
  const std::size_t n = 6;
  Mat mu = Mat::Zero(n, 1), sd(n, 1);
  const double a2 = a * a;
  for (std::size_t t = 0; t < n; ++t)
    sd(t, 0) = std::sqrt(t == 0 || t + 1 == n ? 1 - a2 : (1 - a2) / (1 + a2));
  const auto kl = kl_seq_closed_form(GaussianSeqPosterior(mu, sd), Ar1Prior({a}));
  EXPECT_NEAR(kl.total, committed_rate(Ar1Prior({a}), n), 1e-13);
}

TEST(GaussianSeqPosterior, Invariants) {
  EXPECT_THROW(GaussianSeqPosterior(Mat::Zero(2, 1), Mat::Constant(2, 1, 1e-5)), DomainError);
  EXPECT_THROW(GaussianSeqPosterior(Mat::Zero(2, 1), Mat::Ones(3, 1)), ConfigError);
  EXPECT_THROW(GaussianSeqPosterior(Mat::Zero(0, 1), Mat::Ones(0, 1)), ConfigError);
  EXPECT_NO_THROW(GaussianSeqPosterior(Mat::Zero(2, 1), Mat::Constant(2, 1, kSigmaFloor)));
}

}  // namespace
}  // namespace dvae
