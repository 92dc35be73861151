#include "dvae/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include <gtest/gtest.h>

#include "dvae/random.hpp"

namespace dvae::ad {
namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1.5, double hi = 1.5) {
  std::uniform_real_distribution<double> u(lo, hi);
  return Mat::NullaryExpr(r, c, [&] { return u(rng); });
}

TEST(Autodiff, ForwardExamples) {
  Tape t;
  EXPECT_DOUBLE_EQ(softplus(t.constant(Mat::Zero(1, 1))).scalar(), std::log(2.0));
  Rng rng(1);
  const Mat x = random_mat(3, 2, rng);
  EXPECT_EQ(matmul(t.constant(Mat::Identity(3, 3)), t.constant(x)).value(), x);
}

TEST(Autodiff, TanhDerivativeMatchesFiniteDifference) {
  Tape t;
  const Var x = t.variable(Mat::Constant(1, 1, 0.3));
  t.backward(sum(tanh(x)));
  const double analytic = x.grad()(0, 0);
  const double th = std::tanh(0.3);
  EXPECT_NEAR(analytic, 1 - th * th, 1e-15);
  const double h = 1e-5;
  const double cd = (std::tanh(0.3 + h) - std::tanh(0.3 - h)) / (2 * h);
  EXPECT_LE(std::abs(analytic - cd) / std::abs(analytic), 1e-7);
}

TEST(Autodiff, BackwardBasics) {
  Rng rng(2);
  const Mat xv = random_mat(4, 3, rng);
  {
    Tape t;
    const Var x = t.variable(xv);
    t.backward(sum(x));
    EXPECT_EQ(x.grad(), Mat::Ones(4, 3));
  }
  {
    Tape t;
    const Var x = t.variable(xv);
    t.backward(scale(sum(square(x)), 0.5));
    EXPECT_TRUE(x.grad().isApprox(xv, 1e-15));
  }
}

TEST(Autodiff, BackwardRejectsNonScalarRoot) {
  Tape t;
  const Var x = t.variable(Mat::Ones(2, 2));
  EXPECT_THROW(t.backward(square(x)), ContractError);
}

TEST(Autodiff, ShapeErrors) {
  Tape t;
  const Var a = t.variable(Mat::Ones(2, 3));
  const Var b = t.variable(Mat::Ones(3, 2));
  EXPECT_THROW(add(a, b), ConfigError);
  EXPECT_THROW(mul(a, b), ConfigError);
  EXPECT_THROW(matmul(a, a), ConfigError);
  EXPECT_THROW(add_row(a, t.constant(Mat::Ones(1, 2))), ConfigError);
  EXPECT_THROW(slice_cols(a, 2, 2), ConfigError);
  EXPECT_THROW(concat_cols({a, b}), ConfigError);
  EXPECT_THROW(scale_cols(a, Vec::Ones(2)), ConfigError);
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  Tape t;
  const Var c = t.constant(Mat::Ones(2, 2));
  const Var x = t.variable(Mat::Ones(2, 2));
  t.backward(sum(mul(c, x)));
  EXPECT_FALSE(t.has_grad(c.id()));
  EXPECT_EQ(c.grad(), Mat::Zero(2, 2));
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
  Tape t;
  const Var x = t.variable(Mat::Constant(1, 1, 1.7));
  const Var y = mul(x, x);
  t.backward(sum(add(y, mul(y, x))));  // x^2 + x^3
  EXPECT_NEAR(x.grad()(0, 0), 2 * 1.7 + 3 * 1.7 * 1.7, 1e-13);
}

// Every differentiable op passes grad_check at 20 random points.
struct OpCase {
  const char* name;
  int arity;
  ScalarFn fn;
  double lo = -1.5, hi = 1.5;
};

TEST(Autodiff, EveryOpPassesGradCheck) {
  const Vec col_scale = (Vec(3) << 0.5, -1.25, 2.0).finished();
  const std::vector<OpCase> cases = {
      {"add", 2, [](Tape&, const std::vector<Var>& v) { return sum(square(add(v[0], v[1]))); }},
      {"sub", 2, [](Tape&, const std::vector<Var>& v) { return sum(square(sub(v[0], v[1]))); }},
      {"mul", 2, [](Tape&, const std::vector<Var>& v) { return sum(mul(v[0], v[1])); }},
      {"scale", 1, [](Tape&, const std::vector<Var>& v) { return sum(square(scale(v[0], -0.7))); }},
      {"add_scalar", 1,
       [](Tape&, const std::vector<Var>& v) { return sum(square(add_scalar(v[0], 0.4))); }},
      {"matmul", 2,
       [](Tape&, const std::vector<Var>& v) {
         return sum(square(matmul(v[0], slice_rows(concat_rows({v[1], v[1]}), 0, 3))));
       }},
      {"add_row", 2,
       [](Tape&, const std::vector<Var>& v) {
         return sum(square(add_row(v[0], slice_rows(v[1], 0, 1))));
       }},
      {"broadcast_rows", 1,
       [](Tape&, const std::vector<Var>& v) {
         return sum(mul(broadcast_rows(slice_rows(v[0], 1, 1), 3), v[0]));
       }},
      {"scale_cols", 1,
       [col_scale](Tape&, const std::vector<Var>& v) {
         return sum(square(scale_cols(v[0], col_scale)));
       }},
      {"tanh", 1, [](Tape&, const std::vector<Var>& v) { return sum(tanh(v[0])); }},
      {"sigmoid", 1, [](Tape&, const std::vector<Var>& v) { return sum(sigmoid(v[0])); }},
      {"softplus", 1, [](Tape&, const std::vector<Var>& v) { return sum(softplus(v[0])); }},
      {"exp", 1, [](Tape&, const std::vector<Var>& v) { return sum(exp(v[0])); }},
      {"log", 1, [](Tape&, const std::vector<Var>& v) { return sum(log(v[0])); }, 0.2, 3.0},
      {"sqrt", 1, [](Tape&, const std::vector<Var>& v) { return sum(sqrt(v[0])); }, 0.2, 3.0},
      {"square", 1, [](Tape&, const std::vector<Var>& v) { return sum(square(v[0])); }},
      {"relu", 1, [](Tape&, const std::vector<Var>& v) { return sum(square(relu(v[0]))); }},
      {"mean", 1, [](Tape&, const std::vector<Var>& v) { return mean(square(v[0])); }},
      {"row_sum", 1,
       [](Tape&, const std::vector<Var>& v) { return sum(square(row_sum(v[0]))); }},
      {"slice_cols", 1,
       [](Tape&, const std::vector<Var>& v) { return sum(square(slice_cols(v[0], 1, 2))); }},
      {"concat_cols", 2,
       [](Tape&, const std::vector<Var>& v) {
         return sum(tanh(concat_cols({v[0], slice_cols(v[1], 0, 1)})));
       }},
      {"time_axis", 1,
       [](Tape&, const std::vector<Var>& v) {
         // Reverse a 3-step, 1-feature sequence and weight the steps.
         std::vector<Var> steps;
         for (int t = 2; t >= 0; --t) steps.push_back(slice_time(v[0], t, 1));
         const Var rev = concat_time(steps);
         return sum(mul(rev, exp(v[0])));
       }},
      {"normal_log_density", 2,
       [](Tape&, const std::vector<Var>& v) {
         return sum(normal_log_density(v[0], v[1], 0.3));
       }},
      {"normal_log_density_learned_sd", 2,
       [](Tape&, const std::vector<Var>& v) {
         return sum(normal_log_density(v[0], v[1], add_scalar(square(v[0]), 0.5)));
       }},
  };
  Rng rng(2024);
  for (const auto& c : cases) {
    for (int point = 0; point < 20; ++point) {
      std::vector<Mat> params;
      for (int i = 0; i < c.arity; ++i) params.push_back(random_mat(3, 3, rng, c.lo, c.hi));
      if (std::string(c.name) == "relu") {
        // Keep away from the kink.
        for (auto& p : params)
          p = p.unaryExpr([](double v) { return std::abs(v) < 0.05 ? v + 0.1 : v; });
      }
      const auto res = grad_check(c.fn, params, 1e-5);
      ASSERT_LE(res.max_rel_error, 1e-6) << c.name << " point " << point;
    }
  }
}

TEST(GradCheck, LinearFunctionIsExact) {
  Rng rng(3);
  const Mat w = random_mat(4, 4, rng);
  const auto res = grad_check(
      [w](Tape& t, const std::vector<Var>& v) { return sum(mul(t.constant(w), v[0])); },
      {random_mat(4, 4, rng)}, 1e-3);
  EXPECT_LE(res.max_rel_error, 1e-9);
}

TEST(Autodiff, DeterministicValuesAndGradients) {
  Rng rng(4);
  const Mat a = random_mat(5, 4, rng), b = random_mat(4, 3, rng);
  auto run = [&](Mat& ga, Mat& out) {
    Tape t;
    const Var va = t.variable(a), vb = t.variable(b);
    const Var y = sum(softplus(matmul(tanh(va), vb)));
    t.backward(y);
    ga = va.grad();
    out = y.value();
  };
  Mat g1, g2, o1, o2;
  run(g1, o1);
  run(g2, o2);
  EXPECT_EQ(0, std::memcmp(g1.data(), g2.data(), sizeof(double) * g1.size()));
  EXPECT_EQ(o1(0, 0), o2(0, 0));
}

TEST(Autodiff, NoNanOnDocumentedDomains) {
  Tape t;
  const Var x = t.variable((Mat(1, 4) << -800.0, -30.0, 30.0, 800.0).finished());
  const Var y = sum(add(softplus(x), sigmoid(x)));
  t.backward(y);
  EXPECT_TRUE(std::isfinite(y.scalar()));
  EXPECT_TRUE(x.grad().allFinite());
}

}  // namespace
}  // namespace dvae::ad
