#pragma once

// Verification oracles for the analytic KL machinery. Nothing here calls
// committed_rate; agreement with it is evidence, not a tautology.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "dvae/ar1_prior.hpp"
#include "dvae/errors.hpp"
#include "dvae/gauss_kl.hpp"
#include "dvae/random.hpp"

namespace dvae {

struct McEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t units = 0;  // independent averaging units (pairs when antithetic)
};

/// Samples are drawn in chunks of this many units; chunk c uses the stream
/// derive_seed(seed, c), so the estimate does not depend on scheduling.
inline constexpr std::size_t kMcChunkUnits = 4096;

/// Monte-Carlo estimate of E_q[log q(z) - log p(z)] with its standard
/// error. With `antithetic`, samples come in (eps, -eps) pairs and each
/// pair average is one unit; pairing removes the part of the log ratio that
/// is odd in eps, which dominates when posterior means sit far from the
/// prior's.
inline McEstimate mc_kl_estimate(const GaussianSeqPosterior& q, const Ar1Prior& p,
                                 std::size_t n_samples, std::uint64_t seed,
                                 bool antithetic = true) {
  if (n_samples < 1000) throw DomainError("mc_kl_estimate: need at least 1000 samples");
  if (q.dims() != p.dims()) throw ConfigError("mc_kl_estimate: dimension mismatch");

  const Eigen::Index n = q.means.rows();
  const Eigen::Index d = q.means.cols();
  // The -1/2 ln 2 pi terms cancel between q and p.
  double log_ratio_const = 0.0;
  for (Eigen::Index k = 0; k < d; ++k) {
    for (Eigen::Index t = 0; t < n; ++t) log_ratio_const -= std::log(q.stds(t, k));
    log_ratio_const += static_cast<double>(n - 1) * std::log(p.noise_std(k));
  }
  std::vector<double> inv_noise_var(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    const double s = p.noise_std(k);
    inv_noise_var[k] = 1.0 / (s * s);
  }

  Mat eps(n, d);
  auto log_ratio = [&](double sign) {
    double v = log_ratio_const;
    for (Eigen::Index k = 0; k < d; ++k) {
      const double a = p.alpha(k);
      double prev = 0.0;
      for (Eigen::Index t = 0; t < n; ++t) {
        const double e = sign * eps(t, k);
        const double z = q.means(t, k) + q.stds(t, k) * e;
        v -= 0.5 * e * e;
        if (t == 0) {
          v += 0.5 * z * z;
        } else {
          const double r = z - a * prev;
          v += 0.5 * r * r * inv_noise_var[k];
        }
        prev = z;
      }
    }
    return v;
  };

  const std::size_t units = antithetic ? (n_samples + 1) / 2 : n_samples;
  std::normal_distribution<double> normal(0.0, 1.0);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t begin = 0, chunk = 0; begin < units; begin += kMcChunkUnits, ++chunk) {
    Rng rng(derive_seed(seed, chunk));
    const std::size_t end = std::min(units, begin + kMcChunkUnits);
    for (std::size_t u = begin; u < end; ++u) {
      for (Eigen::Index t = 0; t < n; ++t)
        for (Eigen::Index k = 0; k < d; ++k) eps(t, k) = normal(rng);
      const double v = antithetic ? 0.5 * (log_ratio(1.0) + log_ratio(-1.0)) : log_ratio(1.0);
      sum += v;
      sum_sq += v * v;
    }
  }
  McEstimate est;
  est.units = units;
  est.mean = sum / static_cast<double>(units);
  const double var = std::max(0.0, (sum_sq - sum * est.mean) / static_cast<double>(units - 1));
  est.stderr_ = std::sqrt(var / static_cast<double>(units));
  return est;
}

struct MinKlResult {
  double min_kl = 0.0;
  GaussianSeqPosterior argmin;
  double restart_spread = 0.0;  // max - min of the per-restart minima
  std::size_t iterations = 0;   // of the best restart
};

struct MinKlOptions {
  int restarts = 5;
  std::size_t max_iterations = 100000;
  double grad_tolerance = 1e-10;
  std::uint64_t seed = 0x5eed;
};

/// Minimizes kl_seq_closed_form over all mean-field posteriors of length n
/// by gradient descent in (mu, log sigma) with backtracking line search,
/// from several random starts. Stops at ||grad|| <= grad_tolerance or
/// max_iterations.
inline MinKlResult numeric_min_kl(const Ar1Prior& p, std::size_t n,
                                  const MinKlOptions& opt = {}) {
  if (n < 2) throw DomainError("numeric_min_kl: n must be >= 2");
  const Eigen::Index steps = static_cast<Eigen::Index>(n);
  const Eigen::Index d = static_cast<Eigen::Index>(p.dims());

  // Trial steps that leave the representable std range are rejected by the
  // line search rather than raised.
  const double log_floor = std::log(kSigmaFloor);
  auto objective = [&](const Mat& mu, const Mat& log_sd) {
    if (!(log_sd.minCoeff() >= log_floor) || !mu.allFinite() || !(log_sd.maxCoeff() < 300.0))
      return std::numeric_limits<double>::infinity();
    return kl_seq_closed_form(GaussianSeqPosterior(mu, log_sd.array().exp().matrix()), p).total;
  };
  // Hand-derived gradient of the closed form, w.r.t. mu and log sigma.
  auto gradient = [&](const Mat& mu, const Mat& log_sd, Mat& g_mu, Mat& g_ls) {
    for (Eigen::Index k = 0; k < d; ++k) {
      const double a = p.alpha(k);
      const double c = 1.0 / (1.0 - a * a);
      for (Eigen::Index j = 0; j < steps; ++j) {
        double gm = j == 0 ? mu(0, k) : c * (mu(j, k) - a * mu(j - 1, k));
        if (j + 1 < steps) gm -= a * c * (mu(j + 1, k) - a * mu(j, k));
        g_mu(j, k) = gm;

        const double s = std::exp(2.0 * log_sd(j, k));
        double coef;
        if (j == 0)
          coef = steps > 1 ? c : 1.0;
        else if (j + 1 < steps)
          coef = (1.0 + a * a) * c;
        else
          coef = c;
        g_ls(j, k) = coef * s - 1.0;
      }
    }
  };

  Rng rng(opt.seed);
  std::uniform_real_distribution<double> init(-1.0, 1.0);
  double best = std::numeric_limits<double>::infinity();
  double worst = -best;
  Mat best_mu, best_ls;
  std::size_t best_iters = 0;
  double best_grad = std::numeric_limits<double>::infinity();

  for (int r = 0; r < std::max(1, opt.restarts); ++r) {
    Mat mu = Mat::NullaryExpr(steps, d, [&] { return init(rng); });
    Mat ls = Mat::NullaryExpr(steps, d, [&] { return init(rng); });
    Mat g_mu(steps, d), g_ls(steps, d);
    double f = objective(mu, ls);
    double step = 0.1;
    double gnorm = 0.0;
    std::size_t it = 0;
    for (; it < opt.max_iterations; ++it) {
      gradient(mu, ls, g_mu, g_ls);
      const double g2 = g_mu.squaredNorm() + g_ls.squaredNorm();
      gnorm = std::sqrt(g2);
      if (gnorm <= opt.grad_tolerance) break;
      step *= 2.0;
      bool moved = false;
      while (step > 1e-20) {
        Mat mu_new = mu - step * g_mu;
        Mat ls_new = ls - step * g_ls;
        const double f_new = objective(mu_new, ls_new);
        const double decrease = 0.5 * step * g2;
        // Near the optimum the Armijo margin drops below the rounding of f;
        // there any non-increasing step is taken and the gradient decides.
        const bool rounding = decrease < 1e-13 * std::max(1.0, std::abs(f));
        if (f_new <= f - decrease || (rounding && f_new <= f)) {
          mu = std::move(mu_new);
          ls = std::move(ls_new);
          f = f_new;
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (!moved) break;
    }
    worst = std::max(worst, f);
    if (f < best) {
      best = f;
      best_mu = mu;
      best_ls = ls;
      best_iters = it;
      best_grad = gnorm;
    }
  }
  if (!(best_grad <= 1e-6))
    throw ConvergenceError("numeric_min_kl: no restart converged (grad norm " +
                               std::to_string(best_grad) + ")",
                           best);
  MinKlResult out{best, GaussianSeqPosterior(best_mu, best_ls.array().exp().matrix()),
                  worst - best, best_iters};
  return out;
}

}  // namespace dvae
