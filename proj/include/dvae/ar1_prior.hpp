#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dvae/errors.hpp"
#include "dvae/random.hpp"
#include "dvae/types.hpp"

namespace dvae {

/// Stationary AR(1) prior over a latent sequence, one independent process
/// per latent dimension:
///
///   z_1 ~ N(0, 1),   z_t = alpha_k z_{t-1} + eps_t,   eps_t ~ N(0, 1 - alpha_k^2)
///
/// The noise scale is tied to alpha so that every marginal has unit variance.
class Ar1Prior {
 public:
  /// Rejects alphas outside [0, kAlphaMax] unless `clamp` is set, in which
  /// case they are clipped into that range. NaN is always rejected.
  explicit Ar1Prior(std::vector<double> alphas, bool clamp = false) {
    if (alphas.empty()) throw DomainError("Ar1Prior: need at least one dimension");
    for (double& a : alphas) {
      if (std::isnan(a)) throw DomainError("Ar1Prior: alpha is NaN");
      if (a < 0.0 || a > kAlphaMax) {
        if (!clamp)
          throw DomainError("Ar1Prior: alpha " + std::to_string(a) +
                            " outside [0, 1 - 1e-6]");
        a = std::clamp(a, 0.0, kAlphaMax);
      }
    }
    alphas_ = std::move(alphas);
    noise_stds_.reserve(alphas_.size());
    for (double a : alphas_) noise_stds_.push_back(std::sqrt(1.0 - a * a));
  }

  std::size_t dims() const { return alphas_.size(); }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& noise_stds() const { return noise_stds_; }
  double alpha(std::size_t k) const { return alphas_[k]; }
  double noise_std(std::size_t k) const { return noise_stds_[k]; }

 private:
  std::vector<double> alphas_;
  std::vector<double> noise_stds_;
};

inline Ar1Prior make_prior(std::span<const double> alphas, bool clamp = false) {
  return Ar1Prior(std::vector<double>(alphas.begin(), alphas.end()), clamp);
}

/// d values equally spaced over [a_min, a_max], both ends included.
inline std::vector<double> linspace_alphas(double a_min, double a_max, std::size_t d) {
  if (d < 1) throw DomainError("linspace_alphas: d must be >= 1");
  if (!(a_min >= 0.0 && a_min <= a_max && a_max < 1.0))
    throw DomainError("linspace_alphas: need 0 <= a_min <= a_max < 1");
  std::vector<double> out(d);
  if (d == 1) {
    out[0] = a_min;
    return out;
  }
  const double step = (a_max - a_min) / static_cast<double>(d - 1);
  for (std::size_t i = 0; i < d; ++i) out[i] = a_min + step * static_cast<double>(i);
  out.back() = a_max;
  return out;
}

/// Draws one sequence (n x d). Deterministic in `seed`.
inline Mat sample_prior(const Ar1Prior& p, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw DomainError("sample_prior: n must be >= 1");
  Rng rng(seed);
  const Mat eps = standard_normal(static_cast<Eigen::Index>(n),
                                  static_cast<Eigen::Index>(p.dims()), rng);
  Mat z(eps.rows(), eps.cols());
  for (Eigen::Index k = 0; k < z.cols(); ++k) {
    z(0, k) = eps(0, k);
    for (Eigen::Index t = 1; t < z.rows(); ++t)
      z(t, k) = p.alpha(k) * z(t - 1, k) + p.noise_std(k) * eps(t, k);
  }
  return z;
}

inline double normal_log_density(double x, double mean, double std) {
  const double r = (x - mean) / std;
  return -0.5 * kLog2Pi - std::log(std) - 0.5 * r * r;
}

/// Joint log-density of z (n x d) under the prior.
inline double log_prob(const Ar1Prior& p, const Mat& z) {
  if (z.rows() < 1 || static_cast<std::size_t>(z.cols()) != p.dims())
    throw ConfigError("log_prob: z has " + std::to_string(z.cols()) +
                      " columns, prior has " + std::to_string(p.dims()));
  double lp = 0.0;
  for (Eigen::Index k = 0; k < z.cols(); ++k) {
    lp += normal_log_density(z(0, k), 0.0, 1.0);
    for (Eigen::Index t = 1; t < z.rows(); ++t)
      lp += normal_log_density(z(t, k), p.alpha(k) * z(t - 1, k), p.noise_std(k));
  }
  return lp;
}

/// Committed rate of a single dimension:  1/2 [(n-2) ln(1+a^2) - ln(1-a^2)].
inline double committed_rate_1d(double alpha, std::size_t n) {
  if (n < 2) throw DomainError("committed_rate: sequence length must be >= 2");
  const double a2 = alpha * alpha;
  return 0.5 * (static_cast<double>(n - 2) * std::log1p(a2) - std::log1p(-a2));
}

/// Minimum KL, in nats, between any mean-field Gaussian posterior over n
/// timesteps and this prior. Sums over dimensions.
inline double committed_rate(const Ar1Prior& p, std::size_t n) {
  double total = 0.0;
  for (double a : p.alphas()) total += committed_rate_1d(a, n);
  return total;
}

/// Stds of the KL-minimizing mean-field posterior (its means are zero):
/// sigma^2 = 1 - a^2 at both ends and (1 - a^2) / (1 + a^2) inside.
inline Vec optimal_posterior_stds(double alpha, std::size_t n) {
  if (n < 2) throw DomainError("optimal_posterior_stds: n must be >= 2");
  const double a2 = alpha * alpha;
  Vec sd = Vec::Constant(static_cast<Eigen::Index>(n), std::sqrt((1.0 - a2) / (1.0 + a2)));
  sd(0) = sd(sd.size() - 1) = std::sqrt(1.0 - a2);
  return sd;
}

/// Inverse of committed_rate: d equal alphas whose total bound is `delta`.
/// Bisection is valid because for n >= 3 the bound is continuous and
/// strictly increasing in alpha on [0, kAlphaMax].
inline std::vector<double> solve_alpha_for_rate(double delta, std::size_t n, std::size_t d) {
  if (!(delta >= 0.0)) throw DomainError("solve_alpha_for_rate: delta must be >= 0");
  if (n < 3) throw DomainError("solve_alpha_for_rate: n must be >= 3");
  if (d < 1) throw DomainError("solve_alpha_for_rate: d must be >= 1");

  const double target = delta / static_cast<double>(d);
  if (target == 0.0) return std::vector<double>(d, 0.0);
  const double ceiling = committed_rate_1d(kAlphaMax, n);
  if (target > ceiling)
    throw InfeasibleError("solve_alpha_for_rate: " + std::to_string(delta) +
                          " nats exceeds the bound at alpha = 1 - 1e-6 (" +
                          std::to_string(ceiling * static_cast<double>(d)) + ")");

  double lo = 0.0;
  double hi = kAlphaMax;
  for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (committed_rate_1d(mid, n) < target)
      lo = mid;
    else
      hi = mid;
  }
  const double lo_err = std::abs(committed_rate_1d(lo, n) - target);
  const double hi_err = std::abs(committed_rate_1d(hi, n) - target);
  return std::vector<double>(d, lo_err <= hi_err ? lo : hi);
}

}  // namespace dvae
