#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "dvae/errors.hpp"
#include "dvae/gauss_kl.hpp"
#include "dvae/types.hpp"

namespace dvae {

/// Numerically stable ln(1 + e^x).
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Residual of the independent-posterior feasibility condition,
/// ln(s) - s + 2 delta + 1 with s = sigma^2. Non-negative exactly on the
/// feasible std interval.
inline double independent_feasibility(double sigma, double delta) {
  const double s = sigma * sigma;
  return std::log(s) - s + 2.0 * delta + 1.0;
}

/// Feasible posterior std interval for a N(mu, sigma^2) posterior paired
/// with a N(0, 1) prior that must commit at least `delta` nats per dimension.
struct IndependentDeltaConstraint {
  double delta = 0.0;
  double sigma_low = 1.0;
  double sigma_high = 1.0;
};

/// Endpoints of { sigma > 0 : ln sigma^2 - sigma^2 + 2 delta + 1 >= 0 }.
///
/// In y = ln sigma^2 the residual y - e^y + 2 delta + 1 is concave with its
/// maximum 2 delta at y = 0, so each side of 0 holds exactly one root.
inline IndependentDeltaConstraint feasible_sigma_interval(double delta) {
  if (!(delta >= 0.0) || !std::isfinite(delta))
    throw DomainError("feasible_sigma_interval: delta must be finite and >= 0");
  IndependentDeltaConstraint c;
  c.delta = delta;
  if (delta == 0.0) return c;

  const double shift = 2.0 * delta + 1.0;
  auto residual = [shift](double y) { return y - std::exp(y) + shift; };
  auto bisect = [&](double neg, double pos) {
    // residual(neg) < 0 <= residual(pos)
    for (int it = 0; it < 400; ++it) {
      const double mid = 0.5 * (neg + pos);
      if (mid == neg || mid == pos) break;
      (residual(mid) < 0.0 ? neg : pos) = mid;
    }
    return pos;
  };
  // Below: residual(-shift - 1) = -1 - e^{...} < 0. Above: at s = 4 delta + 4
  // the residual is ln(4 delta + 4) - 2 delta - 3 < 0.
  const double y_low = bisect(-shift - 1.0, 0.0);
  const double y_high = bisect(std::log(4.0 * delta + 4.0), 0.0);
  c.sigma_low = std::exp(0.5 * y_low);
  c.sigma_high = std::exp(0.5 * y_high);
  return c;
}

/// Maps unconstrained network outputs onto the feasible set:
///
///   sigma = lo + (hi - lo) * logistic(raw_sigma)
///   mu    = sqrt(2 delta + 1 + ln sigma^2 - sigma^2) + max(0, raw_mu)
///
/// so that mu^2 >= 2 delta + 1 + ln sigma^2 - sigma^2, which is equivalent
/// to KL(N(mu, sigma^2) || N(0, 1)) >= delta. The square root is required
/// for that implication; without it the offset would have to be squared
/// first, and we keep raw_mu as an additive non-negative offset after the
/// root in either reading.
inline std::pair<double, double> constrain_independent(double raw_mu, double raw_sigma,
                                                       const IndependentDeltaConstraint& c) {
  const double sigma = c.sigma_low + (c.sigma_high - c.sigma_low) * logistic(raw_sigma);
  const double slack = std::max(0.0, independent_feasibility(sigma, c.delta));
  const double mu = std::sqrt(slack) + std::max(0.0, raw_mu);
  return {mu, sigma};
}

/// Temporal posterior: means pass through, stds = softplus(raw) + floor.
/// The committed rate comes from the prior/posterior family mismatch, so
/// no per-sample constraint is applied.
inline GaussianSeqPosterior temporal_posterior(const Mat& raw_mus, const Mat& raw_sigmas) {
  if (raw_mus.rows() != raw_sigmas.rows() || raw_mus.cols() != raw_sigmas.cols())
    throw ConfigError("temporal_posterior: shape mismatch");
  Mat stds = raw_sigmas.unaryExpr([](double r) { return softplus(r) + kSigmaFloor; });
  return GaussianSeqPosterior(raw_mus, std::move(stds));
}

}  // namespace dvae
