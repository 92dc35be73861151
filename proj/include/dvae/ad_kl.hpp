#pragma once

// Differentiable versions of the analytic KL terms, on the time-major
// B x (n*d) layout used by the models.

#include <cmath>

#include "dvae/ar1_prior.hpp"
#include "dvae/autodiff.hpp"
#include "dvae/delta_constraints.hpp"

namespace dvae::ad {

/// Per-cell KL (B x n*d) of mean-field posteriors against the AR(1) prior,
/// with the same cell attribution as kl_seq_closed_form.
inline Var seq_kl_cells(const Var& mu, const Var& sigma, const Ar1Prior& p, Eigen::Index n) {
  const Eigen::Index d = static_cast<Eigen::Index>(p.dims());
  if (mu.cols() != n * d || sigma.cols() != n * d || mu.rows() != sigma.rows())
    throw ConfigError("seq_kl_cells: expected B x " + std::to_string(n * d) + " inputs");
  Tape& tape = *mu.tape();

  // 2 * cell = coef * s - ln s + offset + (mean term), s = sigma^2.
  Vec coef(n * d), alpha_tiled((n - 1) * d), c_tiled((n - 1) * d);
  Mat offset(1, n * d);
  for (Eigen::Index k = 0; k < d; ++k) {
    const double a = p.alpha(static_cast<std::size_t>(k));
    const double a2 = a * a;
    const double c = 1.0 / (1.0 - a2);
    for (Eigen::Index t = 0; t < n; ++t) {
      const Eigen::Index j = t * d + k;
      if (n == 1) {
        coef(j) = 1.0;
        offset(0, j) = -1.0;
      } else if (t == 0) {
        coef(j) = c;
        offset(0, j) = -1.0;
      } else if (t + 1 < n) {
        coef(j) = (1.0 + a2) * c;
        offset(0, j) = -std::log(c) - 1.0;
      } else {
        coef(j) = c;
        offset(0, j) = -std::log(c) - 1.0;
      }
      if (t > 0) {
        alpha_tiled((t - 1) * d + k) = a;
        c_tiled((t - 1) * d + k) = c;
      }
    }
  }

  const Var var_term = scale_cols(square(sigma), coef);
  const Var log_term = scale(log(sigma), -2.0);
  Var mean_term = square(slice_time(mu, 0, d));
  if (n > 1) {
    const Var cur = slice_time(mu, 1, n - 1, d);
    const Var prev = slice_time(mu, 0, n - 1, d);
    const Var innov = sub(cur, scale_cols(prev, alpha_tiled));
    mean_term = concat_cols({mean_term, scale_cols(square(innov), c_tiled)});
  }
  const Var total = add_row(add(add(var_term, log_term), mean_term), tape.constant(offset));
  return scale(total, 0.5);
}

/// Per-cell KL(N(mu, sigma^2) || N(0, 1)).
inline Var standard_normal_kl_cells(const Var& mu, const Var& sigma) {
  const Var s = square(sigma);
  const Var two_kl = add_scalar(sub(add(s, square(mu)), scale(log(sigma), 2.0)), -1.0);
  return scale(two_kl, 0.5);
}

/// Differentiable independent-delta parameterization (see
/// constrain_independent); returns {mu, sigma}.
inline std::pair<Var, Var> constrain_independent(const Var& raw_mu, const Var& raw_sigma,
                                                 const IndependentDeltaConstraint& c) {
  const Var sigma =
      add_scalar(scale(sigmoid(raw_sigma), c.sigma_high - c.sigma_low), c.sigma_low);
  // slack = 2 delta + 1 + ln s - s. The clamp keeps the root differentiable
  // when sigma sits on an endpoint; it only raises mu.
  const Var slack = add_scalar(sub(scale(log(sigma), 2.0), square(sigma)), 2.0 * c.delta + 1.0);
  const Var mu = add(sqrt(clamp_min(slack, 1e-12)), relu(raw_mu));
  return {mu, sigma};
}

}  // namespace dvae::ad
