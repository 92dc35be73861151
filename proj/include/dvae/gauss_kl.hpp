#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "dvae/ar1_prior.hpp"
#include "dvae/errors.hpp"
#include "dvae/types.hpp"

namespace dvae {

/// Mean-field Gaussian posterior over a latent sequence: one independent
/// N(mean(t, k), std(t, k)^2) per timestep t and dimension k.
struct GaussianSeqPosterior {
  Mat means;  // n x d
  Mat stds;   // n x d, every entry >= kSigmaFloor

  GaussianSeqPosterior(Mat means_in, Mat stds_in)
      : means(std::move(means_in)), stds(std::move(stds_in)) {
    if (means.rows() < 1 || means.cols() < 1)
      throw ConfigError("GaussianSeqPosterior: need n >= 1 and d >= 1");
    if (means.rows() != stds.rows() || means.cols() != stds.cols())
      throw ConfigError("GaussianSeqPosterior: means and stds differ in shape");
    if (!means.allFinite() || !stds.allFinite())
      throw DomainError("GaussianSeqPosterior: non-finite parameter");
    if (stds.minCoeff() < kSigmaFloor)
      throw DomainError("GaussianSeqPosterior: std below floor");
  }

  std::size_t steps() const { return static_cast<std::size_t>(means.rows()); }
  std::size_t dims() const { return static_cast<std::size_t>(means.cols()); }
};

struct KlBreakdown {
  double total = 0.0;
  Mat per_cell;  // n x d, each entry >= 0
};

namespace detail {

// x - 1 - ln x, the non-negative convex kernel shared by every KL term here.
inline double kl_kernel(double x) {
  const double u = x - 1.0;
  return std::max(0.0, u - std::log1p(u));
}

inline void check_shapes(const GaussianSeqPosterior& q, const Ar1Prior& p) {
  if (q.dims() != p.dims())
    throw ConfigError("sequence KL: posterior has " + std::to_string(q.dims()) +
                      " dims, prior has " + std::to_string(p.dims()));
}

}  // namespace detail

/// KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2)) in nats.
inline double kl_univariate(double mu_q, double sigma_q, double mu_p, double sigma_p) {
  if (!(sigma_q > 0.0) || !(sigma_p > 0.0))
    throw DomainError("kl_univariate: standard deviations must be positive");
  const double ratio = sigma_q / sigma_p;
  const double dm = (mu_p - mu_q) / sigma_p;
  return 0.5 * (detail::kl_kernel(ratio * ratio) + dm * dm);
}

/// Exact KL of a mean-field posterior against the AR(1) prior.
///
/// Per dimension, with c = 1 / (1 - a^2):
///
///   2 KL = f(s_1) + m_1^2
///        + sum_{i>=2} [ f(c s_i) + c (m_i - a m_{i-1})^2 + c a^2 s_{i-1} ]
///
/// where s_i = sigma_i^2 and f(x) = x - ln x - 1. The a^2 s_{i-1} term is
/// credited to cell i-1, so every cell depends on a single sigma and is
/// bounded below by its share of the committed rate.
inline KlBreakdown kl_seq_closed_form(const GaussianSeqPosterior& q, const Ar1Prior& p) {
  detail::check_shapes(q, p);
  const Eigen::Index n = q.means.rows();
  KlBreakdown out;
  out.per_cell.resize(n, q.means.cols());
  for (Eigen::Index k = 0; k < q.means.cols(); ++k) {
    const double a = p.alpha(static_cast<std::size_t>(k));
    const double a2 = a * a;
    const double c = 1.0 / (1.0 - a2);
    for (Eigen::Index t = 0; t < n; ++t) {
      const double s = q.stds(t, k) * q.stds(t, k);
      const bool has_next = t + 1 < n;
      double cell;
      if (t == 0) {
        const double m = q.means(0, k);
        cell = has_next ? detail::kl_kernel(c * s) - std::log1p(-a2) + m * m
                        : detail::kl_kernel(s) + m * m;
      } else {
        const double dm = q.means(t, k) - a * q.means(t - 1, k);
        cell = has_next ? detail::kl_kernel((1.0 + a2) * c * s) + std::log1p(a2)
                        : detail::kl_kernel(c * s);
        cell += c * dm * dm;
      }
      out.per_cell(t, k) = 0.5 * cell;
    }
  }
  out.total = out.per_cell.sum();
  return out;
}

/// Same KL, evaluated through the chain rule of KL divergence:
///
///   KL(q(z_1) || p(z_1)) + sum_{i>=2} E_{z_{i-1} ~ q} KL(q(z_i) || p(z_i | z_{i-1}))
///
/// using E[(m_i - a z_{i-1})^2] = (m_i - a m_{i-1})^2 + a^2 sigma_{i-1}^2.
inline double kl_seq_decomposed(const GaussianSeqPosterior& q, const Ar1Prior& p) {
  detail::check_shapes(q, p);
  double total = 0.0;
  for (Eigen::Index k = 0; k < q.means.cols(); ++k) {
    const double a = p.alpha(static_cast<std::size_t>(k));
    const double s_eps = p.noise_std(static_cast<std::size_t>(k));
    total += kl_univariate(q.means(0, k), q.stds(0, k), 0.0, 1.0);
    for (Eigen::Index t = 1; t < q.means.rows(); ++t) {
      const double prev_sd = q.stds(t - 1, k);
      total += kl_univariate(q.means(t, k), q.stds(t, k), a * q.means(t - 1, k), s_eps) +
               0.5 * a * a * prev_sd * prev_sd / (s_eps * s_eps);
    }
  }
  return total;
}

}  // namespace dvae
