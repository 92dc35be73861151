#pragma once

// Linear-Gaussian AR(1) fitted to the aggregate posterior after training.
// Used for evaluation only; it never feeds gradients back into the model.

#include <cmath>
#include <vector>

#include "dvae/ar1_prior.hpp"
#include "dvae/errors.hpp"
#include "dvae/gauss_kl.hpp"
#include "dvae/types.hpp"

namespace dvae {

/// Per dimension k:
///   z_1 ~ N(init_mean_k, init_std_k^2)
///   z_t ~ N(a_k z_{t-1} + b_k, s_k^2)
/// The initial-step parameters are not in the textbook linear-Gaussian
/// model; without them a fitted prior could not represent a shifted first
/// step at all.
struct AuxPrior {
  std::vector<double> a, b, s;
  std::vector<double> init_mean, init_std;
  /// Set when some scale had to be floored (e.g. constant samples).
  bool degenerate = false;

  std::size_t dims() const { return a.size(); }

  /// The same model as the AR(1) prior, parameter for parameter.
  static AuxPrior from_prior(const Ar1Prior& p) {
    AuxPrior aux;
    for (std::size_t k = 0; k < p.dims(); ++k) {
      aux.a.push_back(p.alpha(k));
      aux.b.push_back(0.0);
      aux.s.push_back(p.noise_std(k));
      aux.init_mean.push_back(0.0);
      aux.init_std.push_back(1.0);
    }
    return aux;
  }
};

inline constexpr double kAuxScaleFloor = 1e-4;

namespace detail {

// Sufficient statistics for the per-dimension regressions. Point samples
// and Gaussian posteriors both reduce to these expectations.
struct AuxStats {
  double n0 = 0, z0 = 0, z0z0 = 0;
  double m = 0, x = 0, y = 0, xx = 0, xy = 0, yy = 0;
};

inline AuxPrior solve_aux(const std::vector<AuxStats>& stats) {
  AuxPrior out;
  for (const AuxStats& st : stats) {
    const double mean0 = st.z0 / st.n0;
    double var0 = st.z0z0 / st.n0 - mean0 * mean0;
    const double mx = st.x / st.m, my = st.y / st.m;
    const double vxx = st.xx / st.m - mx * mx;
    const double vxy = st.xy / st.m - mx * my;
    const double vyy = st.yy / st.m - my * my;
    double a = vxx > 1e-300 ? vxy / vxx : 0.0;
    a = std::clamp(a, -kAlphaMax, kAlphaMax);
    const double b = my - a * mx;
    double s2 = vyy - 2.0 * a * vxy + a * a * vxx;
    if (s2 < kAuxScaleFloor * kAuxScaleFloor) {
      s2 = kAuxScaleFloor * kAuxScaleFloor;
      out.degenerate = true;
    }
    if (var0 < kAuxScaleFloor * kAuxScaleFloor) {
      var0 = kAuxScaleFloor * kAuxScaleFloor;
      out.degenerate = true;
    }
    out.a.push_back(a);
    out.b.push_back(b);
    out.s.push_back(std::sqrt(s2));
    out.init_mean.push_back(mean0);
    out.init_std.push_back(std::sqrt(var0));
  }
  return out;
}

}  // namespace detail

/// Least-squares fit to sample sequences, each row time-major n*d.
inline AuxPrior fit_aux_prior(const Mat& samples, std::size_t n, std::size_t d) {
  if (n < 2) throw DomainError("fit_aux_prior: need at least 2 timesteps");
  if (samples.cols() != static_cast<Eigen::Index>(n * d) || samples.rows() < 1)
    throw DomainError("fit_aux_prior: samples must be runs x (n*d)");
  std::vector<detail::AuxStats> st(d);
  const auto D = static_cast<Eigen::Index>(d);
  for (Eigen::Index r = 0; r < samples.rows(); ++r)
    for (Eigen::Index k = 0; k < D; ++k) {
      auto& s = st[static_cast<std::size_t>(k)];
      const double z0 = samples(r, k);
      s.n0 += 1;
      s.z0 += z0;
      s.z0z0 += z0 * z0;
      for (Eigen::Index t = 1; t < static_cast<Eigen::Index>(n); ++t) {
        const double x = samples(r, (t - 1) * D + k), y = samples(r, t * D + k);
        s.m += 1;
        s.x += x;
        s.y += y;
        s.xx += x * x;
        s.xy += x * y;
        s.yy += y * y;
      }
    }
  return detail::solve_aux(st);
}

/// Exact maximum-likelihood fit to the aggregate of mean-field Gaussian
/// posteriors (rows time-major), i.e. the limit of fit_aux_prior over
/// infinitely many reparameterized draws.
inline AuxPrior fit_aux_prior_moments(const Mat& means, const Mat& stds, std::size_t n,
                                      std::size_t d) {
  if (n < 2) throw DomainError("fit_aux_prior: need at least 2 timesteps");
  if (means.cols() != static_cast<Eigen::Index>(n * d) || stds.rows() != means.rows() ||
      stds.cols() != means.cols() || means.rows() < 1)
    throw DomainError("fit_aux_prior_moments: shape mismatch");
  std::vector<detail::AuxStats> st(d);
  const auto D = static_cast<Eigen::Index>(d);
  for (Eigen::Index r = 0; r < means.rows(); ++r)
    for (Eigen::Index k = 0; k < D; ++k) {
      auto& s = st[static_cast<std::size_t>(k)];
      const double m0 = means(r, k), v0 = stds(r, k) * stds(r, k);
      s.n0 += 1;
      s.z0 += m0;
      s.z0z0 += m0 * m0 + v0;
      for (Eigen::Index t = 1; t < static_cast<Eigen::Index>(n); ++t) {
        const double mx = means(r, (t - 1) * D + k), my = means(r, t * D + k);
        const double vx = stds(r, (t - 1) * D + k) * stds(r, (t - 1) * D + k);
        const double vy = stds(r, t * D + k) * stds(r, t * D + k);
        s.m += 1;
        s.x += mx;
        s.y += my;
        s.xx += mx * mx + vx;
        s.xy += mx * my;
        s.yy += my * my + vy;
      }
    }
  return detail::solve_aux(st);
}

/// log p_aux(z) for one n x d sequence.
inline double aux_log_prob(const AuxPrior& p, const Mat& z) {
  if (static_cast<std::size_t>(z.cols()) != p.dims())
    throw DomainError("aux_log_prob: z has wrong number of dimensions");
  double lp = 0.0;
  for (Eigen::Index k = 0; k < z.cols(); ++k) {
    const auto kk = static_cast<std::size_t>(k);
    lp += normal_log_density(z(0, k), p.init_mean[kk], p.init_std[kk]);
    for (Eigen::Index t = 1; t < z.rows(); ++t)
      lp += normal_log_density(z(t, k), p.a[kk] * z(t - 1, k) + p.b[kk], p.s[kk]);
  }
  return lp;
}

/// KL(q || p_aux) in closed form for a mean-field Gaussian q.
inline double aux_kl(const GaussianSeqPosterior& q, const AuxPrior& p) {
  if (q.dims() != p.dims()) throw DomainError("aux_kl: dimension mismatch");
  double kl = 0.0;
  for (Eigen::Index k = 0; k < q.means.cols(); ++k) {
    const auto kk = static_cast<std::size_t>(k);
    kl += kl_univariate(q.means(0, k), q.stds(0, k), p.init_mean[kk], p.init_std[kk]);
    for (Eigen::Index t = 1; t < q.means.rows(); ++t) {
      const double prev_sd = q.stds(t - 1, k);
      kl += kl_univariate(q.means(t, k), q.stds(t, k), p.a[kk] * q.means(t - 1, k) + p.b[kk],
                          p.s[kk]) +
            0.5 * p.a[kk] * p.a[kk] * prev_sd * prev_sd / (p.s[kk] * p.s[kk]);
    }
  }
  return kl;
}

}  // namespace dvae
