#pragma once

// ELBO and its anti-collapse variants. The rate is always the analytic KL;
// only the reconstruction term is Monte-Carlo.

#include <algorithm>
#include <cstdint>
#include <string>

#include "dvae/autodiff.hpp"
#include "dvae/errors.hpp"
#include "dvae/nets.hpp"
#include "dvae/random.hpp"

namespace dvae {

enum class ObjectiveMode { delta_structural, beta, free_bits, anneal, vanilla };
enum class FreeBitsGranularity { cell, dimension, sequence };

inline std::string to_string(ObjectiveMode m) {
  switch (m) {
    case ObjectiveMode::delta_structural: return "delta_structural";
    case ObjectiveMode::beta: return "beta";
    case ObjectiveMode::free_bits: return "free_bits";
    case ObjectiveMode::anneal: return "anneal";
    default: return "vanilla";
  }
}
inline ObjectiveMode objective_mode_from_string(const std::string& s) {
  for (auto m : {ObjectiveMode::delta_structural, ObjectiveMode::beta, ObjectiveMode::free_bits,
                 ObjectiveMode::anneal, ObjectiveMode::vanilla})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown objective mode '" + s + "'");
}
inline std::string to_string(FreeBitsGranularity g) {
  switch (g) {
    case FreeBitsGranularity::cell: return "cell";
    case FreeBitsGranularity::dimension: return "dimension";
    default: return "sequence";
  }
}
inline FreeBitsGranularity granularity_from_string(const std::string& s) {
  for (auto g : {FreeBitsGranularity::cell, FreeBitsGranularity::dimension,
                 FreeBitsGranularity::sequence})
    if (to_string(g) == s) return g;
  throw ConfigError("unknown free-bits granularity '" + s + "'");
}

/// Only the fields of the active mode are read.
struct ObjectiveCfg {
  ObjectiveMode mode = ObjectiveMode::vanilla;
  double beta = 1.0;
  /// Threshold per group (nats). At cell granularity a group is one
  /// (timestep, dimension) cell; the threshold is not rescaled for coarser
  /// groups.
  double free_bits_per_cell = 0.0;
  FreeBitsGranularity free_bits_granularity = FreeBitsGranularity::cell;
  std::size_t anneal_end_step = 1000;
};

inline void validate(const ObjectiveCfg& o) {
  if (!(o.beta >= 0.0) || !std::isfinite(o.beta)) throw ConfigError("objective: beta must be >= 0");
  if (!(o.free_bits_per_cell >= 0.0) || !std::isfinite(o.free_bits_per_cell))
    throw ConfigError("objective: free_bits_per_cell must be >= 0");
}

/// Weight on the rate at a given step for anneal mode: linear 0 -> 1,
/// reaching 1 at anneal_end_step.
inline double anneal_weight(const ObjectiveCfg& o, std::size_t step) {
  if (o.anneal_end_step == 0) return 1.0;
  return std::min(1.0, double(step) / double(o.anneal_end_step));
}

/// Whether the loss at `step` is exactly the negative ELBO.
inline bool is_likelihood_bound(const ObjectiveCfg& o, std::size_t step) {
  switch (o.mode) {
    case ObjectiveMode::beta: return o.beta == 1.0;
    case ObjectiveMode::free_bits: return o.free_bits_per_cell == 0.0;
    case ObjectiveMode::anneal: return anneal_weight(o, step) == 1.0;
    default: return true;
  }
}

/// Batch averages, per sequence.
struct ElboBreakdown {
  double reconstruction = 0.0;  // E_q[log p(x|z)], nats
  double rate = 0.0;            // KL(q || prior), nats
  double objective_value = 0.0; // the mode-transformed loss
  Mat per_cell_kl;              // n x d
  double rate_weight = 1.0;
  bool likelihood_bound = true;

  double distortion() const { return -reconstruction; }
  double neg_elbo() const { return rate - reconstruction; }
};

struct ElboGraph {
  ad::Var loss;
  ElboBreakdown values;
};

/// Builds the loss graph for a batch x (B x n*obs_dim). The noise for the
/// reconstruction estimate is drawn from `seed`.
inline ElboGraph elbo_graph(const BoundModel& bm, const Mat& x, const ObjectiveCfg& obj,
                            std::size_t mc_samples, std::uint64_t seed, std::size_t step = 0) {
  validate(obj);
  if (mc_samples < 1) throw ConfigError("elbo: mc_samples must be >= 1");
  const ToyModel& model = bm.model();
  const ModelConfig& c = model.config();
  ad::Tape& tape = bm.tape();
  const Eigen::Index B = x.rows();
  const auto n = static_cast<Eigen::Index>(c.seq_len);
  const auto d = static_cast<Eigen::Index>(c.latent_dim);

  const ad::Var xv = tape.constant(x);
  const PosteriorVars q = encode(bm, xv);
  const ad::Var cells = rate_cells(model, q);
  const ad::Var cell_mean = ad::scale(ad::matmul(tape.constant(Mat::Ones(1, B)), cells), 1.0 / double(B));
  const ad::Var rate = ad::sum(cell_mean);

  Rng rng(seed);
  const ad::Var x_prev = tape.constant(shift_right(x, c.obs_dim));
  ad::Var recon;
  for (std::size_t s = 0; s < mc_samples; ++s) {
    const ad::Var z = reparameterize(q, tape.constant(standard_normal(B, n * d, rng)));
    const ad::Var mean = decode(bm, x_prev, z);
    const ad::Var ll = ad::sum(normal_log_density(xv, mean, c.obs_std));
    recon = s == 0 ? ll : ad::add(recon, ll);
  }
  recon = ad::scale(recon, 1.0 / (double(B) * double(mc_samples)));

  ad::Var penalty = rate;
  double weight = 1.0;
  switch (obj.mode) {
    case ObjectiveMode::beta:
      penalty = ad::scale(rate, obj.beta);
      weight = obj.beta;
      break;
    case ObjectiveMode::free_bits: {
      ad::Var groups = cell_mean;
      if (obj.free_bits_granularity == FreeBitsGranularity::dimension) {
        // Sum the cells of each latent dimension over time.
        Mat sel = Mat::Zero(n * d, d);
        for (Eigen::Index t = 0; t < n; ++t) sel.block(t * d, 0, d, d).setIdentity();
        groups = ad::matmul(cell_mean, tape.constant(sel));
      } else if (obj.free_bits_granularity == FreeBitsGranularity::sequence) {
        groups = rate;
      }
      penalty = ad::sum(ad::clamp_min(groups, obj.free_bits_per_cell));
      break;
    }
    case ObjectiveMode::anneal:
      weight = anneal_weight(obj, step);
      penalty = ad::scale(rate, weight);
      break;
    default: break;
  }
  const ad::Var loss = ad::add(ad::neg(recon), penalty);

  ElboGraph g;
  g.loss = loss;
  g.values.reconstruction = recon.scalar();
  g.values.rate = rate.scalar();
  g.values.objective_value = loss.scalar();
  g.values.rate_weight = weight;
  g.values.likelihood_bound = is_likelihood_bound(obj, step);
  g.values.per_cell_kl.resize(n, d);
  for (Eigen::Index t = 0; t < n; ++t)
    for (Eigen::Index k = 0; k < d; ++k) g.values.per_cell_kl(t, k) = cell_mean.value()(0, t * d + k);
  return g;
}

/// Values only; no gradients kept.
inline ElboBreakdown elbo(const ToyModel& model, const Mat& x, const ObjectiveCfg& obj,
                          std::size_t mc_samples, std::uint64_t seed, std::size_t step = 0) {
  ad::Tape tape;
  const BoundModel bm(model, tape, false);
  return elbo_graph(bm, x, obj, mc_samples, seed, step).values;
}

/// Single-sample estimate log q(z|x) - log p(z) at z = mu + sigma*noise,
/// per sequence. Used to show the analytic rate is not a sampled one.
inline Vec sampled_log_ratio(const ToyModel& model, const Mat& x, const Mat& noise) {
  ad::Tape tape;
  const BoundModel bm(model, tape, false);
  const PosteriorVars q = encode(bm, tape.constant(x));
  const Mat& mu = q.mu.value();
  const Mat& sd = q.sigma.value();
  const Mat z = mu + sd.cwiseProduct(noise);
  const auto n = static_cast<Eigen::Index>(model.config().seq_len);
  const auto d = static_cast<Eigen::Index>(model.config().latent_dim);
  Vec out(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double lq = 0.0;
    Mat zs(n, d);
    for (Eigen::Index t = 0; t < n; ++t)
      for (Eigen::Index k = 0; k < d; ++k) {
        const Eigen::Index j = t * d + k;
        lq += normal_log_density(z(r, j), mu(r, j), sd(r, j));
        zs(t, k) = z(r, j);
      }
    out(r) = lq - log_prob(model.prior(), zs);
  }
  return out;
}

}  // namespace dvae
