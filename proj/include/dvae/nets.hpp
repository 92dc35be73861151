#pragma once

// Toy sequential VAE: GRU encoder (anti-causal or non-causal), an
// autoregressive GRU decoder that sees z_t at every step, and the
// posterior parameterizations for each constraint mode.
//
// Batches are time-major: row b of a B x (n*w) matrix holds steps
// 0..n-1 of one sequence, w columns each.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dvae/ad_kl.hpp"
#include "dvae/ar1_prior.hpp"
#include "dvae/autodiff.hpp"
#include "dvae/delta_constraints.hpp"
#include "dvae/errors.hpp"
#include "dvae/gauss_kl.hpp"
#include "dvae/random.hpp"
#include "dvae/types.hpp"
#include "json.hpp"

namespace dvae {

enum class EncoderMode { anti_causal, non_causal };
enum class ConstraintMode { temporal_delta, independent_delta, none };

inline std::string to_string(EncoderMode m) {
  return m == EncoderMode::anti_causal ? "anti_causal" : "non_causal";
}
inline std::string to_string(ConstraintMode m) {
  switch (m) {
    case ConstraintMode::temporal_delta: return "temporal_delta";
    case ConstraintMode::independent_delta: return "independent_delta";
    default: return "none";
  }
}
inline EncoderMode encoder_mode_from_string(const std::string& s) {
  if (s == "anti_causal") return EncoderMode::anti_causal;
  if (s == "non_causal") return EncoderMode::non_causal;
  throw ConfigError("unknown encoder mode '" + s + "'");
}
inline ConstraintMode constraint_mode_from_string(const std::string& s) {
  if (s == "temporal_delta") return ConstraintMode::temporal_delta;
  if (s == "independent_delta") return ConstraintMode::independent_delta;
  if (s == "none") return ConstraintMode::none;
  throw ConfigError("unknown constraint mode '" + s + "'");
}

struct ModelConfig {
  std::size_t seq_len = 24;
  std::size_t obs_dim = 4;
  std::size_t latent_dim = 2;
  EncoderMode encoder = EncoderMode::anti_causal;
  std::size_t enc_hidden = 32;
  std::size_t enc_layers = 1;
  std::size_t dec_hidden = 32;
  std::size_t dec_layers = 1;
  ConstraintMode constraint = ConstraintMode::none;
  // temporal_delta: committed rate per sequence (nats).
  // independent_delta: minimum KL per latent cell (nats).
  double delta = 0.0;
  double obs_std = 0.1;
  std::uint64_t init_seed = 0;
};

inline void validate(const ModelConfig& c) {
  if (c.seq_len < 2) throw ConfigError("model: seq_len must be >= 2");
  if (c.obs_dim < 1 || c.latent_dim < 1) throw ConfigError("model: dims must be >= 1");
  if (c.enc_hidden < 1 || c.dec_hidden < 1 || c.enc_layers < 1 || c.dec_layers < 1)
    throw ConfigError("model: hidden sizes and layer counts must be >= 1");
  if (c.enc_layers > 4 || c.dec_layers > 4) throw ConfigError("model: at most 4 layers");
  if (!(c.obs_std > 0.0)) throw ConfigError("model: obs_std must be > 0");
  if (!(c.delta >= 0.0) || !std::isfinite(c.delta)) throw ConfigError("model: delta must be >= 0");
  if (c.constraint == ConstraintMode::temporal_delta && c.seq_len < 3)
    throw ConfigError("model: temporal_delta needs seq_len >= 3");
}

struct Param {
  std::string name;
  Mat value;
};

class ToyModel {
 public:
  explicit ToyModel(ModelConfig cfg) : cfg_(std::move(cfg)), prior_({0.0}) {
    validate(cfg_);
    prior_ = make_model_prior(cfg_);
    if (cfg_.constraint == ConstraintMode::independent_delta)
      interval_ = feasible_sigma_interval(cfg_.delta);
    build();
  }

  const ModelConfig& config() const { return cfg_; }
  const Ar1Prior& prior() const { return prior_; }
  const IndependentDeltaConstraint& interval() const { return interval_; }
  const std::vector<Param>& params() const { return params_; }
  std::vector<Param>& params() { return params_; }

  std::size_t param_count() const {
    std::size_t c = 0;
    for (const auto& p : params_) c += static_cast<std::size_t>(p.value.size());
    return c;
  }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return i;
    throw ContractError("no parameter named " + name);
  }

  /// Structural lower bound on the rate of one sequence under this model.
  double committed_rate() const {
    switch (cfg_.constraint) {
      case ConstraintMode::temporal_delta:
        return dvae::committed_rate(prior_, cfg_.seq_len);
      case ConstraintMode::independent_delta:
        return cfg_.delta * double(cfg_.seq_len * cfg_.latent_dim);
      default: return 0.0;
    }
  }

  static Ar1Prior make_model_prior(const ModelConfig& c) {
    if (c.constraint == ConstraintMode::temporal_delta && c.delta > 0.0)
      return Ar1Prior(solve_alpha_for_rate(c.delta, c.seq_len, c.latent_dim));
    return Ar1Prior(std::vector<double>(c.latent_dim, 0.0));
  }

 private:
  void add_param(const std::string& name, Eigen::Index rows, Eigen::Index cols, double bound,
                 double fill = 0.0) {
    Rng rng(derive_seed(cfg_.init_seed, params_.size()));
    std::uniform_real_distribution<double> u(-bound, bound);
    Mat m = bound > 0.0 ? Mat(Mat::NullaryExpr(rows, cols, [&] { return u(rng); }))
                        : Mat(Mat::Constant(rows, cols, fill));
    params_.push_back({name, std::move(m)});
  }

  void add_gru(const std::string& prefix, std::size_t in, std::size_t hidden) {
    const auto h = static_cast<Eigen::Index>(hidden);
    const double bound = 1.0 / std::sqrt(double(hidden));
    add_param(prefix + ".wx", static_cast<Eigen::Index>(in), 3 * h, bound);
    add_param(prefix + ".wh", h, 3 * h, bound);
    add_param(prefix + ".b", 1, 3 * h, 0.0);
  }

  void build() {
    const auto obs = cfg_.obs_dim, d = cfg_.latent_dim;
    const auto eh = static_cast<Eigen::Index>(cfg_.enc_hidden);
    const auto dh = static_cast<Eigen::Index>(cfg_.dec_hidden);
    const auto D = static_cast<Eigen::Index>(d);
    const double eb = 1.0 / std::sqrt(double(cfg_.enc_hidden));
    const double db = 1.0 / std::sqrt(double(cfg_.dec_hidden));
    // softplus(0.5413) = 1, so temporal posteriors start near unit std.
    const double sigma_bias = cfg_.constraint == ConstraintMode::independent_delta ? 0.0 : 0.5413;

    for (std::size_t l = 0; l < cfg_.enc_layers; ++l)
      add_gru("enc.bwd." + std::to_string(l), l == 0 ? obs : cfg_.enc_hidden, cfg_.enc_hidden);
    add_param("enc.bwd.mu.w", eh, D, eb);
    add_param("enc.bwd.sigma.w", eh, D, eb);
    if (cfg_.encoder == EncoderMode::non_causal) {
      for (std::size_t l = 0; l < cfg_.enc_layers; ++l)
        add_gru("enc.fwd." + std::to_string(l), l == 0 ? obs : cfg_.enc_hidden, cfg_.enc_hidden);
      add_param("enc.fwd.mu.w", eh, D, eb);
      add_param("enc.fwd.sigma.w", eh, D, eb);
    }
    add_param("enc.mu.b", 1, D, 0.0);
    add_param("enc.sigma.b", 1, D, 0.0, sigma_bias);

    for (std::size_t l = 0; l < cfg_.dec_layers; ++l)
      add_gru("dec." + std::to_string(l), l == 0 ? obs + d : cfg_.dec_hidden, cfg_.dec_hidden);
    add_param("dec.out.w", dh, static_cast<Eigen::Index>(obs), db);
    add_param("dec.out.b", 1, static_cast<Eigen::Index>(obs), 0.0);
  }

  ModelConfig cfg_;
  Ar1Prior prior_;
  IndependentDeltaConstraint interval_{0.0, 1.0, 1.0};
  std::vector<Param> params_;
};

// ---------------------------------------------------------------------------
// Forward pass on a tape.

/// Model parameters placed on a tape, looked up by name.
class BoundModel {
 public:
  BoundModel(const ToyModel& m, ad::Tape& tape, bool trainable) : model_(&m), tape_(&tape) {
    for (const Param& p : m.params())
      vars_.push_back(trainable ? tape.variable(p.value) : tape.constant(p.value));
  }
  /// Binds caller-provided Vars (e.g. from grad_check), in parameter order.
  BoundModel(const ToyModel& m, ad::Tape& tape, std::vector<ad::Var> vars)
      : model_(&m), tape_(&tape), vars_(std::move(vars)) {
    if (vars_.size() != m.params().size()) throw ContractError("BoundModel: wrong var count");
  }

  const ad::Var& operator[](const std::string& name) const { return vars_[model_->index_of(name)]; }
  const std::vector<ad::Var>& vars() const { return vars_; }
  const ToyModel& model() const { return *model_; }
  ad::Tape& tape() const { return *tape_; }

 private:
  const ToyModel* model_;
  ad::Tape* tape_;
  std::vector<ad::Var> vars_;
};

namespace detail {

inline ad::Var gru_step(const BoundModel& m, const std::string& prefix, const ad::Var& x,
                        const ad::Var& h) {
  const Eigen::Index H = h.cols();
  const ad::Var gx = ad::add_row(ad::matmul(x, m[prefix + ".wx"]), m[prefix + ".b"]);
  const ad::Var gh = ad::matmul(h, m[prefix + ".wh"]);
  const ad::Var u = ad::sigmoid(ad::add(ad::slice_cols(gx, 0, H), ad::slice_cols(gh, 0, H)));
  const ad::Var r = ad::sigmoid(ad::add(ad::slice_cols(gx, H, H), ad::slice_cols(gh, H, H)));
  const ad::Var c = ad::tanh(
      ad::add(ad::slice_cols(gx, 2 * H, H), ad::mul(r, ad::slice_cols(gh, 2 * H, H))));
  return ad::add(h, ad::mul(u, ad::sub(c, h)));
}

/// Runs a GRU stack over `steps` in the given order; returns the top-layer
/// state after each step, indexed like `steps`.
inline std::vector<ad::Var> gru_stack(const BoundModel& m, const std::string& prefix,
                                      std::size_t layers, std::size_t hidden,
                                      std::vector<ad::Var> steps, bool reverse) {
  const Eigen::Index B = steps.front().rows();
  const auto n = steps.size();
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string name = prefix + "." + std::to_string(l);
    ad::Var h = m.tape().constant(Mat::Zero(B, static_cast<Eigen::Index>(hidden)));
    std::vector<ad::Var> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t t = reverse ? n - 1 - i : i;
      h = gru_step(m, name, steps[t], h);
      out[t] = h;
    }
    steps = std::move(out);
  }
  return steps;
}

inline std::vector<ad::Var> split_time(const ad::Var& seq, std::size_t n, std::size_t w) {
  std::vector<ad::Var> out;
  out.reserve(n);
  for (std::size_t t = 0; t < n; ++t)
    out.push_back(ad::slice_time(seq, static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(w)));
  return out;
}

}  // namespace detail

struct PosteriorVars {
  ad::Var mu;     // B x (n*d)
  ad::Var sigma;  // B x (n*d)
};

/// Posterior parameters for a batch x (B x n*obs_dim).
///
/// The anti-causal path reverses time, runs a causal recurrent stack and
/// reverses back, so step t only sees x_t..x_n. The non-causal encoder adds
/// a forward-in-time stack whose head output is summed in.
inline PosteriorVars encode(const BoundModel& m, const ad::Var& x) {
  const ModelConfig& c = m.model().config();
  if (x.cols() != static_cast<Eigen::Index>(c.seq_len * c.obs_dim))
    throw ConfigError("encode: x must be B x (seq_len*obs_dim)");
  if (!x.value().allFinite()) throw DomainError("encode: x is not finite");
  const auto steps = detail::split_time(x, c.seq_len, c.obs_dim);
  const auto bwd = detail::gru_stack(m, "enc.bwd", c.enc_layers, c.enc_hidden, steps, true);
  std::vector<ad::Var> fwd;
  if (c.encoder == EncoderMode::non_causal)
    fwd = detail::gru_stack(m, "enc.fwd", c.enc_layers, c.enc_hidden, steps, false);

  std::vector<ad::Var> mus, raws;
  for (std::size_t t = 0; t < c.seq_len; ++t) {
    ad::Var mu = ad::matmul(bwd[t], m["enc.bwd.mu.w"]);
    ad::Var raw = ad::matmul(bwd[t], m["enc.bwd.sigma.w"]);
    if (!fwd.empty()) {
      mu = ad::add(mu, ad::matmul(fwd[t], m["enc.fwd.mu.w"]));
      raw = ad::add(raw, ad::matmul(fwd[t], m["enc.fwd.sigma.w"]));
    }
    mus.push_back(ad::add_row(mu, m["enc.mu.b"]));
    raws.push_back(ad::add_row(raw, m["enc.sigma.b"]));
  }
  const ad::Var raw_mu = ad::concat_time(mus);
  const ad::Var raw_sigma = ad::concat_time(raws);

  if (c.constraint == ConstraintMode::independent_delta) {
    auto [mu, sigma] = ad::constrain_independent(raw_mu, raw_sigma, m.model().interval());
    return {mu, sigma};
  }
  return {raw_mu, ad::add_scalar(ad::softplus(raw_sigma), kSigmaFloor)};
}

/// z = mu + sigma * noise.
inline ad::Var reparameterize(const PosteriorVars& q, const ad::Var& noise) {
  return ad::add(q.mu, ad::mul(q.sigma, noise));
}

inline Mat reparameterize(const GaussianSeqPosterior& q, const Mat& noise) {
  if (noise.rows() != q.means.rows() || noise.cols() != q.means.cols())
    throw ConfigError("reparameterize: noise shape mismatch");
  return q.means + q.stds.cwiseProduct(noise);
}

/// x shifted one step later in time with a zero start token.
inline Mat shift_right(const Mat& x, std::size_t obs_dim) {
  const auto w = static_cast<Eigen::Index>(obs_dim);
  Mat out = Mat::Zero(x.rows(), x.cols());
  out.rightCols(x.cols() - w) = x.leftCols(x.cols() - w);
  return out;
}

/// Differentiable version of shift_right, for probing the decoder's
/// dependence on the raw observations.
inline ad::Var shift_right(const ad::Var& x, std::size_t obs_dim) {
  const auto w = static_cast<Eigen::Index>(obs_dim);
  const ad::Var start = x.tape()->constant(Mat::Zero(x.rows(), w));
  return ad::concat_cols({start, ad::slice_cols(x, 0, x.cols() - w)});
}

/// Mean of p(x_t | x_{<t}, z) for every t (B x n*obs_dim); the std is the
/// fixed config().obs_std. The recurrent state carries z_1..z_t forward,
/// and the mean is a residual on the previous observation.
inline ad::Var decode(const BoundModel& m, const ad::Var& x_prev, const ad::Var& z) {
  const ModelConfig& c = m.model().config();
  if (x_prev.cols() != static_cast<Eigen::Index>(c.seq_len * c.obs_dim) ||
      z.cols() != static_cast<Eigen::Index>(c.seq_len * c.latent_dim) || z.rows() != x_prev.rows())
    throw ConfigError("decode: shape mismatch");
  const auto xs = detail::split_time(x_prev, c.seq_len, c.obs_dim);
  const auto zs = detail::split_time(z, c.seq_len, c.latent_dim);
  std::vector<ad::Var> inputs;
  for (std::size_t t = 0; t < c.seq_len; ++t) inputs.push_back(ad::concat_cols({xs[t], zs[t]}));
  const auto hs = detail::gru_stack(m, "dec", c.dec_layers, c.dec_hidden, inputs, false);
  std::vector<ad::Var> means;
  for (std::size_t t = 0; t < c.seq_len; ++t)
    means.push_back(
        ad::add(xs[t], ad::add_row(ad::matmul(hs[t], m["dec.out.w"]), m["dec.out.b"])));
  return ad::concat_time(means);
}

/// Per-cell KL of the posterior against the model's prior (B x n*d).
inline ad::Var rate_cells(const ToyModel& model, const PosteriorVars& q) {
  return ad::seq_kl_cells(q.mu, q.sigma, model.prior(),
                          static_cast<Eigen::Index>(model.config().seq_len));
}

/// Posterior for a single sequence x (n x obs_dim), without a gradient tape
/// kept around.
inline GaussianSeqPosterior encode_posterior(const ToyModel& model, const Mat& x) {
  const ModelConfig& c = model.config();
  if (x.rows() != static_cast<Eigen::Index>(c.seq_len) ||
      x.cols() != static_cast<Eigen::Index>(c.obs_dim))
    throw ConfigError("encode_posterior: x must be seq_len x obs_dim");
  Mat row(1, x.size());
  for (Eigen::Index t = 0; t < x.rows(); ++t) row.block(0, t * x.cols(), 1, x.cols()) = x.row(t);
  ad::Tape tape;
  const BoundModel bm(model, tape, false);
  const PosteriorVars q = encode(bm, tape.constant(row));
  const auto n = static_cast<Eigen::Index>(c.seq_len), d = static_cast<Eigen::Index>(c.latent_dim);
  Mat mu(n, d), sd(n, d);
  for (Eigen::Index t = 0; t < n; ++t)
    for (Eigen::Index k = 0; k < d; ++k) {
      mu(t, k) = q.mu.value()(0, t * d + k);
      sd(t, k) = q.sigma.value()(0, t * d + k);
    }
  return GaussianSeqPosterior(mu, sd);
}

/// Posterior means and stds for many sequences, in batches.
inline std::pair<Mat, Mat> encode_dataset(const ToyModel& model, const Mat& x,
                                          Eigen::Index batch = 256) {
  const auto w = static_cast<Eigen::Index>(model.config().seq_len * model.config().latent_dim);
  Mat mu(x.rows(), w), sd(x.rows(), w);
  for (Eigen::Index start = 0; start < x.rows(); start += batch) {
    const Eigen::Index rows = std::min(batch, x.rows() - start);
    ad::Tape tape;
    const BoundModel bm(model, tape, false);
    const PosteriorVars q = encode(bm, tape.constant(x.middleRows(start, rows)));
    mu.middleRows(start, rows) = q.mu.value();
    sd.middleRows(start, rows) = q.sigma.value();
  }
  return {mu, sd};
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON with a versioned header, parameters in model order.
// Doubles are written with 17 significant digits, so reloads are exact.

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"seq_len", c.seq_len},       {"obs_dim", c.obs_dim},
          {"latent_dim", c.latent_dim}, {"encoder", to_string(c.encoder)},
          {"enc_hidden", c.enc_hidden}, {"enc_layers", c.enc_layers},
          {"dec_hidden", c.dec_hidden}, {"dec_layers", c.dec_layers},
          {"constraint", to_string(c.constraint)}, {"delta", c.delta},
          {"obs_std", c.obs_std},       {"init_seed", c.init_seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.seq_len = j.at("seq_len").get<std::size_t>();
  c.obs_dim = j.at("obs_dim").get<std::size_t>();
  c.latent_dim = j.at("latent_dim").get<std::size_t>();
  c.encoder = encoder_mode_from_string(j.at("encoder").get<std::string>());
  c.enc_hidden = j.at("enc_hidden").get<std::size_t>();
  c.enc_layers = j.at("enc_layers").get<std::size_t>();
  c.dec_hidden = j.at("dec_hidden").get<std::size_t>();
  c.dec_layers = j.at("dec_layers").get<std::size_t>();
  c.constraint = constraint_mode_from_string(j.at("constraint").get<std::string>());
  c.delta = j.at("delta").get<double>();
  c.obs_std = j.at("obs_std").get<double>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

/// `config_hash` ties the file to the run that wrote it; it is not checked on load.
inline nlohmann::json checkpoint_to_json(const ToyModel& m, const std::string& config_hash = "") {
  nlohmann::json params = nlohmann::json::array();
  for (const Param& p : m.params()) {
    std::vector<double> flat(static_cast<std::size_t>(p.value.size()));
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
      for (Eigen::Index c = 0; c < p.value.cols(); ++c)
        flat[static_cast<std::size_t>(r * p.value.cols() + c)] = p.value(r, c);
    params.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()},
                      {"data", flat}});
  }
  return {{"format", "dvae-checkpoint"},
          {"version", kCheckpointVersion},
          {"dvae_version", kVersion},
          {"config_hash", config_hash},
          {"config", model_config_to_json(m.config())},
          {"params", params}};
}

inline ToyModel checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dvae-checkpoint") throw ConfigError("not a checkpoint file");
  if (j.at("version").get<int>() != kCheckpointVersion)
    throw ConfigError("unsupported checkpoint version " + j.at("version").dump());
  ToyModel m(model_config_from_json(j.at("config")));
  const auto& params = j.at("params");
  if (params.size() != m.params().size()) throw ConfigError("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = m.params()[i];
    const auto& jp = params[i];
    if (jp.at("name").get<std::string>() != p.name || jp.at("rows").get<Eigen::Index>() != p.value.rows() ||
        jp.at("cols").get<Eigen::Index>() != p.value.cols())
      throw ConfigError("checkpoint: parameter " + p.name + " does not match the config");
    const auto flat = jp.at("data").get<std::vector<double>>();
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
      for (Eigen::Index c = 0; c < p.value.cols(); ++c)
        p.value(r, c) = flat[static_cast<std::size_t>(r * p.value.cols() + c)];
  }
  return m;
}

inline void save_checkpoint(const ToyModel& m, const std::string& path,
                            const std::string& config_hash = "") {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << checkpoint_to_json(m, config_hash).dump();
}

inline ToyModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  return checkpoint_from_json(nlohmann::json::parse(in));
}

}  // namespace dvae
