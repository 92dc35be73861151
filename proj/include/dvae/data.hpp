#pragma once

// Synthetic regime-labelled sequences.
//
// Regime k draws a small hidden AR(1) trajectory u_t (correlation rho_k,
// stationary scale hidden_scale) and emits
//
//   x_t = v_k * t / (n - 1) + A_k u_t + e_t,    e_t ~ N(0, emission_noise^2)
//
// so every regime starts at the origin and drifts along its own direction
// v_k. One-step-ahead uncertainty given the past stays well under the
// fixed 0.1 observation std of the toy decoder, which is what lets a
// latent-free autoregressive decoder explain the data; the regime is still
// recoverable from the whole sequence.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "dvae/errors.hpp"
#include "dvae/random.hpp"
#include "dvae/types.hpp"
#include "json.hpp"

namespace dvae {

struct SyntheticSpec {
  std::size_t k_regimes = 4;
  std::size_t seq_len = 24;
  std::size_t obs_dim = 4;
  std::size_t n_train = 8000;
  std::size_t n_test = 2000;
  std::uint64_t seed = 1;
  std::size_t hidden_dim = 2;
  double hidden_scale = 0.08;
  double emission_noise = 0.04;
  double drift_scale = 0.6;
};

struct RegimeParams {
  double rho = 0.0;
  Mat mixing;  // obs_dim x hidden_dim
  Vec drift;   // obs_dim
};

struct Dataset {
  SyntheticSpec spec;
  std::vector<RegimeParams> regimes;
  Mat train_x;  // n_train x (seq_len * obs_dim), time-major
  std::vector<int> train_y;
  Mat test_x;
  std::vector<int> test_y;

  std::size_t step_width() const { return spec.obs_dim; }
};

namespace detail {

inline std::vector<RegimeParams> draw_regimes(const SyntheticSpec& s, Rng& rng) {
  std::vector<RegimeParams> out(s.k_regimes);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);

  // Drift directions are sign patterns; keep them pairwise as far apart as
  // a bounded number of redraws allows.
  const std::size_t want = std::max<std::size_t>(1, s.obs_dim / 2);
  std::vector<Vec> best;
  std::size_t best_sep = 0;
  for (int attempt = 0; attempt < 1000 && best_sep < want; ++attempt) {
    std::vector<Vec> signs(s.k_regimes, Vec(s.obs_dim));
    for (auto& v : signs)
      for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = coin(rng) ? 1.0 : -1.0;
    std::size_t sep = s.obs_dim;
    for (std::size_t a = 0; a < signs.size(); ++a)
      for (std::size_t b = a + 1; b < signs.size(); ++b)
        sep = std::min<std::size_t>(sep, static_cast<std::size_t>(
                                             (signs[a] - signs[b]).cwiseAbs().sum() / 2.0));
    if (best.empty() || sep > best_sep) {
      best = signs;
      best_sep = sep;
    }
  }

  for (std::size_t k = 0; k < s.k_regimes; ++k) {
    RegimeParams& r = out[k];
    r.rho = s.k_regimes > 1 ? 0.5 + 0.45 * double(k) / double(s.k_regimes - 1) : 0.5;
    r.mixing = Mat::NullaryExpr(static_cast<Eigen::Index>(s.obs_dim),
                                static_cast<Eigen::Index>(s.hidden_dim),
                                [&] { return normal(rng) / std::sqrt(double(s.hidden_dim)); });
    r.drift = s.drift_scale * best[k];
  }
  return out;
}

inline void draw_sequences(const SyntheticSpec& s, const std::vector<RegimeParams>& regimes,
                           std::size_t count, std::size_t label_offset, Rng& rng, Mat& x,
                           std::vector<int>& y) {
  const auto n = static_cast<Eigen::Index>(s.seq_len);
  const auto obs = static_cast<Eigen::Index>(s.obs_dim);
  const auto hid = static_cast<Eigen::Index>(s.hidden_dim);
  std::normal_distribution<double> normal(0.0, 1.0);
  x.resize(static_cast<Eigen::Index>(count), n * obs);
  y.resize(count);
  Vec u(hid);
  for (std::size_t i = 0; i < count; ++i) {
    const int k = static_cast<int>((i + label_offset) % s.k_regimes);
    const RegimeParams& r = regimes[static_cast<std::size_t>(k)];
    y[i] = k;
    const double innov = s.hidden_scale * std::sqrt(1.0 - r.rho * r.rho);
    for (Eigen::Index j = 0; j < hid; ++j) u(j) = s.hidden_scale * normal(rng);
    for (Eigen::Index t = 0; t < n; ++t) {
      if (t > 0)
        for (Eigen::Index j = 0; j < hid; ++j) u(j) = r.rho * u(j) + innov * normal(rng);
      const double ramp = n > 1 ? double(t) / double(n - 1) : 0.0;
      const Vec mean = ramp * r.drift + r.mixing * u;
      for (Eigen::Index o = 0; o < obs; ++o)
        x(static_cast<Eigen::Index>(i), t * obs + o) = mean(o) + s.emission_noise * normal(rng);
    }
  }
}

}  // namespace detail

/// Deterministic in spec.seed. Labels cycle through the regimes, so each
/// split is balanced to within one sequence per regime.
inline Dataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.k_regimes < 2) throw DomainError("gen_synthetic: need at least 2 regimes");
  if (spec.seq_len < 2 || spec.obs_dim < 1 || spec.hidden_dim < 1)
    throw DomainError("gen_synthetic: seq_len >= 2, obs_dim >= 1, hidden_dim >= 1 required");
  if (spec.n_train < spec.k_regimes || spec.n_test < spec.k_regimes)
    throw DomainError("gen_synthetic: each split needs at least one sequence per regime");
  Dataset ds;
  ds.spec = spec;
  Rng param_rng(derive_seed(spec.seed, 0));
  ds.regimes = detail::draw_regimes(spec, param_rng);
  Rng train_rng(derive_seed(spec.seed, 1));
  Rng test_rng(derive_seed(spec.seed, 2));
  detail::draw_sequences(spec, ds.regimes, spec.n_train, 0, train_rng, ds.train_x, ds.train_y);
  detail::draw_sequences(spec, ds.regimes, spec.n_test, 0, test_rng, ds.test_x, ds.test_y);
  return ds;
}

/// FNV-1a over the sample values and labels of both splits.
inline std::uint64_t dataset_hash(const Dataset& ds) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const Mat* m : {&ds.train_x, &ds.test_x}) mix(m->data(), sizeof(double) * m->size());
  for (const auto* y : {&ds.train_y, &ds.test_y}) mix(y->data(), sizeof(int) * y->size());
  return h;
}

// ---------------------------------------------------------------------------
// Bayes-optimal regime classification under the known generator.

/// Exact Gaussian log-likelihood of each sequence under each regime.
/// Returns an N x K matrix.
inline Mat regime_log_likelihoods(const Dataset& ds, const Mat& x) {
  const auto& s = ds.spec;
  const auto n = static_cast<Eigen::Index>(s.seq_len);
  const auto obs = static_cast<Eigen::Index>(s.obs_dim);
  const Eigen::Index dim = n * obs;
  Mat out(x.rows(), static_cast<Eigen::Index>(ds.regimes.size()));
  for (std::size_t k = 0; k < ds.regimes.size(); ++k) {
    const RegimeParams& r = ds.regimes[k];
    const Mat mix_cov = s.hidden_scale * s.hidden_scale * r.mixing * r.mixing.transpose();
    Mat cov(dim, dim);
    Vec mean(dim);
    for (Eigen::Index t = 0; t < n; ++t) {
      mean.segment(t * obs, obs) = (n > 1 ? double(t) / double(n - 1) : 0.0) * r.drift;
      for (Eigen::Index u = 0; u < n; ++u)
        cov.block(t * obs, u * obs, obs, obs) = std::pow(r.rho, std::abs(double(t - u))) * mix_cov;
    }
    cov.diagonal().array() += s.emission_noise * s.emission_noise;
    const Eigen::LLT<Mat> llt(cov);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Vec diff = x.row(i).transpose() - mean;
      const Vec w = llt.matrixL().solve(diff);
      out(i, static_cast<Eigen::Index>(k)) = -0.5 * (w.squaredNorm() + logdet + double(dim) * kLog2Pi);
    }
  }
  return out;
}

inline double bayes_accuracy(const Dataset& ds, const Mat& x, const std::vector<int>& y) {
  const Mat ll = regime_log_likelihoods(ds, x);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < ll.rows(); ++i) {
    Eigen::Index arg;
    ll.row(i).maxCoeff(&arg);
    hits += static_cast<int>(arg) == y[static_cast<std::size_t>(i)];
  }
  return double(hits) / double(ll.rows());
}

// ---------------------------------------------------------------------------
// Serialization: JSON-of-arrays, versioned header.

inline constexpr int kDatasetFormatVersion = 1;

namespace detail {

inline nlohmann::json mat_to_json(const Mat& m) {
  std::vector<double> flat(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      flat[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

inline Mat mat_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw ConfigError("matrix payload has wrong length");
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = data[static_cast<std::size_t>(r * cols + c)].get<double>();
  return m;
}

}  // namespace detail

inline nlohmann::json spec_to_json(const SyntheticSpec& s) {
  return {{"k_regimes", s.k_regimes},       {"seq_len", s.seq_len},
          {"obs_dim", s.obs_dim},           {"n_train", s.n_train},
          {"n_test", s.n_test},             {"seed", s.seed},
          {"hidden_dim", s.hidden_dim},     {"hidden_scale", s.hidden_scale},
          {"emission_noise", s.emission_noise}, {"drift_scale", s.drift_scale}};
}

inline SyntheticSpec spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.k_regimes = j.at("k_regimes").get<std::size_t>();
  s.seq_len = j.at("seq_len").get<std::size_t>();
  s.obs_dim = j.at("obs_dim").get<std::size_t>();
  s.n_train = j.at("n_train").get<std::size_t>();
  s.n_test = j.at("n_test").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  s.hidden_scale = j.at("hidden_scale").get<double>();
  s.emission_noise = j.at("emission_noise").get<double>();
  s.drift_scale = j.at("drift_scale").get<double>();
  return s;
}

inline nlohmann::json dataset_to_json(const Dataset& ds) {
  nlohmann::json regimes = nlohmann::json::array();
  for (const auto& r : ds.regimes)
    regimes.push_back({{"rho", r.rho},
                       {"mixing", detail::mat_to_json(r.mixing)},
                       {"drift", std::vector<double>(r.drift.data(), r.drift.data() + r.drift.size())}});
  return {{"format", "dvae-dataset"},
          {"version", kDatasetFormatVersion},
          {"dvae_version", kVersion},
          {"spec", spec_to_json(ds.spec)},
          {"hash", dataset_hash(ds)},
          {"generator", regimes},
          {"train", {{"x", detail::mat_to_json(ds.train_x)}, {"y", ds.train_y}}},
          {"test", {{"x", detail::mat_to_json(ds.test_x)}, {"y", ds.test_y}}}};
}

inline Dataset dataset_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dvae-dataset")
    throw ConfigError("not a dataset file (missing format tag)");
  if (j.at("version").get<int>() != kDatasetFormatVersion)
    throw ConfigError("unsupported dataset version " + j.at("version").dump());
  Dataset ds;
  ds.spec = spec_from_json(j.at("spec"));
  for (const auto& r : j.at("generator")) {
    RegimeParams p;
    p.rho = r.at("rho").get<double>();
    p.mixing = detail::mat_from_json(r.at("mixing"));
    const auto drift = r.at("drift").get<std::vector<double>>();
    p.drift = Eigen::Map<const Vec>(drift.data(), static_cast<Eigen::Index>(drift.size()));
    ds.regimes.push_back(std::move(p));
  }
  ds.train_x = detail::mat_from_json(j.at("train").at("x"));
  ds.train_y = j.at("train").at("y").get<std::vector<int>>();
  ds.test_x = detail::mat_from_json(j.at("test").at("x"));
  ds.test_y = j.at("test").at("y").get<std::vector<int>>();
  if (j.at("hash").get<std::uint64_t>() != dataset_hash(ds))
    throw ConfigError("dataset file hash mismatch");
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << dataset_to_json(ds).dump();
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  return dataset_from_json(nlohmann::json::parse(in));
}

}  // namespace dvae
