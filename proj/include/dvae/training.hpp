#pragma once

// Training loop, evaluation and run records.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dvae/aux_prior.hpp"
#include "dvae/config.hpp"
#include "dvae/data.hpp"
#include "dvae/nets.hpp"
#include "dvae/objective.hpp"
#include "dvae/probe.hpp"
#include "json.hpp"

namespace dvae {

/// Adam with bias correction and a fixed step size.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(std::vector<Param>& params, const std::vector<Mat>& grads) {
    if (m_.empty()) {
      for (const Param& p : params) {
        m_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_));
    const double c2 = 1.0 - std::pow(b2_, double(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grads[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grads[i].cwiseProduct(grads[i]);
      params[i].value.array() -=
          lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<Mat> m_, v_;
};

struct StepMetrics {
  std::size_t step = 0;
  double reconstruction = 0.0;
  double rate = 0.0;
  double objective = 0.0;
  double rate_weight = 1.0;
};

inline bool operator==(const StepMetrics& a, const StepMetrics& b) {
  return a.step == b.step && a.reconstruction == b.reconstruction && a.rate == b.rate &&
         a.objective == b.objective && a.rate_weight == b.rate_weight;
}

/// Negative-ELBO pieces averaged per sequence over a dataset split.
struct SplitEval {
  double rate = 0.0;
  double distortion = 0.0;
  double neg_elbo() const { return rate + distortion; }
};

struct FinalEval {
  SplitEval test;
  SplitEval train;
  double committed_rate = 0.0;
  double probe_accuracy = 0.0;
  double probe_train_accuracy = 0.0;
  double prior_rate_heldout = 0.0;  // same as test.rate
  double aux_rate_heldout = 0.0;
  bool aux_degenerate = false;
  AuxPrior aux;
};

struct RunRecord {
  std::string config_text;  // canonical
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string status = "ok";  // ok | diverged | failed
  std::string message;
  std::vector<StepMetrics> metrics;
  /// False if any logged objective was not the exact negative ELBO.
  bool objective_is_likelihood_bound = true;
  double committed_rate = 0.0;
  double min_rate_margin = 0.0;  // min over steps of rate - committed_rate
  std::size_t structural_violations = 0;
  std::optional<FinalEval> final;
  std::vector<std::string> checkpoints;
  double wall_clock_seconds = 0.0;
};

/// Per-sequence averages over all rows of x, with fixed reconstruction
/// noise from `seed`.
inline SplitEval evaluate_split(const ToyModel& model, const Mat& x, std::size_t mc_samples,
                                std::uint64_t seed, Eigen::Index batch = 250) {
  ObjectiveCfg plain;
  SplitEval out;
  for (Eigen::Index start = 0, chunk = 0; start < x.rows(); start += batch, ++chunk) {
    const Eigen::Index rows = std::min(batch, x.rows() - start);
    const ElboBreakdown e = elbo(model, x.middleRows(start, rows), plain, mc_samples,
                                 derive_seed(seed, static_cast<std::uint64_t>(chunk)));
    out.rate += e.rate * double(rows);
    out.distortion += e.distortion() * double(rows);
  }
  out.rate /= double(x.rows());
  out.distortion /= double(x.rows());
  return out;
}

namespace detail {

inline GaussianSeqPosterior posterior_row(const Mat& mu, const Mat& sd, Eigen::Index r,
                                          std::size_t n, std::size_t d) {
  const auto N = static_cast<Eigen::Index>(n), D = static_cast<Eigen::Index>(d);
  Mat m(N, D), s(N, D);
  for (Eigen::Index t = 0; t < N; ++t) {
    m.row(t) = mu.block(r, t * D, 1, D);
    s.row(t) = sd.block(r, t * D, 1, D);
  }
  return GaussianSeqPosterior(m, s);
}

}  // namespace detail

/// Held-out evaluation: ELBO pieces on both splits, the linear probe on
/// test-set posterior means, and the auxiliary prior fitted to training
/// posteriors and scored on test posteriors.
inline FinalEval final_evaluation(const ToyModel& model, const Dataset& ds, const TrainConfig& cfg) {
  FinalEval f;
  f.committed_rate = model.committed_rate();
  f.test = evaluate_split(model, ds.test_x, cfg.eval_mc_samples, derive_seed(cfg.seed, 0xE1));
  const Eigen::Index n_train_eval = std::min<Eigen::Index>(ds.train_x.rows(), ds.test_x.rows());
  f.train = evaluate_split(model, ds.train_x.topRows(n_train_eval), cfg.eval_mc_samples,
                           derive_seed(cfg.seed, 0xE2));

  const auto [test_mu, test_sd] = encode_dataset(model, ds.test_x);
  ProbeOptions po;
  po.iterations = cfg.probe_iterations;
  po.learning_rate = cfg.probe_lr;
  po.l2 = cfg.probe_l2;
  po.seed = derive_seed(cfg.seed, 0xE3);
  const ProbeResult pr = linear_probe(test_mu, ds.test_y, po);
  f.probe_accuracy = pr.accuracy;
  f.probe_train_accuracy = pr.train_accuracy;

  const std::size_t n = model.config().seq_len, d = model.config().latent_dim;
  const Eigen::Index n_aux = cfg.aux_sequences == 0
                                 ? ds.train_x.rows()
                                 : std::min<Eigen::Index>(ds.train_x.rows(),
                                                          static_cast<Eigen::Index>(cfg.aux_sequences));
  const auto [train_mu, train_sd] = encode_dataset(model, ds.train_x.topRows(n_aux));
  f.aux = fit_aux_prior_moments(train_mu, train_sd, n, d);
  f.aux_degenerate = f.aux.degenerate;
  double aux_total = 0.0, prior_total = 0.0;
  for (Eigen::Index r = 0; r < test_mu.rows(); ++r) {
    const GaussianSeqPosterior q = detail::posterior_row(test_mu, test_sd, r, n, d);
    aux_total += aux_kl(q, f.aux);
    prior_total += kl_seq_closed_form(q, model.prior()).total;
  }
  f.aux_rate_heldout = aux_total / double(test_mu.rows());
  f.prior_rate_heldout = prior_total / double(test_mu.rows());
  return f;
}

inline Dataset load_or_generate(const TrainConfig& cfg) {
  if (cfg.data_path.empty()) return gen_synthetic(cfg.data);
  Dataset ds = load_dataset(cfg.data_path);
  if (ds.spec.seq_len != cfg.data.seq_len || ds.spec.obs_dim != cfg.data.obs_dim)
    throw ConfigError("dataset shape does not match data.seq_len / data.obs_dim");
  return ds;
}

struct TrainResult {
  RunRecord record;
  std::optional<ToyModel> model;
};

struct TrainHooks {
  /// Called after every step.
  std::function<void(const StepMetrics&)> on_step;
  bool run_final_evaluation = true;
};

/// Trains one model. Deterministic in (cfg, dataset): batches, noise and
/// initialization all derive from cfg.seed.
inline TrainResult train(TrainConfig cfg, const Dataset& ds, const TrainHooks& hooks = {}) {
  validate(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult out;
  RunRecord& rec = out.record;
  rec.config_text = canonical_config(cfg);
  rec.config_hash = config_hash(cfg);
  rec.seed = cfg.seed;

  ModelConfig mc = cfg.model;
  mc.init_seed = derive_seed(cfg.seed, 0xA11);
  ToyModel model(mc);
  rec.committed_rate = model.committed_rate();
  rec.min_rate_margin = std::numeric_limits<double>::infinity();
  const bool structural = model.config().constraint != ConstraintMode::none;

  Adam adam(cfg.learning_rate);
  Rng batch_rng(derive_seed(cfg.seed, 0xBA7C));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(ds.train_x.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const auto B = static_cast<Eigen::Index>(std::min<std::size_t>(cfg.batch_size, order.size()));
  Mat batch(B, ds.train_x.cols());

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    for (Eigen::Index i = 0; i < B; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), batch_rng);
        cursor = 0;
      }
      batch.row(i) = ds.train_x.row(order[cursor++]);
    }

    ad::Tape tape;
    const BoundModel bm(model, tape, true);
    const ElboGraph g = elbo_graph(bm, batch, cfg.objective, cfg.mc_samples,
                                   derive_seed(cfg.seed, 0x10000 + step), step);
    const ElboBreakdown& v = g.values;
    rec.metrics.push_back({step, v.reconstruction, v.rate, v.objective_value, v.rate_weight});
    rec.objective_is_likelihood_bound &= v.likelihood_bound;
    if (structural) {
      const double margin = v.rate - rec.committed_rate;
      rec.min_rate_margin = std::min(rec.min_rate_margin, margin);
      if (margin < -1e-9) ++rec.structural_violations;
    }
    if (hooks.on_step) hooks.on_step(rec.metrics.back());
    if (!std::isfinite(v.objective_value)) {
      rec.status = "diverged";
      rec.message = "non-finite objective at step " + std::to_string(step) +
                    " (reconstruction " + detail::fmt_double(v.reconstruction) + ", rate " +
                    detail::fmt_double(v.rate) + ")";
      break;
    }

    tape.backward(g.loss);
    std::vector<Mat> grads;
    grads.reserve(bm.vars().size());
    double sq = 0.0;
    for (const ad::Var& p : bm.vars()) {
      grads.push_back(p.grad());
      sq += grads.back().squaredNorm();
    }
    if (!std::isfinite(sq)) {
      rec.status = "diverged";
      rec.message = "non-finite gradient at step " + std::to_string(step);
      break;
    }
    if (cfg.grad_clip > 0.0 && std::sqrt(sq) > cfg.grad_clip)
      for (Mat& gm : grads) gm *= cfg.grad_clip / std::sqrt(sq);
    adam.step(model.params(), grads);

    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
      const std::string path = (std::filesystem::path(cfg.checkpoint_dir) /
                                ("ckpt_" + rec.config_hash + "_s" + std::to_string(cfg.seed) +
                                 "_" + std::to_string(step) + ".json"))
                                   .string();
      save_checkpoint(model, path, rec.config_hash);
      rec.checkpoints.push_back(path);
    }
  }
  if (!structural) rec.min_rate_margin = 0.0;

  if (rec.status == "ok" && hooks.run_final_evaluation) rec.final = final_evaluation(model, ds, cfg);
  rec.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.model.emplace(std::move(model));
  return out;
}

inline TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  TrainConfig c = cfg;
  validate(c);
  return train(c, load_or_generate(c), hooks);
}

// ---------------------------------------------------------------------------
// Serialization.

inline nlohmann::json aux_to_json(const AuxPrior& a) {
  return {{"a", a.a}, {"b", a.b}, {"s", a.s}, {"init_mean", a.init_mean},
          {"init_std", a.init_std}, {"degenerate", a.degenerate}};
}

inline nlohmann::json run_record_to_json(const RunRecord& r) {
  using nlohmann::json;
  json steps = json::array(), recon = json::array(), rate = json::array(), obj = json::array(),
       weight = json::array();
  for (const auto& m : r.metrics) {
    steps.push_back(m.step);
    recon.push_back(m.reconstruction);
    rate.push_back(m.rate);
    obj.push_back(m.objective);
    weight.push_back(m.rate_weight);
  }
  json j = {{"format", "dvae-run"},
            {"version", 1},
            {"dvae_version", kVersion},
            {"config_hash", r.config_hash},
            {"config", r.config_text},
            {"seed", r.seed},
            {"status", r.status},
            {"message", r.message},
            {"objective_is_likelihood_bound", r.objective_is_likelihood_bound},
            {"committed_rate_nats", r.committed_rate},
            {"min_rate_margin_nats", r.min_rate_margin},
            {"structural_violations", r.structural_violations},
            {"metrics",
             {{"step", steps}, {"reconstruction", recon}, {"rate", rate}, {"objective", obj},
              {"rate_weight", weight}}},
            {"checkpoints", r.checkpoints},
            {"wall_clock_seconds", r.wall_clock_seconds}};
  if (r.final) {
    const FinalEval& f = *r.final;
    j["final"] = {{"test_neg_elbo_nats", f.test.neg_elbo()},
                  {"test_elbo_nats", -f.test.neg_elbo()},
                  {"test_rate_nats", f.test.rate},
                  {"test_rate_bits", nats_to_bits(f.test.rate)},
                  {"test_distortion_nats", f.test.distortion},
                  {"train_rate_nats", f.train.rate},
                  {"train_rate_bits", nats_to_bits(f.train.rate)},
                  {"train_distortion_nats", f.train.distortion},
                  {"committed_rate_nats", f.committed_rate},
                  {"probe_accuracy", f.probe_accuracy},
                  {"probe_train_accuracy", f.probe_train_accuracy},
                  {"prior_rate_heldout_nats", f.prior_rate_heldout},
                  {"aux_rate_heldout_nats", f.aux_rate_heldout},
                  {"aux_degenerate", f.aux_degenerate},
                  {"aux_prior", aux_to_json(f.aux)}};
  } else {
    j["final"] = nullptr;
  }
  return j;
}

inline void write_run_record(const RunRecord& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << run_record_to_json(r).dump(1) << "\n";
}

/// `# dvae <version> config <hash>` followed by the given lines.
inline std::string csv_header(const std::string& hash, const std::string& columns) {
  return std::string("# dvae ") + kVersion + " config " + hash + "\n" + columns + "\n";
}

inline std::string metrics_csv(const RunRecord& r) {
  std::string out = csv_header(r.config_hash, "step,reconstruction_nats,rate_nats,rate_bits,objective_nats,rate_weight");
  for (const auto& m : r.metrics)
    out += std::to_string(m.step) + "," + detail::fmt_double(m.reconstruction) + "," +
           detail::fmt_double(m.rate) + "," + detail::fmt_double(nats_to_bits(m.rate)) + "," +
           detail::fmt_double(m.objective) + "," + detail::fmt_double(m.rate_weight) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps.
//
// Grid file, same key = value syntax as configs:
//
//   base = ablation_base.cfg        # path relative to the grid file
//   seeds = 1, 2, 3
//   threads = 2
//   delta_structural = 0.5, 1, 2    # model.delta values
//   beta = 0.1, 0.5, 1              # objective.beta values
//   free_bits = 0.05, 0.1           # objective.free_bits_per_cell values
//   anneal = 500, 1000              # objective.anneal_end_step values
//   vanilla = 0                     # knob ignored; one row per seed
//   set.train.steps = 300           # override applied to every run
//
// Methods with no line are skipped.

struct SweepCell {
  std::string method;
  double knob = 0.0;
  std::uint64_t seed = 0;
  TrainConfig cfg;
};

struct SweepGrid {
  TrainConfig base;
  std::vector<SweepCell> cells;
  std::size_t threads = 1;
  std::string hash;  // of the grid text
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

inline SweepGrid parse_sweep_grid(const std::string& text, const std::string& base_dir,
                                  const std::string& origin = "grid") {
  SweepGrid g;
  std::vector<std::uint64_t> seeds;
  std::vector<std::pair<std::string, std::vector<double>>> methods;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::string base_text;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto where = origin + ":" + std::to_string(lineno);
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key == "base") {
      const std::filesystem::path p = std::filesystem::path(base_dir) / value;
      base_text = read_text_file(p.string());
    } else if (key == "seeds") {
      for (const auto& s : detail::split_list(value)) seeds.push_back(detail::parse_uint(key, s));
    } else if (key == "threads") {
      g.threads = std::max<std::size_t>(1, detail::parse_uint(key, value));
    } else if (key.rfind("set.", 0) == 0) {
      overrides.emplace_back(key.substr(4), value);
    } else if (key == "delta_structural" || key == "beta" || key == "free_bits" ||
               key == "anneal" || key == "vanilla") {
      std::vector<double> knobs;
      for (const auto& s : detail::split_list(value)) knobs.push_back(detail::parse_double(key, s));
      if (knobs.empty()) knobs.push_back(0.0);
      methods.emplace_back(key, knobs);
    } else {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
  if (seeds.empty()) throw ConfigError(origin + ": 'seeds' is required");
  if (methods.empty()) throw ConfigError(origin + ": no methods listed");

  apply_config_text(g.base, base_text, "base config");
  for (const auto& [k, v] : overrides) set_config_value(g.base, k, v);
  g.hash = [&] {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a(text + "\n" + canonical_config(g.base))));
    return std::string(buf);
  }();

  for (const auto& [method, knobs] : methods)
    for (double knob : knobs)
      for (std::uint64_t seed : seeds) {
        SweepCell cell{method, knob, seed, g.base};
        TrainConfig& c = cell.cfg;
        c.seed = seed;
        ObjectiveCfg& o = c.objective;
        if (method == "delta_structural") {
          o.mode = ObjectiveMode::delta_structural;
          if (g.base.model.constraint == ConstraintMode::none)
            c.model.constraint = ConstraintMode::temporal_delta;
          c.model.delta = knob;
        } else if (method == "beta") {
          c.model.constraint = ConstraintMode::none;
          o.mode = ObjectiveMode::beta;
          o.beta = knob;
        } else if (method == "free_bits") {
          c.model.constraint = ConstraintMode::none;
          o.mode = ObjectiveMode::free_bits;
          o.free_bits_per_cell = knob;
        } else if (method == "anneal") {
          c.model.constraint = ConstraintMode::none;
          o.mode = ObjectiveMode::anneal;
          o.anneal_end_step = static_cast<std::size_t>(knob);
        } else {
          c.model.constraint = ConstraintMode::none;
          o.mode = ObjectiveMode::vanilla;
        }
        // Invalid cells are not rejected here; run_sweep records them as failed.
        g.cells.push_back(std::move(cell));
      }
  return g;
}

struct SweepRow {
  std::string method;
  double knob = 0.0;
  std::uint64_t seed = 0;
  RunRecord record;
};

/// Runs every cell, `threads` at a time. A failing cell is recorded and
/// the rest continue. Rows come back in grid order.
inline std::vector<SweepRow> run_sweep(const SweepGrid& g,
                                       const std::function<void(const SweepRow&)>& on_done = {}) {
  // Cells that share a data spec share the dataset.
  const Dataset ds = load_or_generate(g.cells.front().cfg);
  std::vector<SweepRow> rows(g.cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex done_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < g.cells.size(); i = next++) {
      const SweepCell& cell = g.cells[i];
      SweepRow& row = rows[i];
      row.method = cell.method;
      row.knob = cell.knob;
      row.seed = cell.seed;
      try {
        row.record = train(cell.cfg, ds).record;
      } catch (const std::exception& e) {
        row.record.status = "failed";
        row.record.message = e.what();
        row.record.seed = cell.seed;
        row.record.config_hash = config_hash(cell.cfg);
      }
      if (on_done) {
        std::lock_guard<std::mutex> lock(done_mutex);
        on_done(row);
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(g.threads, g.cells.size()); ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return rows;
}

/// One row per run: method, knob, rate_nats, rate_bits, distortion_nats,
/// probe_acc, seed, status. `train_split` selects the training-set
/// evaluation instead of the test set.
inline std::string sweep_csv(const std::vector<SweepRow>& rows, const std::string& hash,
                             bool train_split) {
  std::string out = csv_header(hash, "method,knob,rate_nats,rate_bits,distortion_nats,probe_acc,seed,status");
  for (const SweepRow& r : rows) {
    std::string rate = "nan", bits = "nan", dist = "nan", acc = "nan";
    if (r.record.final) {
      const SplitEval& s = train_split ? r.record.final->train : r.record.final->test;
      rate = detail::fmt_double(s.rate);
      bits = detail::fmt_double(nats_to_bits(s.rate));
      dist = detail::fmt_double(s.distortion);
      acc = detail::fmt_double(r.record.final->probe_accuracy);
    }
    out += r.method + "," + detail::fmt_double(r.knob) + "," + rate + "," + bits + "," + dist + "," +
           acc + "," + std::to_string(r.seed) + "," + r.record.status + "\n";
  }
  return out;
}

}  // namespace dvae
