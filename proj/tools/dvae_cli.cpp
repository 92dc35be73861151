// dvae: command-line front end.
//
// Exit codes: 0 success or pass, 1 run failure or failed check, 2 usage.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "CLI11.hpp"
#include "json.hpp"

#include "dvae/ar1_prior.hpp"
#include "dvae/config.hpp"
#include "dvae/data.hpp"
#include "dvae/mc_oracle.hpp"
#include "dvae/training.hpp"
#include "dvae/verify.hpp"

namespace fs = std::filesystem;
using namespace dvae;

namespace {

constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string hex_hash(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  return buf;
}

// "-" is stdout.
void write_output(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path);
  out << text;
}

// Comma list, or lo:hi:count for `count` evenly spaced values.
std::vector<double> parse_grid(const std::string& name, const std::string& text) {
  std::vector<double> out;
  try {
    const auto parts = detail::split_list(text);
    if (parts.size() == 1 && std::count(parts[0].begin(), parts[0].end(), ':') == 2) {
      std::stringstream ss(parts[0]);
      std::string lo, hi, count;
      std::getline(ss, lo, ':');
      std::getline(ss, hi, ':');
      std::getline(ss, count);
      const double a = detail::parse_double(name, detail::trim(lo));
      const double b = detail::parse_double(name, detail::trim(hi));
      const auto k = detail::parse_uint(name, detail::trim(count));
      if (k < 1) throw UsageError(name + ": range needs at least one point");
      for (std::uint64_t i = 0; i < k; ++i)
        out.push_back(k == 1 ? a : a + (b - a) * double(i) / double(k - 1));
    } else {
      for (const auto& p : parts) out.push_back(detail::parse_double(name, p));
    }
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (out.empty()) throw UsageError(name + ": empty grid");
  return out;
}

std::vector<std::size_t> parse_counts(const std::string& name, const std::string& text,
                                      std::size_t min_value) {
  std::vector<std::size_t> out;
  for (double v : parse_grid(name, text)) {
    if (v != std::floor(v) || v < double(min_value))
      throw UsageError(name + ": values must be integers >= " + std::to_string(min_value));
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

int cmd_rate_table(const std::string& alpha_text, const std::string& n_text,
                   const std::string& d_text, const std::string& out_path) {
  const auto alphas = parse_grid("--alpha-grid", alpha_text);
  const auto ns = parse_counts("--n-grid", n_text, 2);
  const auto ds = parse_counts("--dims", d_text, 1);
  for (double a : alphas)
    if (!(a >= 0.0 && a <= kAlphaMax))
      throw UsageError("--alpha-grid: alpha must lie in [0, 1 - 1e-6], got " + detail::fmt_double(a));

  std::string rows;
  for (double a : alphas)
    for (std::size_t n : ns)
      for (std::size_t d : ds) {
        const double nats = committed_rate_1d(a, n) * double(d);
        rows += detail::fmt_double(a) + "," + std::to_string(n) + "," + std::to_string(d) + "," +
                detail::fmt_double(nats) + "," + detail::fmt_double(nats_to_bits(nats)) + "\n";
      }
  const std::string hash = hex_hash("rate-table\n" + alpha_text + "\n" + n_text + "\n" + d_text);
  write_output(out_path, csv_header(hash, "alpha,n,d,delta_nats,delta_bits") + rows);
  return 0;
}

struct Ellipse {
  double var_x, var_y, cov_xy, axis_major, axis_minor, angle_deg;
};

// One-standard-deviation contour of a 2x2 covariance.
Ellipse ellipse_of(const Eigen::Matrix2d& cov) {
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  const Eigen::Vector2d major = es.eigenvectors().col(1);
  double angle = std::atan2(major.y(), major.x()) * 180.0 / M_PI;
  if (angle < 0.0) angle += 180.0;
  if (angle >= 180.0) angle -= 180.0;
  // A circle has no orientation.
  if (es.eigenvalues()(1) - es.eigenvalues()(0) <= 1e-9 * es.eigenvalues()(1)) angle = 0.0;
  return {cov(0, 0), cov(1, 1), cov(0, 1), std::sqrt(es.eigenvalues()(1)),
          std::sqrt(es.eigenvalues()(0)), angle};
}

int cmd_toy2d(double alpha, std::uint64_t seed, const std::string& out_path) {
  if (!(alpha >= 0.0 && alpha <= kAlphaMax))
    throw UsageError("--alpha must lie in [0, 1 - 1e-6]");
  MinKlOptions opt;
  opt.seed = seed;
  const auto res = numeric_min_kl(Ar1Prior({alpha}), 2, opt);

  Eigen::Matrix2d prior_cov;
  prior_cov << 1.0, alpha, alpha, 1.0;
  Eigen::Matrix2d post_cov = Eigen::Matrix2d::Zero();
  post_cov(0, 0) = res.argmin.stds(0, 0) * res.argmin.stds(0, 0);
  post_cov(1, 1) = res.argmin.stds(1, 0) * res.argmin.stds(1, 0);

  const double closed = committed_rate_1d(alpha, 2);
  std::string rows;
  auto row = [&](const std::string& shape, double cx, double cy, const Ellipse& e) {
    rows += shape + "," + detail::fmt_double(cx) + "," + detail::fmt_double(cy) + "," +
            detail::fmt_double(e.var_x) + "," + detail::fmt_double(e.var_y) + "," +
            detail::fmt_double(e.cov_xy) + "," + detail::fmt_double(e.axis_major) + "," +
            detail::fmt_double(e.axis_minor) + "," + detail::fmt_double(e.angle_deg) + "," +
            detail::fmt_double(res.min_kl) + "," + detail::fmt_double(nats_to_bits(res.min_kl)) +
            "," + detail::fmt_double(closed) + "\n";
  };
  row("prior", 0.0, 0.0, ellipse_of(prior_cov));
  row("posterior", res.argmin.means(0, 0), res.argmin.means(1, 0), ellipse_of(post_cov));

  const std::string hash = hex_hash("toy2d\n" + detail::fmt_double(alpha) + "\n" + std::to_string(seed));
  write_output(out_path,
               csv_header(hash,
                          "shape,center_x,center_y,var_x,var_y,cov_xy,axis_major,axis_minor,"
                          "angle_deg,min_kl_nats,min_kl_bits,committed_rate_nats") +
                   rows);
  return 0;
}

int cmd_verify(const std::string& suite, std::uint64_t seed, const std::string& report_path) {
  const VerifyReport r = run_verify(suite, seed);
  nlohmann::json checks = nlohmann::json::array();
  for (const Check& c : r.checks) {
    checks.push_back({{"name", c.name}, {"value", c.value}, {"threshold", c.threshold},
                      {"passed", c.passed}, {"detail", c.detail}});
    std::cerr << (c.passed ? "PASS " : "FAIL ") << suite << "." << c.name << " value "
              << detail::fmt_double(c.value) << " threshold " << detail::fmt_double(c.threshold)
              << (c.detail.empty() ? "" : " (" + c.detail + ")") << "\n";
  }
  const nlohmann::json j = {{"format", "dvae-verify"},
                            {"dvae_version", kVersion},
                            {"config_hash", hex_hash("verify\n" + suite + "\n" + std::to_string(seed))},
                            {"suite", suite},
                            {"seed", seed},
                            {"passed", r.passed()},
                            {"checks", checks}};
  write_output(report_path, j.dump(1) + "\n");
  return r.passed() ? 0 : kExitFail;
}

TrainConfig load_with_overrides(const std::string& path, const std::vector<std::string>& sets) {
  TrainConfig cfg;
  apply_config_text(cfg, read_text_file(path), path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  return cfg;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              std::optional<std::uint64_t> seed, const std::string& out_dir, bool quiet) {
  TrainConfig cfg = load_with_overrides(config_path, sets);
  if (seed) cfg.seed = *seed;
  validate(cfg);
  if (cfg.checkpoint_every > 0 && cfg.checkpoint_dir == ".") cfg.checkpoint_dir = out_dir;

  TrainHooks hooks;
  const std::size_t every = std::max<std::size_t>(1, cfg.steps / 20);
  if (!quiet)
    hooks.on_step = [&](const StepMetrics& m) {
      if (m.step % every == 0 || m.step == cfg.steps)
        std::fprintf(stderr, "step %6zu  recon %12.4f  rate %9.4f  objective %12.4f\n", m.step,
                     m.reconstruction, m.rate, m.objective);
    };
  const TrainResult res = train(cfg, hooks);
  const RunRecord& rec = res.record;

  fs::create_directories(out_dir);
  write_run_record(rec, (fs::path(out_dir) / "run.json").string());
  write_output((fs::path(out_dir) / "metrics.csv").string(), metrics_csv(rec));
  if (res.model) save_checkpoint(*res.model, (fs::path(out_dir) / "model.json").string(), rec.config_hash);

  std::printf("config %s seed %llu status %s\n", rec.config_hash.c_str(),
              static_cast<unsigned long long>(rec.seed), rec.status.c_str());
  if (!rec.message.empty()) std::printf("message: %s\n", rec.message.c_str());
  if (cfg.model.constraint != ConstraintMode::none)
    std::printf("committed rate %.6f nats, min step margin %.3g, violations %zu\n", rec.committed_rate,
                rec.min_rate_margin, rec.structural_violations);
  if (rec.final) {
    const FinalEval& f = *rec.final;
    std::printf("test rate %.6f nats (%.6f bits), distortion %.4f, -ELBO %.4f\n", f.test.rate,
                nats_to_bits(f.test.rate), f.test.distortion, f.test.neg_elbo());
    std::printf("probe accuracy %.4f, held-out rate under AR(1) prior %.4f, under aux prior %.4f\n",
                f.probe_accuracy, f.prior_rate_heldout, f.aux_rate_heldout);
  }
  return rec.status == "ok" && rec.structural_violations == 0 ? 0 : kExitFail;
}

int cmd_sweep(const std::string& grid_path, const std::string& out_dir, std::size_t threads) {
  SweepGrid g = parse_sweep_grid(read_text_file(grid_path), fs::path(grid_path).parent_path().string(),
                                 grid_path);
  if (threads > 0) g.threads = threads;
  const fs::path runs = fs::path(out_dir) / "runs";
  fs::create_directories(runs);
  const auto rows = run_sweep(g, [&](const SweepRow& r) {
    char knob[32];
    std::snprintf(knob, sizeof knob, "%g", r.knob);
    const std::string name = r.method + "_" + knob + "_s" + std::to_string(r.seed) + ".json";
    write_run_record(r.record, (runs / name).string());
    std::fprintf(stderr, "%-16s knob %-8s seed %-4llu %s\n", r.method.c_str(), knob,
                 static_cast<unsigned long long>(r.seed), r.record.status.c_str());
  });
  write_output((fs::path(out_dir) / "sweep_test.csv").string(), sweep_csv(rows, g.hash, false));
  write_output((fs::path(out_dir) / "sweep_train.csv").string(), sweep_csv(rows, g.hash, true));
  std::size_t bad = 0;
  for (const auto& r : rows) bad += r.record.status != "ok";
  std::printf("%zu runs, %zu not ok; tables in %s\n", rows.size(), bad, out_dir.c_str());
  return bad == 0 ? 0 : kExitFail;
}

int cmd_gen_data(const std::string& config_path, const std::vector<std::string>& sets,
                 std::optional<std::uint64_t> seed, const std::string& out_path) {
  TrainConfig cfg = load_with_overrides(config_path, sets);
  if (seed) cfg.data.seed = *seed;
  const Dataset ds = gen_synthetic(cfg.data);
  if (const auto dir = fs::path(out_path).parent_path(); !dir.empty()) fs::create_directories(dir);
  save_dataset(ds, out_path);
  std::printf("dataset hash %016llx, train %lld x %lld, test %lld x %lld\n",
              static_cast<unsigned long long>(dataset_hash(ds)), static_cast<long long>(ds.train_x.rows()),
              static_cast<long long>(ds.train_x.cols()), static_cast<long long>(ds.test_x.rows()),
              static_cast<long long>(ds.test_x.cols()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequence VAE with a committed-rate AR(1) prior"};
  app.set_version_flag("--version", std::string("dvae ") + kVersion);
  app.require_subcommand(1);

  std::string alpha_grid, n_grid, dims = "1", out = "-";
  auto* rate = app.add_subcommand("rate-table", "Committed rate over a grid of (alpha, n, d)");
  rate->add_option("--alpha-grid", alpha_grid, "Comma list or lo:hi:count")->required();
  rate->add_option("--n-grid", n_grid, "Sequence lengths, comma list or lo:hi:count")->required();
  rate->add_option("--dims", dims, "Latent dimensions")->capture_default_str();
  rate->add_option("--out", out, "CSV path, - for stdout")->capture_default_str();

  double alpha = 0.0;
  std::uint64_t seed = 1;
  auto* toy = app.add_subcommand("toy2d", "Optimal posterior and prior contours for n = 2");
  toy->add_option("--alpha", alpha, "Prior correlation")->required();
  toy->add_option("--seed", seed, "Seed for the optimizer restarts")->capture_default_str();
  toy->add_option("--out", out, "CSV path, - for stdout")->capture_default_str();

  std::string suite;
  auto* ver = app.add_subcommand("verify", "Run a self-check suite");
  ver->add_option("--suite", suite)->required()->check(CLI::IsMember(verify_suites()));
  ver->add_option("--seed", seed)->capture_default_str();
  ver->add_option("--report", out, "JSON report path, - for stdout")->capture_default_str();

  std::string config_path, out_dir = "run";
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed_override;
  bool quiet = false;
  auto* tr = app.add_subcommand("train", "Train one model");
  tr->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  tr->add_option("--seed", seed_override, "Overrides train.seed");
  tr->add_option("--set", sets, "key=value override, repeatable");
  tr->add_option("--out-dir", out_dir)->capture_default_str();
  tr->add_flag("--quiet", quiet, "No progress lines");

  std::string grid_path;
  std::size_t threads = 0;
  auto* sw = app.add_subcommand("sweep", "Run an ablation grid");
  sw->add_option("--grid", grid_path)->required()->check(CLI::ExistingFile);
  sw->add_option("--out-dir", out_dir)->capture_default_str();
  sw->add_option("--threads", threads, "Overrides the grid's thread count");

  std::string data_out;
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic dataset described by a config");
  gen->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  gen->add_option("--seed", seed_override, "Overrides data.seed");
  gen->add_option("--set", sets, "key=value override, repeatable");
  gen->add_option("--out", data_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*rate) return cmd_rate_table(alpha_grid, n_grid, dims, out);
    if (*toy) return cmd_toy2d(alpha, seed, out);
    if (*ver) return cmd_verify(suite, seed, out);
    if (*tr) return cmd_train(config_path, sets, seed_override, out_dir, quiet);
    if (*sw) return cmd_sweep(grid_path, out_dir, threads);
    if (*gen) return cmd_gen_data(config_path, sets, seed_override, data_out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFail;
  }
  return kExitUsage;
}
