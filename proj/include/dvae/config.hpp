#pragma once

// Run configuration and its text format.
//
//   # comment
//   section.key = value
//
// One assignment per line; unknown or repeated keys are errors. Keys not
// given keep their defaults. The canonical form lists every key in sorted
// order and is what the config hash is computed over.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dvae/data.hpp"
#include "dvae/errors.hpp"
#include "dvae/nets.hpp"
#include "dvae/objective.hpp"

namespace dvae {

struct TrainConfig {
  SyntheticSpec data;
  std::string data_path;  // empty: generate from `data`
  ModelConfig model;
  ObjectiveCfg objective;

  std::size_t steps = 2000;
  std::size_t batch_size = 64;
  std::size_t mc_samples = 1;
  double learning_rate = 1e-3;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;
  std::string checkpoint_dir = ".";

  std::size_t eval_mc_samples = 4;
  std::size_t probe_iterations = 2000;
  double probe_lr = 0.5;
  double probe_l2 = 1e-3;
  std::size_t aux_sequences = 0;  // training sequences for the aux fit; 0 = all
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Shortest text that reads back to the same double.
inline std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || !std::isfinite(out))
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end)
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

inline const std::map<std::string, Field>& fields() {
  using C = TrainConfig;
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    auto num = [&t](const std::string& key, std::function<double&(C&)> ref) {
      t[key] = {[ref](const C& c) { return fmt_double(ref(const_cast<C&>(c))); },
                [ref, key](C& c, const std::string& v) { ref(c) = parse_double(key, v); }};
    };
    auto count = [&t](const std::string& key, std::function<std::size_t&(C&)> ref) {
      t[key] = {[ref](const C& c) { return std::to_string(ref(const_cast<C&>(c))); },
                [ref, key](C& c, const std::string& v) {
                  ref(c) = static_cast<std::size_t>(parse_uint(key, v));
                }};
    };
    auto seed = [&t](const std::string& key, std::function<std::uint64_t&(C&)> ref) {
      t[key] = {[ref](const C& c) { return std::to_string(ref(const_cast<C&>(c))); },
                [ref, key](C& c, const std::string& v) { ref(c) = parse_uint(key, v); }};
    };

    t["data.path"] = {[](const C& c) { return c.data_path; },
                      [](C& c, const std::string& v) { c.data_path = v; }};
    count("data.k_regimes", [](C& c) -> std::size_t& { return c.data.k_regimes; });
    count("data.seq_len", [](C& c) -> std::size_t& { return c.data.seq_len; });
    count("data.obs_dim", [](C& c) -> std::size_t& { return c.data.obs_dim; });
    count("data.n_train", [](C& c) -> std::size_t& { return c.data.n_train; });
    count("data.n_test", [](C& c) -> std::size_t& { return c.data.n_test; });
    seed("data.seed", [](C& c) -> std::uint64_t& { return c.data.seed; });
    count("data.hidden_dim", [](C& c) -> std::size_t& { return c.data.hidden_dim; });
    num("data.hidden_scale", [](C& c) -> double& { return c.data.hidden_scale; });
    num("data.emission_noise", [](C& c) -> double& { return c.data.emission_noise; });
    num("data.drift_scale", [](C& c) -> double& { return c.data.drift_scale; });

    count("model.latent_dim", [](C& c) -> std::size_t& { return c.model.latent_dim; });
    t["model.encoder"] = {[](const C& c) { return to_string(c.model.encoder); },
                          [](C& c, const std::string& v) { c.model.encoder = encoder_mode_from_string(v); }};
    count("model.enc_hidden", [](C& c) -> std::size_t& { return c.model.enc_hidden; });
    count("model.enc_layers", [](C& c) -> std::size_t& { return c.model.enc_layers; });
    count("model.dec_hidden", [](C& c) -> std::size_t& { return c.model.dec_hidden; });
    count("model.dec_layers", [](C& c) -> std::size_t& { return c.model.dec_layers; });
    t["model.constraint"] = {[](const C& c) { return to_string(c.model.constraint); },
                             [](C& c, const std::string& v) {
                               c.model.constraint = constraint_mode_from_string(v);
                             }};
    num("model.delta", [](C& c) -> double& { return c.model.delta; });
    num("model.obs_std", [](C& c) -> double& { return c.model.obs_std; });

    t["objective.mode"] = {[](const C& c) { return to_string(c.objective.mode); },
                           [](C& c, const std::string& v) { c.objective.mode = objective_mode_from_string(v); }};
    num("objective.beta", [](C& c) -> double& { return c.objective.beta; });
    num("objective.free_bits_per_cell", [](C& c) -> double& { return c.objective.free_bits_per_cell; });
    t["objective.free_bits_granularity"] = {
        [](const C& c) { return to_string(c.objective.free_bits_granularity); },
        [](C& c, const std::string& v) { c.objective.free_bits_granularity = granularity_from_string(v); }};
    count("objective.anneal_end_step", [](C& c) -> std::size_t& { return c.objective.anneal_end_step; });

    count("train.steps", [](C& c) -> std::size_t& { return c.steps; });
    count("train.batch_size", [](C& c) -> std::size_t& { return c.batch_size; });
    count("train.mc_samples", [](C& c) -> std::size_t& { return c.mc_samples; });
    num("train.learning_rate", [](C& c) -> double& { return c.learning_rate; });
    num("train.grad_clip", [](C& c) -> double& { return c.grad_clip; });
    seed("train.seed", [](C& c) -> std::uint64_t& { return c.seed; });
    count("train.checkpoint_every", [](C& c) -> std::size_t& { return c.checkpoint_every; });
    t["train.checkpoint_dir"] = {[](const C& c) { return c.checkpoint_dir; },
                                 [](C& c, const std::string& v) { c.checkpoint_dir = v; }};

    count("eval.mc_samples", [](C& c) -> std::size_t& { return c.eval_mc_samples; });
    count("eval.probe_iterations", [](C& c) -> std::size_t& { return c.probe_iterations; });
    num("eval.probe_lr", [](C& c) -> double& { return c.probe_lr; });
    num("eval.probe_l2", [](C& c) -> double& { return c.probe_l2; });
    count("eval.aux_sequences", [](C& c) -> std::size_t& { return c.aux_sequences; });
    return t;
  }();
  return table;
}

}  // namespace detail

/// Copies the shared shape fields from `data` into `model` and checks the
/// combination.
inline void validate(TrainConfig& c) {
  c.model.seq_len = c.data.seq_len;
  c.model.obs_dim = c.data.obs_dim;
  validate(c.model);
  validate(c.objective);
  if (c.steps < 1 || c.batch_size < 1 || c.mc_samples < 1 || c.eval_mc_samples < 1)
    throw ConfigError("train: steps, batch_size and mc_samples must be >= 1");
  if (!(c.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (c.grad_clip < 0.0) throw ConfigError("train.grad_clip must be >= 0");
  const bool constrained = c.model.constraint != ConstraintMode::none;
  if (c.objective.mode == ObjectiveMode::delta_structural && (!constrained || c.model.delta <= 0.0))
    throw ConfigError("objective.mode = delta_structural needs model.constraint set and model.delta > 0");
  if (c.objective.mode != ObjectiveMode::delta_structural && constrained)
    throw ConfigError("model.constraint is only used with objective.mode = delta_structural");
}

/// Applies `key = value` lines to `cfg`. `origin` labels error messages.
inline void apply_config_text(TrainConfig& cfg, const std::string& text,
                              const std::string& origin = "config") {
  std::istringstream in(text);
  std::string line;
  std::map<std::string, int> seen;
  int lineno = 0;
  const auto& table = detail::fields();
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto where = origin + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    if (seen.count(key))
      throw ConfigError(where + ": '" + key + "' already set on line " + std::to_string(seen[key]));
    seen[key] = lineno;
    try {
      it->second.set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + key + ": " + e.what());
    }
  }
}

inline TrainConfig parse_config(const std::string& text, const std::string& origin = "config") {
  TrainConfig cfg;
  apply_config_text(cfg, text, origin);
  validate(cfg);
  return cfg;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline TrainConfig load_config(const std::string& path) {
  return parse_config(read_text_file(path), path);
}

inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  apply_config_text(cfg, key + " = " + value, "override");
}

/// Every key, sorted, one `key = value` per line.
inline std::string canonical_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [key, f] : detail::fields()) out += key + " = " + f.get(cfg) + "\n";
  return out;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// 16 hex digits of FNV-1a over the canonical text.
inline std::string config_hash(const TrainConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(canonical_config(cfg))));
  return buf;
}

}  // namespace dvae
