#pragma once

// Training configuration: a flat `key = value` text format. Every field is
// addressable by name, `#` starts a comment, unknown keys are errors.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cws/error.hpp"
#include "cws/io.hpp"

namespace cws {

enum class Objective { m1m2, ssws, cws, reinforce_m1m2, iwae_supervised_baseline };
enum class Task { mnist, hmm };

inline const char* to_string(Objective o) {
  switch (o) {
    case Objective::m1m2: return "m1m2";
    case Objective::ssws: return "ssws";
    case Objective::cws: return "cws";
    case Objective::reinforce_m1m2: return "reinforce-m1m2";
    case Objective::iwae_supervised_baseline: return "iwae-supervised-baseline";
  }
  return "?";
}

inline const char* to_string(Task t) { return t == Task::mnist ? "mnist" : "hmm"; }

struct TrainConfig {
  Objective objective = Objective::cws;
  Task task = Task::hmm;
  std::uint64_t seed = 1;

  std::size_t K = 10;
  double alpha = 1.0;
  double lr_theta = 1e-3;
  double lr_phi = 1e-3;
  std::size_t batch_size = 32;
  std::size_t labeled_per_batch = 0;
  std::size_t epochs = 20;
  std::size_t max_steps = 0;  // 0: no cap
  std::size_t eval_every = 50;
  std::size_t log_every = 10;
  std::size_t patience = 20;  // evaluations without improvement; 0 disables
  double grad_clip = 10.0;    // 0 disables
  std::vector<std::size_t> topk{1, 5, 10};
  std::size_t eval_particles = 10;

  std::size_t hidden = 64;
  std::size_t mlp_hidden = 64;
  std::size_t z_dim = 8;
  std::string observation = "gaussian";

  std::string data_dir = "data";
  std::string dataset_dir;  // train.cwsd and val.cwsd written by gen-data; empty: generate
  std::size_t n_labeled = 100;
  bool balanced = true;
  std::size_t train_limit = 0;
  std::size_t val_limit = 0;

  std::size_t hmm_states = 6;
  std::size_t hmm_obs_dim = 4;
  std::size_t hmm_length = 50;
  std::size_t hmm_train = 5000;
  std::size_t hmm_val = 500;
  double hmm_self_transition = 0.9;
  double hmm_mean_scale = 1.0;
  double hmm_noise_std = 1.0;
  std::uint64_t hmm_seed = 1;

  std::string supervision_mode = "per-sequence-all-or-none";
  double supervision_rate = 0.125;
  std::uint64_t supervision_seed = 7;

  std::size_t toy_classes = 3;
  std::size_t toy_z_states = 1;
  std::size_t toy_alphabet = 4;
  std::size_t toy_length = 3;
  double toy_theta_scale = 1.5;
  double toy_phi_scale = 1.0;
  std::uint64_t toy_seed = 31;
  std::string toy_x = "1,3,0";
  std::string toy_labels = "-,-,-";
  std::vector<std::size_t> diag_K{2, 5, 10, 25};
  std::size_t diag_sets = 10000;
  std::size_t diag_batches = 100;
  std::vector<double> diag_alpha{1.0, 10.0, 60.0};
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
  }
  return out;
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

inline std::string format_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <class T>
Field number(std::string key, T TrainConfig::*member) {
  return {key,
          [key, member](TrainConfig& c, const std::string& v) {
            if constexpr (std::is_floating_point_v<T>) {
              c.*member = parse_number<double>(key, v);
            } else {
              c.*member = parse_number<T>(key, v);
            }
          },
          [member](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          }};
}

inline Field text(std::string key, std::string TrainConfig::*member) {
  return {key, [member](TrainConfig& c, const std::string& v) { c.*member = v; },
          [member](const TrainConfig& c) { return c.*member; }};
}

inline std::vector<double> parse_real_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<double>(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

inline Field real_list(std::string key, std::vector<double> TrainConfig::*member) {
  return {key, [key, member](TrainConfig& c, const std::string& v) { c.*member = parse_real_list(key, v); },
          [member](const TrainConfig& c) {
            std::string s;
            for (std::size_t i = 0; i < (c.*member).size(); ++i) s += (i ? "," : "") + format_double((c.*member)[i]);
            return s;
          }};
}

inline Field list(std::string key, std::vector<std::size_t> TrainConfig::*member) {
  return {key, [key, member](TrainConfig& c, const std::string& v) { c.*member = parse_list(key, v); },
          [member](const TrainConfig& c) { return format_list(c.*member); }};
}

inline Field flag(std::string key, bool TrainConfig::*member) {
  return {key,
          [key, member](TrainConfig& c, const std::string& v) {
            if (v == "true" || v == "1") {
              c.*member = true;
            } else if (v == "false" || v == "0") {
              c.*member = false;
            } else {
              throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
            }
          },
          [member](const TrainConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back({"objective",
                 [](TrainConfig& c, const std::string& v) {
                   for (Objective o : {Objective::m1m2, Objective::ssws, Objective::cws, Objective::reinforce_m1m2,
                                       Objective::iwae_supervised_baseline}) {
                     if (v == to_string(o)) {
                       c.objective = o;
                       return;
                     }
                   }
                   throw ConfigError("config key 'objective': unknown objective '" + v + "'");
                 },
                 [](const TrainConfig& c) { return std::string(to_string(c.objective)); }});
    f.push_back({"task",
                 [](TrainConfig& c, const std::string& v) {
                   if (v == "mnist") {
                     c.task = Task::mnist;
                   } else if (v == "hmm") {
                     c.task = Task::hmm;
                   } else {
                     throw ConfigError("config key 'task': unknown task '" + v + "'");
                   }
                 },
                 [](const TrainConfig& c) { return std::string(to_string(c.task)); }});
    f.push_back(number("seed", &TrainConfig::seed));
    f.push_back(number("K", &TrainConfig::K));
    f.push_back(number("alpha", &TrainConfig::alpha));
    f.push_back(number("lr_theta", &TrainConfig::lr_theta));
    f.push_back(number("lr_phi", &TrainConfig::lr_phi));
    f.push_back(number("batch_size", &TrainConfig::batch_size));
    f.push_back(number("labeled_per_batch", &TrainConfig::labeled_per_batch));
    f.push_back(number("epochs", &TrainConfig::epochs));
    f.push_back(number("max_steps", &TrainConfig::max_steps));
    f.push_back(number("eval_every", &TrainConfig::eval_every));
    f.push_back(number("log_every", &TrainConfig::log_every));
    f.push_back(number("patience", &TrainConfig::patience));
    f.push_back(number("grad_clip", &TrainConfig::grad_clip));
    f.push_back(list("topk", &TrainConfig::topk));
    f.push_back(number("eval_particles", &TrainConfig::eval_particles));
    f.push_back(number("hidden", &TrainConfig::hidden));
    f.push_back(number("mlp_hidden", &TrainConfig::mlp_hidden));
    f.push_back(number("z_dim", &TrainConfig::z_dim));
    f.push_back(text("observation", &TrainConfig::observation));
    f.push_back(text("data_dir", &TrainConfig::data_dir));
    f.push_back(text("dataset_dir", &TrainConfig::dataset_dir));
    f.push_back(number("n_labeled", &TrainConfig::n_labeled));
    f.push_back(flag("balanced", &TrainConfig::balanced));
    f.push_back(number("train_limit", &TrainConfig::train_limit));
    f.push_back(number("val_limit", &TrainConfig::val_limit));
    f.push_back(number("hmm_states", &TrainConfig::hmm_states));
    f.push_back(number("hmm_obs_dim", &TrainConfig::hmm_obs_dim));
    f.push_back(number("hmm_length", &TrainConfig::hmm_length));
    f.push_back(number("hmm_train", &TrainConfig::hmm_train));
    f.push_back(number("hmm_val", &TrainConfig::hmm_val));
    f.push_back(number("hmm_self_transition", &TrainConfig::hmm_self_transition));
    f.push_back(number("hmm_mean_scale", &TrainConfig::hmm_mean_scale));
    f.push_back(number("hmm_noise_std", &TrainConfig::hmm_noise_std));
    f.push_back(number("hmm_seed", &TrainConfig::hmm_seed));
    f.push_back(text("supervision_mode", &TrainConfig::supervision_mode));
    f.push_back(number("supervision_rate", &TrainConfig::supervision_rate));
    f.push_back(number("supervision_seed", &TrainConfig::supervision_seed));
    f.push_back(number("toy_classes", &TrainConfig::toy_classes));
    f.push_back(number("toy_z_states", &TrainConfig::toy_z_states));
    f.push_back(number("toy_alphabet", &TrainConfig::toy_alphabet));
    f.push_back(number("toy_length", &TrainConfig::toy_length));
    f.push_back(number("toy_theta_scale", &TrainConfig::toy_theta_scale));
    f.push_back(number("toy_phi_scale", &TrainConfig::toy_phi_scale));
    f.push_back(number("toy_seed", &TrainConfig::toy_seed));
    f.push_back(text("toy_x", &TrainConfig::toy_x));
    f.push_back(text("toy_labels", &TrainConfig::toy_labels));
    f.push_back(list("diag_K", &TrainConfig::diag_K));
    f.push_back(number("diag_sets", &TrainConfig::diag_sets));
    f.push_back(number("diag_batches", &TrainConfig::diag_batches));
    f.push_back(real_list("diag_alpha", &TrainConfig::diag_alpha));
    return f;
  }();
  return all;
}

inline const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace config_detail

// Structural checks that hold for any use of the config; learning rates are
// checked by validate_config, which also requires them to be positive.
inline void check_config_structure(const TrainConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.K < 1) fail("K must be at least 1");
  if (c.objective == Objective::reinforce_m1m2 && c.K < 2) fail("reinforce-m1m2 needs K >= 2 for its baseline");
  if (c.objective == Objective::m1m2 && c.task != Task::mnist) fail("m1m2 enumerates the class and needs task = mnist");
  if (c.alpha < 0.0) fail("alpha must be non-negative");
  if (c.lr_theta < 0.0 || c.lr_phi < 0.0) fail("learning rates must be non-negative");
  if (c.batch_size < 1) fail("batch_size must be at least 1");
  if (c.eval_every < 1) fail("eval_every must be at least 1");
  if (c.log_every < 1) fail("log_every must be at least 1");
  if (c.eval_particles < 1) fail("eval_particles must be at least 1");
  for (std::size_t k : c.topk)
    if (k < 1) fail("topk entries must be at least 1");
  for (std::size_t k : c.diag_K)
    if (k < 2) fail("diag_K entries must be at least 2");
  for (double a : c.diag_alpha)
    if (!(a >= 0.0)) fail("diag_alpha entries must be non-negative");
  if (c.observation != "gaussian" && c.observation != "bernoulli") fail("observation must be gaussian or bernoulli");
  if (c.supervision_rate < 0.0 || c.supervision_rate > 1.0) fail("supervision_rate must lie in [0, 1]");
  if (c.supervision_mode != "per-step-rate" && c.supervision_mode != "per-sequence-all-or-none" &&
      c.supervision_mode != "block") {
    fail("unknown supervision_mode '" + c.supervision_mode + "'");
  }
  if (c.hmm_states < 2) fail("hmm_states must be at least 2");
}

inline void validate_config(const TrainConfig& c) {
  check_config_structure(c);
  if (!(c.lr_theta > 0.0) || !(c.lr_phi > 0.0)) throw ConfigError("learning rates must be positive");
}

inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  config_detail::field(key).set(c, value);
}

inline std::string get_config_value(const TrainConfig& c, const std::string& key) { return config_detail::field(key).get(c); }

// Applies one `key=value` override.
inline void apply_override(TrainConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  set_config_value(c, config_detail::trim(assignment.substr(0, eq)), config_detail::trim(assignment.substr(eq + 1)));
}

// Parses on top of `base`; errors name the source and line.
inline TrainConfig parse_config(const std::string& text, const std::string& source = "<config>",
                                TrainConfig base = {}) {
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    try {
      if (line.find('=') == std::string::npos) throw ConfigError("expected key = value, got '" + line + "'");
      apply_override(base, line);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()), path.string());
}

// Canonical text: every key in a fixed order. Parsing it back gives the same config.
inline std::string serialize_config(const TrainConfig& c) {
  std::string out;
  for (const auto& f : config_detail::fields()) out += f.key + " = " + f.get(c) + "\n";
  return out;
}

inline std::uint64_t config_hash(const TrainConfig& c) { return io::fnv1a(serialize_config(c)); }

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : config_detail::fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace cws
