#pragma once

// Command-line front end. Commands:
//
//   gen-data    write the HMM task datasets (train.cwsd, val.cwsd)
//   train       run the trainer; metrics.jsonl, last.ckpt, best.ckpt, summary.json
//   eval        evaluate a checkpoint on the validation set; eval.json
//   diagnose    estimator bias/variance table and the SSWS/CWS loss-spread witness
//   emit-plots  long-format CSV (run, step, metric, value) per figure
//
// Every command writes <command>.manifest.json into its output directory.
//
// Exit codes:
//   0   success
//   1   unexpected error
//   2   config error (parse error, unknown key, invalid value, checkpoint from another config)
//   3   numeric fault (the last good checkpoint is printed)
//   4   data or file format error
//   5   contract violation (e.g. diagnose on a non-enumerable toy)
//   64  usage error (unknown command or flag)

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <zlib.h>
#include <Eigen/Core>

#include "cws/config.hpp"
#include "cws/diagnose.hpp"
#include "cws/plots.hpp"
#include "cws/tasks.hpp"
#include "cws/trainer.hpp"

namespace cws::cli {

inline constexpr const char* kVersion = "1.0.0";

enum ExitCode : int {
  kOk = 0,
  kError = 1,
  kConfigError = 2,
  kNumericFault = 3,
  kFormatError = 4,
  kContractViolation = 5,
  kUsage = 64,
};

struct Options {
  std::string command;
  std::string config;
  std::vector<std::string> sets;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  bool resume = false;
  bool allow_config_mismatch = false;
  std::string checkpoint;
  std::vector<std::string> inputs;
};

inline TrainConfig resolve_config(const Options& o) {
  TrainConfig c;
  if (!o.config.empty()) {
    if (!std::filesystem::exists(o.config)) throw ConfigError("config file not found: " + o.config);
    c = load_config(o.config);
  }
  for (const auto& s : o.sets) {
    try {
      apply_override(c, s);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("--set: ") + e.what());
    }
  }
  if (o.seed) c.seed = *o.seed;
  return c;
}

inline nlohmann::json versions() {
  std::ostringstream eigen;
  eigen << EIGEN_WORLD_VERSION << "." << EIGEN_MAJOR_VERSION << "." << EIGEN_MINOR_VERSION;
  std::ostringstream json;
  json << NLOHMANN_JSON_VERSION_MAJOR << "." << NLOHMANN_JSON_VERSION_MINOR << "." << NLOHMANN_JSON_VERSION_PATCH;
  return {{"cws", kVersion},          {"cli11", CLI11_VERSION}, {"nlohmann_json", json.str()},
          {"eigen", eigen.str()},     {"zlib", ZLIB_VERSION},   {"compiler", __VERSION__},
          {"rng", Rng::kAlgorithm}};
}

// Deterministic: identical inputs give a byte-identical manifest.
inline void write_manifest(const std::filesystem::path& dir, const Options& o, const TrainConfig& c,
                           nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& k : config_keys()) cfg[k] = get_config_value(c, k);
  nlohmann::json m = {{"command", o.command},
                      {"config_hash", io::hex64(config_hash(c))},
                      {"seed", c.seed},
                      {"config", cfg},
                      {"versions", versions()}};
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  std::filesystem::create_directories(dir);
  io::write_file_atomic(dir / (o.command + ".manifest.json"), m.dump(2) + "\n");
}

inline std::string csv_number(double v) { return plot_detail::number(v); }

// CSV with the given columns from JSON objects (strings quoted when needed).
inline std::string json_rows_csv(const std::vector<nlohmann::json>& rows, const std::vector<std::string>& cols) {
  std::string s;
  for (std::size_t i = 0; i < cols.size(); ++i) s += (i ? "," : "") + cols[i];
  s += "\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < cols.size(); ++i) {
      const auto& v = r.at(cols[i]);
      if (i) s += ",";
      if (v.is_string()) s += plot_detail::quote(v.get<std::string>());
      else if (v.is_number_float()) s += csv_number(v.get<double>());
      else if (v.is_null()) s += "nan";
      else s += v.dump();
    }
    s += "\n";
  }
  return s;
}

inline std::string jsonl(const std::vector<nlohmann::json>& rows) {
  std::string s;
  for (const auto& r : rows) s += r.dump() + "\n";
  return s;
}

inline std::string fmt(double v, int precision = 4) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(precision);
  ss << v;
  return ss.str();
}

// ---- gen-data -----------------------------------------------------------------------

inline int gen_data(const Options& o, std::ostream& out) {
  const TrainConfig c = resolve_config(o);
  check_config_structure(c);
  if (c.task != Task::hmm) throw ConfigError("gen-data generates the hmm task; MNIST is read from IDX files");
  const TaskData d = generate_hmm(c);
  const std::filesystem::path dir = o.out;
  std::filesystem::create_directories(dir);
  save_dataset(d.train, dir / "train.cwsd");
  save_dataset(d.val, dir / "val.cwsd");
  write_manifest(dir, o, c);
  out << "wrote " << d.train.size() << " training and " << d.val.size() << " validation sequences to " << dir.string()
      << "\n";
  return kOk;
}

// ---- train ----------------------------------------------------------------------------

inline nlohmann::json to_json(const EvalResult& e) {
  nlohmann::json topk = nlohmann::json::object();
  for (const auto& [k, v] : e.topk) topk[std::to_string(k)] = v;
  return {{"accuracy", e.accuracy}, {"topk", topk}, {"loss_p", metrics_detail::number(e.loss_p)}, {"steps", e.steps}};
}

inline void print_eval(std::ostream& out, const EvalResult& e) {
  out << "val_accuracy " << fmt(e.accuracy);
  for (const auto& [k, v] : e.topk) out << "  top" << k << " " << fmt(v);
  out << "  val_loss_p " << fmt(e.loss_p, 3) << "\n";
}

inline int train(const Options& o, std::ostream& out) {
  const TrainConfig c = resolve_config(o);
  validate_config(c);
  const TaskData d = load_task_data(c);
  const std::filesystem::path dir = o.out;
  write_manifest(dir, o, c, {{"resume", o.resume}});
  if (!o.resume)
    for (const char* f : {"metrics.jsonl", "last.ckpt", "best.ckpt", "summary.json"}) std::filesystem::remove(dir / f);
  return with_task_model(c, d.train, [&](auto& model) {
    TrainerOptions topts;
    topts.out_dir = dir;
    topts.on_row = [&](const MetricRow& r) {
      if (!r.eval) return;
      out << "step " << r.step << "  epoch " << r.epoch << "  loss_p " << fmt(r.loss_p, 3) << "  val_accuracy "
          << fmt(r.val_accuracy.value_or(0.0)) << "  (" << fmt(r.wall_time, 1) << " s)\n";
      out.flush();
    };
    Trainer tr(model, c, d.train, d.val, topts);
    if (o.resume && std::filesystem::exists(tr.last_checkpoint())) {
      tr.resume(tr.last_checkpoint(), {o.allow_config_mismatch});
      out << "resumed from " << tr.last_checkpoint().string() << " at step " << tr.state().step << "\n";
    }
    const TrainSummary s = tr.run();
    nlohmann::json j = {{"objective", to_string(c.objective)},
                        {"task", to_string(c.task)},
                        {"seed", c.seed},
                        {"steps", s.steps},
                        {"epochs", s.epochs},
                        {"stopped_early", s.stopped_early},
                        {"best_accuracy", s.best_accuracy},
                        {"best_step", s.best_step},
                        {"final", to_json(*s.final_eval)}};
    io::write_file_atomic(dir / "summary.json", j.dump(2) + "\n");
    out << "final metrics (" << to_string(c.objective) << ", " << to_string(c.task) << ", seed " << c.seed << ")\n";
    out << "steps " << s.steps << "  epochs " << s.epochs << (s.stopped_early ? "  stopped early" : "") << "\n";
    print_eval(out, *s.final_eval);
    out << "best val_accuracy " << fmt(s.best_accuracy) << " at step " << s.best_step << "\n";
    return kOk;
  });
}

// ---- eval -------------------------------------------------------------------------------

inline int eval(const Options& o, std::ostream& out) {
  const TrainConfig c = resolve_config(o);
  check_config_structure(c);
  if (o.checkpoint.empty()) throw ConfigError("eval needs --checkpoint PATH");
  const TaskData d = load_task_data(c);
  const std::filesystem::path dir = o.out;
  return with_task_model(c, d.train, [&](auto& model) {
    Trainer tr(model, c, d.train, d.val);
    tr.resume(o.checkpoint, {o.allow_config_mismatch});
    const EvalResult e = tr.evaluate_now();
    write_manifest(dir, o, c, {{"checkpoint", o.checkpoint}});
    nlohmann::json j = to_json(e);
    j["checkpoint"] = o.checkpoint;
    j["checkpoint_step"] = tr.state().step;
    io::write_file_atomic(dir / "eval.json", j.dump(2) + "\n");
    out << "checkpoint " << o.checkpoint << " (step " << tr.state().step << ")\n";
    print_eval(out, e);
    return kOk;
  });
}

// ---- diagnose ------------------------------------------------------------------------------

inline const std::vector<std::string>& cv_witness_columns() {
  static const std::vector<std::string> cols{"alpha",    "batches", "ssws_mean", "ssws_std", "ssws_cv",
                                             "cws_mean", "cws_std", "cws_cv",    "ratio"};
  return cols;
}

inline int diagnose(const Options& o, std::ostream& out) {
  const TrainConfig c = resolve_config(o);
  check_config_structure(c);
  const std::filesystem::path dir = o.out;
  ToyProblem p = make_toy_problem(c);
  write_manifest(dir, o, c);

  std::vector<nlohmann::json> rows;
  for (const auto& cell : estimator_study(p, c.diag_K, c.diag_sets, Rng(c.seed).fork(0xD1A6)))
    rows.push_back(to_json(cell));
  io::write_file_atomic(dir / "estimators.jsonl", jsonl(rows));
  io::write_file_atomic(dir / "estimators.csv", json_rows_csv(rows, estimator_cell_columns()));
  out << "estimator       K   bias_l2    max_z     total_variance\n";
  for (const auto& r : rows) {
    std::string name = r["estimator"].get<std::string>();
    name.resize(12, ' ');
    out << name << "  " << std::setw(3) << r["K"].get<std::size_t>() << "   " << fmt(r["bias_l2"].get<double>(), 5)
        << "   " << fmt(r["max_z"].get<double>(), 2) << "     " << fmt(r["total_variance"].get<double>(), 6) << "\n";
  }

  if (c.task == Task::hmm && c.diag_batches > 0) {
    const TaskData d = load_task_data(c);
    SeqModel model = make_sequence_model(c, d.train);
    Trainer tr(model, c, d.train, d.val);
    if (!o.checkpoint.empty()) tr.resume(o.checkpoint, {o.allow_config_mismatch});
    const std::size_t per_epoch = tr.batches_per_epoch();
    const std::vector<double> alphas = c.diag_alpha.empty() ? std::vector<double>{c.alpha} : c.diag_alpha;
    auto batch_of = [&](std::size_t i) { return make_batch(d.train, tr.batch_indices(i / per_epoch, i % per_epoch)); };
    std::vector<nlohmann::json> wrows;
    for (const auto& w : cv_witness(model, batch_of, c.diag_batches, c.K, alphas, Rng(c.seed).fork(0xC0F)))
      wrows.push_back(to_json(w));
    io::write_file_atomic(dir / "cv_witness.jsonl", jsonl(wrows));
    io::write_file_atomic(dir / "cv_witness.csv", json_rows_csv(wrows, cv_witness_columns()));
    out << "\nphi-loss spread over " << c.diag_batches << " batches (K = " << c.K << ")\n";
    out << "alpha     ssws_cv    cws_cv     ratio\n";
    for (const auto& w : wrows)
      out << fmt(w["alpha"].get<double>(), 1) << "   " << fmt(w["ssws_cv"].get<double>()) << "    "
          << fmt(w["cws_cv"].get<double>()) << "    " << fmt(w["ratio"].get<double>(), 3) << "\n";
  }
  return kOk;
}

// ---- emit-plots ---------------------------------------------------------------------------

struct PlotInput {
  std::string run;
  std::filesystem::path path;
};

// Accepts `name=path` or a path; a directory means its metrics.jsonl and the
// run is named after the directory.
inline PlotInput parse_plot_input(const std::string& s) {
  const auto eq = s.find('=');
  PlotInput in;
  if (eq != std::string::npos && s.substr(0, eq).find('/') == std::string::npos) {
    in.run = s.substr(0, eq);
    in.path = s.substr(eq + 1);
  } else {
    in.path = s;
  }
  if (std::filesystem::is_directory(in.path)) {
    if (in.run.empty()) in.run = std::filesystem::absolute(in.path).lexically_normal().filename().string();
    if (in.run.empty()) in.run = std::filesystem::absolute(in.path).lexically_normal().parent_path().filename().string();
    in.path /= "metrics.jsonl";
  }
  if (in.run.empty()) {
    const auto parent = std::filesystem::absolute(in.path).parent_path().filename().string();
    in.run = parent.empty() ? in.path.stem().string() : parent;
  }
  if (!std::filesystem::is_regular_file(in.path)) throw FormatError("no metrics file at " + in.path.string());
  return in;
}

inline int emit_plots(const Options& o, std::ostream& out, std::ostream& err) {
  const TrainConfig c = resolve_config(o);
  std::vector<RunMetrics> runs;
  nlohmann::json inputs = nlohmann::json::array();
  std::size_t skipped = 0;
  for (const auto& s : o.inputs) {
    PlotInput in = parse_plot_input(s);
    for (const auto& r : runs)
      if (r.run == in.run) throw ConfigError("two inputs are both named '" + in.run + "'; use name=path");
    RunMetrics rm{in.run, read_metrics(in.path)};
    skipped += rm.log.skipped;
    if (rm.log.skipped > 0)
      err << "warning: skipped " << rm.log.skipped << " corrupt line(s) in " << in.path.string() << "\n";
    inputs.push_back({{"run", in.run}, {"path", in.path.string()}, {"rows", rm.log.rows.size()},
                      {"skipped", rm.log.skipped}});
    runs.push_back(std::move(rm));
  }
  const std::filesystem::path dir = o.out;
  write_manifest(dir, o, c, {{"inputs", inputs}});
  for (const auto& [figure, rows] : plot_tables(runs)) {
    io::write_file_atomic(dir / (figure + ".csv"), plot_csv(rows));
    out << figure << ".csv: " << rows.size() << " rows\n";
  }
  if (skipped > 0) err << "warning: " << skipped << " corrupt metrics line(s) skipped in total\n";
  return kOk;
}

// ---- entry point -------------------------------------------------------------------------------

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semi-supervised training of discrete-latent generative models", "cws"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Config file (key = value lines)");
    sub->add_option("--set", o.sets, "Override one config key: key=value (repeatable)");
    sub->add_option("--out", o.out, "Output directory")->capture_default_str();
    sub->add_option("--seed", o.seed, "Run seed (overrides the config)");
  };
  auto* gen = app.add_subcommand("gen-data", "Write the HMM task datasets");
  common(gen);
  auto* tr = app.add_subcommand("train", "Train a model");
  common(tr);
  tr->add_flag("--resume", o.resume, "Continue from <out>/last.ckpt if it exists");
  tr->add_flag("--allow-config-mismatch", o.allow_config_mismatch, "Load a checkpoint written under another config");
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the validation set");
  common(ev);
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint to evaluate")->required();
  ev->add_flag("--allow-config-mismatch", o.allow_config_mismatch, "Load a checkpoint written under another config");
  auto* dg = app.add_subcommand("diagnose", "Estimator bias/variance report and phi-loss spread witness");
  common(dg);
  dg->add_option("--checkpoint", o.checkpoint, "Model for the witness (default: freshly initialized)");
  dg->add_flag("--allow-config-mismatch", o.allow_config_mismatch, "Load a checkpoint written under another config");
  auto* pl = app.add_subcommand("emit-plots", "Long-format CSV per figure from metrics files");
  common(pl);
  pl->add_option("inputs", o.inputs, "Metrics files or run directories, optionally name=path")->required();

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "cws: " << e.what() << "\n" << "run 'cws --help' for usage\n";
    return kUsage;
  }

  try {
    if (gen->parsed()) return o.command = "gen-data", gen_data(o, out);
    if (tr->parsed()) return o.command = "train", train(o, out);
    if (ev->parsed()) return o.command = "eval", eval(o, out);
    if (dg->parsed()) return o.command = "diagnose", diagnose(o, out);
    if (pl->parsed()) return o.command = "emit-plots", emit_plots(o, out, err);
    err << "cws: no command\n";
    return kUsage;
  } catch (const TrainingAborted& e) {
    err << "numeric fault: " << e.what() << "\n";
    err << "checkpoint: " << e.checkpoint() << "\n";
    return kNumericFault;
  } catch (const NumericFault& e) {
    err << "numeric fault: " << e.what() << "\n";
    return kNumericFault;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << "\n";
    return kFormatError;
  } catch (const ContractViolation& e) {
    err << "contract violation: " << e.what() << "\n";
    return kContractViolation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kError;
  }
}

}  // namespace cws::cli
