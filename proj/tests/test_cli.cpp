#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "cli.hpp"

using namespace cws;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = CWS_SOURCE_DIR;
const std::string kSmoke = (kSource / "configs" / "smoke.cfg").string();

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("cws_test_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Result {
  int code = 0;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(std::move(args), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

std::vector<std::string> tiny_mnist(const std::string& objective) {
  return {"--set", "task=mnist",        "--set", "objective=" + objective,
          "--set", "data_dir=" + (kSource / "data").string(),
          "--set", "train_limit=300",   "--set", "val_limit=100",
          "--set", "n_labeled=20",      "--set", "hidden=16",
          "--set", "z_dim=4",           "--set", "batch_size=50",
          "--set", "epochs=2",          "--set", "eval_every=3",
          "--set", "eval_particles=2",  "--set", "alpha=60"};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::size_t eval_points(const MetricsLog& log) {
  std::size_t n = 0;
  for (const auto& r : log.rows) n += r.eval;
  return n;
}

}  // namespace

// ---- usage and exit codes ----------------------------------------------------------

TEST(CliUsage, MissingUnknownCommandOrFlagIsAUsageError) {
  EXPECT_EQ(invoke({}).code, cli::kUsage);
  EXPECT_EQ(invoke({"frobnicate"}).code, cli::kUsage);
  Result r = invoke({"train", "--no-such-flag"});
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_NE(r.err.find("--no-such-flag"), std::string::npos);
  EXPECT_EQ(invoke({"eval", "--config", kSmoke}).code, cli::kUsage);  // --checkpoint is required
  EXPECT_EQ(invoke({"emit-plots"}).code, cli::kUsage);
}

TEST(CliUsage, HelpAndVersionSucceed) {
  Result h = invoke({"--help"});
  EXPECT_EQ(h.code, 0);
  for (const char* cmd : {"gen-data", "train", "eval", "diagnose", "emit-plots"})
    EXPECT_NE(h.out.find(cmd), std::string::npos) << cmd;
  EXPECT_EQ(invoke({"--version"}).code, 0);
}

TEST(CliUsage, ConfigErrorsExitWithTwo) {
  const fs::path dir = temp_dir("config_errors");
  Result r = invoke({"train", "--out", dir.string(), "--set", "no_such_key=1"});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("no_such_key"), std::string::npos);
  EXPECT_EQ(invoke({"train", "--out", dir.string(), "--set", "K"}).code, cli::kConfigError);
  EXPECT_EQ(invoke({"train", "--out", dir.string(), "--config", (dir / "missing.cfg").string()}).code,
            cli::kConfigError);
  spit(dir / "bad.cfg", "task = hmm\nK = ten\n");
  r = invoke({"train", "--out", dir.string(), "--config", (dir / "bad.cfg").string()});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("bad.cfg:2"), std::string::npos) << r.err;
  EXPECT_EQ(invoke({"train", "--out", dir.string(), "--config", kSmoke, "--set", "lr_phi=0"}).code, cli::kConfigError);
  EXPECT_EQ(invoke({"train", "--out", dir.string(), "--config", kSmoke, "--set", "objective=m1m2"}).code,
            cli::kConfigError);
}

TEST(CliUsage, MissingMnistFilesAreADataError) {
  const fs::path dir = temp_dir("no_data");
  Result r = invoke({"train", "--out", dir.string(), "--set", "task=mnist", "--set", "data_dir=" + dir.string()});
  EXPECT_EQ(r.code, cli::kFormatError);
  EXPECT_NE(r.err.find("mnist-train-images"), std::string::npos) << r.err;
}

TEST(CliUsage, NumericFaultExitsWithThreeAndNamesTheCheckpoint) {
  const fs::path dir = temp_dir("fault");
  Result r = invoke({"train", "--config", kSmoke, "--out", dir.string(), "--set", "lr_theta=1e200"});
  EXPECT_EQ(r.code, cli::kNumericFault);
  const std::string ckpt = (dir / "last.ckpt").string();
  EXPECT_NE(r.err.find("checkpoint: " + ckpt), std::string::npos) << r.err;
  EXPECT_TRUE(fs::exists(ckpt));
}

TEST(CliUsage, BinaryReportsTheSameExitCodes) {
  const fs::path dir = temp_dir("binary");
  auto status = [&](const std::string& args) {
    const std::string cmd = std::string(CWS_CLI_BINARY) + " " + args + " >" + (dir / "log").string() + " 2>&1";
    const int s = std::system(cmd.c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(status("--help"), 0);
  EXPECT_EQ(status("frobnicate"), cli::kUsage);
  EXPECT_EQ(status("train --set bogus=1 --out " + dir.string()), cli::kConfigError);
  EXPECT_EQ(status("train --config " + kSmoke + " --out " + dir.string()), 0);
  EXPECT_NE(slurp(dir / "log").find("final metrics"), std::string::npos);
}

// ---- train / eval / gen-data -------------------------------------------------------

TEST(CliTrain, SmokeConfigFinishesQuicklyWithAllOutputs) {
  const fs::path dir = temp_dir("smoke");
  const auto t0 = std::chrono::steady_clock::now();
  Result r = invoke({"train", "--config", kSmoke, "--out", dir.string()});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_LT(secs, 60.0);
  EXPECT_NE(r.out.find("final metrics"), std::string::npos);
  EXPECT_NE(r.out.find("val_accuracy"), std::string::npos);
  for (const char* f : {"metrics.jsonl", "last.ckpt", "best.ckpt", "summary.json", "train.manifest.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;

  const MetricsLog log = read_metrics(dir / "metrics.jsonl");
  EXPECT_EQ(log.skipped, 0u);
  ASSERT_EQ(log.rows.size(), 8u);  // 2 epochs of 4 batches, logged every step
  for (std::size_t i = 1; i < log.rows.size(); ++i) EXPECT_GT(log.rows[i].step, log.rows[i - 1].step);
  EXPECT_EQ(eval_points(log), 4u);

  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(summary["steps"], 8);
  EXPECT_EQ(summary["final"]["accuracy"].get<double>(), *log.rows.back().val_accuracy);
}

TEST(CliTrain, ManifestRecordsHashSeedAndVersions) {
  const fs::path dir = temp_dir("manifest");
  ASSERT_EQ(invoke({"train", "--config", kSmoke, "--out", dir.string(), "--seed", "9"}).code, 0);
  const auto m = nlohmann::json::parse(slurp(dir / "train.manifest.json"));
  TrainConfig c = load_config(kSmoke);
  c.seed = 9;
  EXPECT_EQ(m["command"], "train");
  EXPECT_EQ(m["seed"], 9);
  EXPECT_EQ(m["config_hash"], io::hex64(config_hash(c)));
  EXPECT_EQ(m["config"]["seed"], "9");
  for (const char* k : {"cws", "cli11", "nlohmann_json", "eigen", "zlib", "compiler", "rng"})
    EXPECT_TRUE(m["versions"].contains(k)) << k;
}

TEST(CliTrain, M1M2SameSeedTwiceGivesIdenticalMetrics) {
  const fs::path a = temp_dir("m1m2_a"), b = temp_dir("m1m2_b");
  ASSERT_EQ(invoke(concat({"train", "--out", a.string()}, tiny_mnist("m1m2"))).code, 0);
  ASSERT_EQ(invoke(concat({"train", "--out", b.string()}, tiny_mnist("m1m2"))).code, 0);
  EXPECT_EQ(slurp(a / "train.manifest.json"), slurp(b / "train.manifest.json"));
  EXPECT_EQ(slurp(a / "summary.json"), slurp(b / "summary.json"));
  const MetricsLog la = read_metrics(a / "metrics.jsonl"), lb = read_metrics(b / "metrics.jsonl");
  ASSERT_EQ(la.rows.size(), lb.rows.size());
  ASSERT_GT(la.rows.size(), 0u);
  for (std::size_t i = 0; i < la.rows.size(); ++i) {
    MetricRow x = la.rows[i], y = lb.rows[i];
    x.wall_time = y.wall_time = 0.0;  // the only field that depends on the clock
    EXPECT_EQ(to_json(x).dump(), to_json(y).dump()) << "row " << i;
  }
}

TEST(CliTrain, RerunWithoutResumeStartsFresh) {
  const fs::path dir = temp_dir("rerun");
  ASSERT_EQ(invoke({"train", "--config", kSmoke, "--out", dir.string()}).code, 0);
  const std::string first = slurp(dir / "summary.json");
  ASSERT_EQ(invoke({"train", "--config", kSmoke, "--out", dir.string()}).code, 0);
  EXPECT_EQ(slurp(dir / "summary.json"), first);
  EXPECT_EQ(read_metrics(dir / "metrics.jsonl").rows.size(), 8u);
}

TEST(CliTrain, ResumeOfAFinishedRunAddsNothing) {
  const fs::path dir = temp_dir("resume");
  ASSERT_EQ(invoke({"train", "--config", kSmoke, "--out", dir.string()}).code, 0);
  const std::string metrics = slurp(dir / "metrics.jsonl");
  Result r = invoke({"train", "--config", kSmoke, "--out", dir.string(), "--resume"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("resumed from"), std::string::npos);
  EXPECT_EQ(slurp(dir / "metrics.jsonl"), metrics);
  Result other = invoke({"train", "--config", kSmoke, "--out", dir.string(), "--resume", "--set", "alpha=2"});
  EXPECT_EQ(other.code, cli::kConfigError);
  EXPECT_NE(other.err.find("config hash"), std::string::npos);
}

TEST(CliEval, BestCheckpointReproducesTheBestAccuracy) {
  const fs::path dir = temp_dir("eval");
  ASSERT_EQ(invoke({"train", "--config", kSmoke, "--out", dir.string()}).code, 0);
  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  const fs::path ev = dir / "eval";
  Result r = invoke({"eval", "--config", kSmoke, "--out", ev.string(), "--checkpoint", (dir / "best.ckpt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto e = nlohmann::json::parse(slurp(ev / "eval.json"));
  EXPECT_EQ(e["accuracy"].get<double>(), summary["best_accuracy"].get<double>());
  EXPECT_EQ(e["checkpoint_step"], summary["best_step"]);
  EXPECT_TRUE(fs::exists(ev / "eval.manifest.json"));

  Result mismatch = invoke({"eval", "--config", kSmoke, "--set", "lr_phi=0.5", "--out", ev.string(), "--checkpoint",
                         (dir / "best.ckpt").string()});
  EXPECT_EQ(mismatch.code, cli::kConfigError);
  Result allowed = invoke({"eval", "--config", kSmoke, "--set", "lr_phi=0.5", "--out", ev.string(), "--checkpoint",
                        (dir / "best.ckpt").string(), "--allow-config-mismatch"});
  EXPECT_EQ(allowed.code, 0) << allowed.err;
  Result shape = invoke({"eval", "--config", kSmoke, "--set", "hidden=9", "--out", ev.string(), "--checkpoint",
                      (dir / "best.ckpt").string(), "--allow-config-mismatch"});
  EXPECT_EQ(shape.code, cli::kFormatError);
  EXPECT_NE(shape.err.find("shape"), std::string::npos) << shape.err;
}

TEST(CliGenData, WrittenDatasetTrainsLikeTheGeneratedOne) {
  const fs::path data = temp_dir("gen"), a = temp_dir("gen_a"), b = temp_dir("gen_b");
  Result g = invoke({"gen-data", "--config", kSmoke, "--out", data.string()});
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_TRUE(fs::exists(data / "train.cwsd"));
  EXPECT_TRUE(fs::exists(data / "val.cwsd"));
  EXPECT_TRUE(fs::exists(data / "gen-data.manifest.json"));
  EXPECT_EQ(load_dataset(data / "train.cwsd").size(), 64u);
  ASSERT_EQ(invoke({"train", "--config", kSmoke, "--out", a.string()}).code, 0);
  ASSERT_EQ(invoke({"train", "--config", kSmoke, "--out", b.string(), "--set", "dataset_dir=" + data.string()}).code, 0);
  EXPECT_EQ(slurp(a / "summary.json"), slurp(b / "summary.json"));
  EXPECT_EQ(invoke({"gen-data", "--out", data.string(), "--set", "task=mnist"}).code, cli::kConfigError);
}

// ---- emit-plots -------------------------------------------------------------------------

class CliPlots : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(temp_dir("plots"));
    ASSERT_EQ(invoke({"train", "--config", kSmoke, "--out", (*root_ / "cws").string()}).code, 0);
    ASSERT_EQ(invoke({"train", "--config", kSmoke, "--out", (*root_ / "ssws").string(), "--set", "objective=ssws",
                   "--set", "eval_every=3"})
                  .code,
              0);
  }
  static void TearDownTestSuite() { delete root_; }
  static fs::path* root_;
};
fs::path* CliPlots::root_ = nullptr;

TEST_F(CliPlots, SingleRunHasOneAccuracyRowPerEvalPoint) {
  const fs::path out = *root_ / "plots1";
  Result r = invoke({"emit-plots", "--out", out.string(), (*root_ / "cws").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = parse_plot_csv(slurp(out / "accuracy.csv"));
  const MetricsLog log = read_metrics(*root_ / "cws" / "metrics.jsonl");
  ASSERT_EQ(rows.size(), eval_points(log));
  std::size_t i = 0;
  for (const auto& m : log.rows) {
    if (!m.eval) continue;
    EXPECT_EQ(rows[i].run, "cws");
    EXPECT_EQ(rows[i].step, m.step);
    EXPECT_EQ(rows[i].metric, "val_accuracy");
    EXPECT_EQ(rows[i].value, *m.val_accuracy);
    ++i;
  }
  EXPECT_TRUE(fs::exists(out / "emit-plots.manifest.json"));
  EXPECT_EQ(parse_plot_csv(slurp(out / "topk.csv")).size(), 3 * eval_points(log));
}

TEST_F(CliPlots, TwoRunsAreDistinguishedByTheRunColumn) {
  const fs::path out = *root_ / "plots2";
  ASSERT_EQ(invoke({"emit-plots", "--out", out.string(), "A=" + (*root_ / "cws" / "metrics.jsonl").string(),
                 "B=" + (*root_ / "ssws").string()})
                .code,
            0);
  const auto rows = parse_plot_csv(slurp(out / "accuracy.csv"));
  std::map<std::string, std::size_t> per_run;
  for (const auto& r : rows) ++per_run[r.run];
  EXPECT_EQ(per_run.size(), 2u);
  EXPECT_EQ(per_run["A"], eval_points(read_metrics(*root_ / "cws" / "metrics.jsonl")));
  EXPECT_EQ(per_run["B"], eval_points(read_metrics(*root_ / "ssws" / "metrics.jsonl")));
  EXPECT_NE(per_run["A"], per_run["B"]);
  EXPECT_EQ(invoke({"emit-plots", "--out", out.string(), "A=" + (*root_ / "cws").string(), "A=" + (*root_ / "ssws").string()})
                .code,
            cli::kConfigError);
}

TEST_F(CliPlots, EmittedCsvParsesBackLosslessly) {
  const fs::path out = *root_ / "plots3";
  ASSERT_EQ(invoke({"emit-plots", "--out", out.string(), (*root_ / "cws").string(), "odd,\"name=" + (*root_ / "ssws").string()})
                .code,
            0);
  std::vector<RunMetrics> runs{{"cws", read_metrics(*root_ / "cws" / "metrics.jsonl")},
                               {"odd,\"name", read_metrics(*root_ / "ssws" / "metrics.jsonl")}};
  for (const auto& [figure, expected] : plot_tables(runs)) {
    const std::string text = slurp(out / (figure + ".csv"));
    const auto parsed = parse_plot_csv(text);
    EXPECT_EQ(parsed, expected) << figure;
    EXPECT_EQ(plot_csv(parsed), text) << figure;
  }
}

TEST(PlotCsv, RoundTripsExtremeValues) {
  std::vector<PlotRow> rows{{"r", 1, "m", 0.1},
                            {"r", 2, "m", 1e-300},
                            {"r", 3, "m", -123456789.123456789},
                            {"r,2", 4, "m\"x", std::nextafter(1.0, 2.0)},
                            {"r", 5, "m", std::nan("")},
                            {"r", 6, "m", -std::numeric_limits<double>::infinity()}};
  EXPECT_EQ(parse_plot_csv(plot_csv(rows)), rows);
  EXPECT_THROW(parse_plot_csv("step,run\n"), FormatError);
  EXPECT_THROW(parse_plot_csv("run,step,metric,value\nr,1,m\n"), FormatError);
}

TEST_F(CliPlots, CorruptMetricsLinesAreSkippedWithACount) {
  const fs::path out = *root_ / "plots4";
  const fs::path bad = *root_ / "bad";
  fs::create_directories(bad);
  std::string text = slurp(*root_ / "cws" / "metrics.jsonl");
  text.insert(text.find('\n') + 1, "{\"step\": tru\n");
  text += "garbage\n{\"no_step\": 1}\n";
  spit(bad / "metrics.jsonl", text);
  Result r = invoke({"emit-plots", "--out", out.string(), bad.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("3 corrupt metrics line(s)"), std::string::npos) << r.err;
  EXPECT_EQ(parse_plot_csv(slurp(out / "accuracy.csv")).size(),
            eval_points(read_metrics(*root_ / "cws" / "metrics.jsonl")));
  const auto m = nlohmann::json::parse(slurp(out / "emit-plots.manifest.json"));
  EXPECT_EQ(m["inputs"][0]["skipped"], 3);
  EXPECT_EQ(invoke({"emit-plots", "--out", out.string(), (*root_ / "nothing_here").string()}).code, cli::kFormatError);
}

// ---- diagnose -------------------------------------------------------------------------------

class CliDiagnose : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(temp_dir("diagnose"));
    result_ = new Result(invoke({"diagnose", "--out", dir_->string(), "--set", "diag_sets=2000", "--set",
                              "diag_batches=10", "--set", "hmm_train=200", "--set", "hmm_length=20"}));
  }
  static void TearDownTestSuite() {
    delete dir_;
    delete result_;
  }
  static fs::path* dir_;
  static Result* result_;

  static std::vector<nlohmann::json> jsonl(const fs::path& p) {
    std::vector<nlohmann::json> rows;
    std::stringstream ss(slurp(p));
    std::string line;
    while (std::getline(ss, line)) rows.push_back(nlohmann::json::parse(line));
    return rows;
  }
};
fs::path* CliDiagnose::dir_ = nullptr;
Result* CliDiagnose::result_ = nullptr;

TEST_F(CliDiagnose, ReportMatchesTheDocumentedColumns) {
  ASSERT_EQ(result_->code, 0) << result_->err;
  const auto& cols = estimator_cell_columns();
  std::string header;
  for (std::size_t i = 0; i < cols.size(); ++i) header += (i ? "," : "") + cols[i];
  const std::string csv = slurp(*dir_ / "estimators.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), header);
  const auto rows = jsonl(*dir_ / "estimators.jsonl");
  ASSERT_EQ(rows.size(), 12u);  // three estimators at K = 2, 5, 10, 25
  std::set<std::pair<std::string, std::size_t>> cells;
  for (const auto& r : rows) {
    EXPECT_EQ(r.size(), cols.size());
    for (const auto& c : cols) EXPECT_TRUE(r.contains(c)) << c;
    EXPECT_EQ(r["sets"], 2000);
    cells.insert({r["estimator"].get<std::string>(), r["K"].get<std::size_t>()});
  }
  EXPECT_EQ(cells.size(), 12u);
  for (const std::string e : {"reinforce", "ssws", "cws"})
    for (std::size_t K : {2, 5, 10, 25}) EXPECT_TRUE(cells.contains({e, K})) << e << " K=" << K;
  std::size_t lines = 0;
  std::stringstream ss(csv);
  for (std::string l; std::getline(ss, l);) ++lines;
  EXPECT_EQ(lines, 13u);
  EXPECT_TRUE(fs::exists(*dir_ / "diagnose.manifest.json"));
}

TEST_F(CliDiagnose, CwsMatchesSswsExactlyWithNoSupervision) {
  ASSERT_EQ(result_->code, 0);
  std::map<std::size_t, nlohmann::json> ssws, cws;
  for (const auto& r : jsonl(*dir_ / "estimators.jsonl")) {
    if (r["estimator"] == "ssws") ssws[r["K"]] = r;
    if (r["estimator"] == "cws") cws[r["K"]] = r;
  }
  ASSERT_EQ(ssws.size(), 4u);
  for (const auto& [K, s] : ssws) {
    nlohmann::json c = cws.at(K);
    c["estimator"] = "ssws";
    EXPECT_EQ(c.dump(), s.dump()) << "K=" << K;
  }
}

TEST_F(CliDiagnose, ReinforceHasLargerVarianceThanWakePhiAtEveryK) {
  ASSERT_EQ(result_->code, 0);
  std::map<std::size_t, double> rf, wake;
  for (const auto& r : jsonl(*dir_ / "estimators.jsonl")) {
    if (r["estimator"] == "reinforce") rf[r["K"]] = r["total_variance"];
    if (r["estimator"] == "ssws") wake[r["K"]] = r["total_variance"];
  }
  for (std::size_t K : {2, 5, 10, 25}) EXPECT_GT(rf.at(K), wake.at(K)) << "K=" << K;
}

TEST_F(CliDiagnose, WitnessReportsEveryAlpha) {
  ASSERT_EQ(result_->code, 0);
  const auto rows = jsonl(*dir_ / "cv_witness.jsonl");
  ASSERT_EQ(rows.size(), 3u);
  std::vector<double> alphas;
  for (const auto& r : rows) {
    alphas.push_back(r["alpha"]);
    EXPECT_EQ(r["batches"], 10);
    EXPECT_GT(r["cws_cv"].get<double>(), 0.0);
    EXPECT_DOUBLE_EQ(r["ratio"].get<double>(), r["ssws_cv"].get<double>() / r["cws_cv"].get<double>());
  }
  EXPECT_EQ(alphas, (std::vector<double>{1, 10, 60}));
  const std::string csv = slurp(*dir_ / "cv_witness.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "alpha,batches,ssws_mean,ssws_std,ssws_cv,cws_mean,cws_std,cws_cv,ratio");
}

TEST(CliDiagnoseErrors, NonEnumerableToyIsAContractViolation) {
  const fs::path dir = temp_dir("diag_big");
  Result r = invoke({"diagnose", "--out", dir.string(), "--set", "toy_length=40"});
  EXPECT_EQ(r.code, cli::kContractViolation);
  EXPECT_NE(r.err.find("not enumerable"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "estimators.jsonl"));
}

TEST(CliDiagnoseErrors, ToyInputsAreValidated) {
  const fs::path dir = temp_dir("diag_bad");
  EXPECT_EQ(invoke({"diagnose", "--out", dir.string(), "--set", "toy_x=1,9,0"}).code, cli::kConfigError);
  EXPECT_EQ(invoke({"diagnose", "--out", dir.string(), "--set", "toy_labels=-,-"}).code, cli::kConfigError);
}
