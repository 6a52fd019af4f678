#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "cws/models/toy.hpp"
#include "cws/tasks.hpp"
#include "cws/trainer.hpp"

using namespace cws;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("cws_test_trainer_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TrainConfig tiny_hmm_config() {
  TrainConfig c;
  c.task = Task::hmm;
  c.objective = Objective::cws;
  c.hmm_states = 3;
  c.hmm_obs_dim = 2;
  c.hmm_length = 5;
  c.hmm_train = 40;
  c.hmm_val = 10;
  c.supervision_rate = 0.25;
  c.hidden = 6;
  c.mlp_hidden = 6;
  c.z_dim = 2;
  c.K = 3;
  c.batch_size = 4;
  c.epochs = 100;
  c.max_steps = 8;
  c.eval_every = 4;
  c.log_every = 2;
  c.eval_particles = 2;
  c.topk = {1, 2};
  return c;
}

std::vector<Tensor> values(const ParamStore& ps) { return ps.snapshot(); }

bool bit_identical(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].storage() != b[i].storage()) return false;
  return true;
}

void expect_rows_equal(const std::vector<MetricRow>& a, const std::vector<MetricRow>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].step, b[i].step);
    EXPECT_EQ(a[i].epoch, b[i].epoch);
    EXPECT_EQ(a[i].loss_p, b[i].loss_p);
    EXPECT_EQ(a[i].loss_phi, b[i].loss_phi);
    EXPECT_EQ(a[i].ess_mean, b[i].ess_mean);
    EXPECT_EQ(a[i].grad_norm_theta, b[i].grad_norm_theta);
    EXPECT_EQ(a[i].grad_norm_phi, b[i].grad_norm_phi);
    EXPECT_EQ(a[i].eval, b[i].eval);
    EXPECT_EQ(a[i].val_accuracy, b[i].val_accuracy);
    EXPECT_EQ(a[i].val_loss_p, b[i].val_loss_p);
    EXPECT_EQ(a[i].val_topk, b[i].val_topk);
  }
}

// Stand-in model whose q(y_t) logits are read from a table indexed by the
// sequence id stored in x[t](b, 0).
class TableModel {
 public:
  TableModel(std::vector<std::vector<std::vector<double>>> logits) : logits_(std::move(logits)) {}
  std::size_t num_classes() const { return logits_[0][0].size(); }

  InferenceTrace infer(const SequenceBatch& b, std::size_t K, LatentChooser& ch) const {
    InferenceTrace tr;
    tr.rows = b.size * K;
    tr.length = b.length;
    tr.particles = K;
    for (std::size_t t = 0; t < b.length; ++t) {
      Tensor l(tr.rows, num_classes());
      for (std::size_t n = 0; n < tr.rows; ++n) {
        const auto id = static_cast<std::size_t>(b.x[t](n / K, 0));
        for (std::size_t c = 0; c < num_classes(); ++c) l(n, c) = logits_[id][t][c];
      }
      Categorical q(Var::constant(l));
      std::vector<int> y = ch.choose(t, Site::y, q);
      tr.supervised.push_back(clamp_to_labels(y, b.labels[t], K, num_classes()));
      tr.q_y_logits.push_back(q.logits());
      tr.log_q_y.push_back(q.log_prob(y));
      tr.log_q_z.emplace_back();
      tr.z.emplace_back();
      tr.y.push_back(std::move(y));
    }
    return tr;
  }

  GenerativeTrace log_joint(const SequenceBatch& b, std::size_t K, const InferenceTrace&) const {
    GenerativeTrace g;
    for (std::size_t t = 0; t < b.length; ++t) g.log_p_steps.push_back(Var::constant(Tensor(b.size * K, 1)));
    g.log_p = add_n(g.log_p_steps);
    return g;
  }

 private:
  std::vector<std::vector<std::vector<double>>> logits_;
};

Dataset table_dataset(const std::vector<std::vector<int>>& truth, std::size_t classes) {
  Dataset ds;
  ds.num_classes = classes;
  ds.obs_dim = 1;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    LabeledSequence s;
    s.x = Tensor(truth[i].size(), 1, static_cast<double>(i));
    s.labels = truth[i];
    ds.sequences.push_back(s);
    ds.truth.push_back(truth[i]);
  }
  return ds;
}

EvalOptions eval_opts(std::vector<std::size_t> topk) {
  EvalOptions o;
  o.topk = std::move(topk);
  o.particles = 0;
  return o;
}

}  // namespace

// ---- config ----------------------------------------------------------------

TEST(Config, SerializeParsesBackToSameConfig) {
  TrainConfig c = tiny_hmm_config();
  c.alpha = 0.1;
  c.lr_phi = 3e-4;
  c.balanced = false;
  c.observation = "bernoulli";
  const std::string text = serialize_config(c);
  TrainConfig back = parse_config(text);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(back.lr_phi, 3e-4);
  EXPECT_EQ(back.topk, (std::vector<std::size_t>{1, 2}));
}

TEST(Config, EveryKeyIsAddressable) {
  TrainConfig c;
  for (const auto& key : config_keys()) {
    const std::string v = get_config_value(c, key);
    EXPECT_NO_THROW(set_config_value(c, key, v)) << key;
  }
  EXPECT_EQ(serialize_config(c), serialize_config(TrainConfig{}));
}

TEST(Config, CommentsBlankLinesAndOverrides) {
  TrainConfig c = parse_config("# header\n\nobjective = ssws  # trailing\nK=7\n");
  EXPECT_EQ(c.objective, Objective::ssws);
  EXPECT_EQ(c.K, 7u);
  apply_override(c, "K = 9");
  apply_override(c, "task=mnist");
  EXPECT_EQ(c.K, 9u);
  EXPECT_EQ(c.task, Task::mnist);
}

TEST(Config, UnknownKeyIsAnErrorNamingTheLine) {
  try {
    parse_config("K = 3\nlearning_rate = 0.1\n", "run.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos) << e.what();
  }
  TrainConfig c;
  EXPECT_THROW(apply_override(c, "nonsense=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "no equals sign"), ConfigError);
}

TEST(Config, BadValuesAreErrors) {
  EXPECT_THROW(parse_config("K = three\n"), ConfigError);
  EXPECT_THROW(parse_config("K = 3.5\n"), ConfigError);
  EXPECT_THROW(parse_config("objective = vae\n"), ConfigError);
  EXPECT_THROW(parse_config("balanced = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("topk = 1,,5\n"), ConfigError);
  EXPECT_THROW(parse_config("just some words\n"), ConfigError);
}

TEST(Config, HashTracksEveryValue) {
  TrainConfig a, b;
  b.lr_theta = 2e-3;
  EXPECT_NE(config_hash(a), config_hash(b));
  b = a;
  b.toy_labels = "-,1,-";
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(validate_config(c));
  c.lr_phi = 0.0;
  EXPECT_THROW(validate_config(c), ConfigError);
  EXPECT_NO_THROW(check_config_structure(c));
  c = TrainConfig{};
  c.K = 0;
  EXPECT_THROW(validate_config(c), ConfigError);
  c = TrainConfig{};
  c.objective = Objective::reinforce_m1m2;
  c.K = 1;
  EXPECT_THROW(validate_config(c), ConfigError);
  c = TrainConfig{};
  c.objective = Objective::m1m2;
  c.task = Task::hmm;
  EXPECT_THROW(validate_config(c), ConfigError);
  c.task = Task::mnist;
  EXPECT_NO_THROW(validate_config(c));
  c.supervision_rate = 1.5;
  EXPECT_THROW(validate_config(c), ConfigError);
  c = TrainConfig{};
  c.supervision_mode = "sometimes";
  EXPECT_THROW(validate_config(c), ConfigError);
}

// ---- optimizer -------------------------------------------------------------

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  ParamStore ps;
  Var a = ps.add("a", Group::theta, Tensor::row({1.0, -2.0, 0.5}));
  Adam opt(ps, Group::theta, AdamConfig{.lr = 0.1});
  backward(sum(mul(a, Var::constant(Tensor::row({3.0, -0.5, 0.0})))));
  opt.step();
  const Tensor& v = a.value();
  EXPECT_NEAR(v[0], 1.0 - 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_NEAR(v[1], -2.0 + 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_EQ(v[2], 0.5);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, MatchesHandRecurrenceOverSeveralSteps) {
  ParamStore ps;
  Var a = ps.add("a", Group::phi, Tensor::scalar(2.0));
  Adam opt(ps, Group::phi, AdamConfig{.lr = 0.05});
  double p = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    ps.zero_grad();
    backward(mul(a, a));  // gradient 2a
    const double g = 2.0 * p;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    p -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    opt.step();
    EXPECT_NEAR(a.item(), p, 1e-14);
  }
}

TEST(Adam, NonFiniteGradientFaultsWithoutUpdating) {
  ParamStore ps;
  Var a = ps.add("a", Group::theta, Tensor::row({1.0, 2.0}));
  Adam opt(ps, Group::theta, AdamConfig{});
  a.mutable_grad()[1] = std::numeric_limits<double>::infinity();
  try {
    opt.step();
    FAIL() << "expected NumericFault";
  } catch (const NumericFault& e) {
    EXPECT_NE(std::string(e.what()).find("theta/a"), std::string::npos);
  }
  EXPECT_EQ(a.value()[0], 1.0);
  EXPECT_EQ(opt.steps(), 0u);
}

// ---- checkpoints -------------------------------------------------------------

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  TrainConfig c = tiny_hmm_config();
  TaskData d = load_task_data(c);
  SeqModel m = make_sequence_model(c, d.train);
  Trainer<SeqModel> t(m, c, d.train, d.val);
  t.run();
  const fs::path dir = temp_dir("roundtrip");
  t.save(dir / "a.ckpt");

  SeqModel m2 = make_sequence_model(c, d.train);
  Trainer<SeqModel> t2(m2, c, d.train, d.val);
  t2.resume(dir / "a.ckpt");
  EXPECT_EQ(t2.state(), t.state());
  EXPECT_TRUE(bit_identical(values(m2.params()), values(m.params())));
  t2.save(dir / "b.ckpt");
  EXPECT_EQ(io::read_file(dir / "a.ckpt"), io::read_file(dir / "b.ckpt"));
}

TEST(Checkpoint, ConfigHashMismatchRefusedUnlessOverridden) {
  TrainConfig c = tiny_hmm_config();
  TaskData d = load_task_data(c);
  SeqModel m = make_sequence_model(c, d.train);
  Trainer<SeqModel> t(m, c, d.train, d.val);
  const fs::path dir = temp_dir("hash");
  t.save(dir / "a.ckpt");

  TrainConfig other = c;
  other.alpha = 0.5;
  SeqModel m2 = make_sequence_model(other, d.train);
  Trainer<SeqModel> t2(m2, other, d.train, d.val);
  EXPECT_THROW(t2.resume(dir / "a.ckpt"), ConfigError);
  EXPECT_NO_THROW(t2.resume(dir / "a.ckpt", {.allow_config_mismatch = true}));
}

TEST(Checkpoint, WrongShapeNamesTheTensor) {
  TrainConfig c = tiny_hmm_config();
  TaskData d = load_task_data(c);
  SeqModel m = make_sequence_model(c, d.train);
  Trainer<SeqModel> t(m, c, d.train, d.val);
  const fs::path dir = temp_dir("shape");
  t.save(dir / "a.ckpt");

  TrainConfig wide = c;
  wide.hidden = 7;
  SeqModel m2 = make_sequence_model(wide, d.train);
  const auto before = values(m2.params());
  Trainer<SeqModel> t2(m2, wide, d.train, d.val);
  try {
    t2.resume(dir / "a.ckpt", {.allow_config_mismatch = true});
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("theta/h0"), std::string::npos) << e.what();
  }
  EXPECT_TRUE(bit_identical(values(m2.params()), before));
}

TEST(Checkpoint, CorruptionAndTruncationAreDetected) {
  TrainConfig c = tiny_hmm_config();
  TaskData d = load_task_data(c);
  SeqModel m = make_sequence_model(c, d.train);
  Trainer<SeqModel> t(m, c, d.train, d.val);
  const fs::path dir = temp_dir("corrupt");
  t.save(dir / "a.ckpt");
  auto bytes = io::read_file(dir / "a.ckpt");

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  io::write_file_atomic(dir / "flip.ckpt", flipped);
  EXPECT_THROW(t.resume(dir / "flip.ckpt"), FormatError);

  auto cut = bytes;
  cut.resize(bytes.size() - 100);
  io::write_file_atomic(dir / "cut.ckpt", cut);
  EXPECT_THROW(t.resume(dir / "cut.ckpt"), FormatError);

  io::write_file_atomic(dir / "junk.ckpt", std::string("not a checkpoint at all"));
  EXPECT_THROW(t.resume(dir / "junk.ckpt"), FormatError);
}

// ---- metrics ------------------------------------------------------------------

TEST(Metrics, JsonRoundTripIncludingNonFinite) {
  MetricRow r;
  r.step = 12;
  r.epoch = 1;
  r.wall_time = 0.25;
  r.loss_p = -3.5;
  r.loss_phi = std::nan("");
  r.eval = true;
  r.val_accuracy = 0.75;
  r.val_topk = {{1, 0.75}, {5, 1.0}};
  MetricRow back = metric_row_from_json(nlohmann::json::parse(to_json(r).dump()));
  EXPECT_EQ(back.step, 12u);
  EXPECT_EQ(back.loss_p, -3.5);
  EXPECT_TRUE(std::isnan(back.loss_phi));
  EXPECT_EQ(back.val_accuracy, 0.75);
  EXPECT_EQ(back.val_topk, r.val_topk);
  EXPECT_FALSE(back.val_loss_p.has_value());
}

TEST(Metrics, CorruptLinesAreSkippedAndCounted) {
  const fs::path dir = temp_dir("metrics");
  {
    std::ofstream out(dir / "m.jsonl");
    MetricRow r;
    r.step = 1;
    out << to_json(r).dump() << "\n{\"step\": 2, \"epo\n";
    r.step = 3;
    out << to_json(r).dump() << "\n[1,2]\n";
  }
  MetricsLog log = read_metrics(dir / "m.jsonl");
  ASSERT_EQ(log.rows.size(), 2u);
  EXPECT_EQ(log.rows[1].step, 3u);
  EXPECT_EQ(log.skipped, 2u);
}

TEST(Metrics, WriterAppendsOnlyNewSteps) {
  const fs::path dir = temp_dir("append");
  MetricRow r;
  {
    MetricsWriter w(dir / "m.jsonl");
    for (std::size_t s : {1, 2, 3}) {
      r.step = s;
      w.write(r);
    }
  }
  {
    MetricsWriter w(dir / "m.jsonl");
    for (std::size_t s : {2, 3, 4}) {
      r.step = s;
      w.write(r);
    }
  }
  MetricsLog log = read_metrics(dir / "m.jsonl");
  ASSERT_EQ(log.rows.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(log.rows[i].step, i + 1);
}

// ---- evaluation -----------------------------------------------------------------

TEST(Evaluate, ClassesAheadBreaksTiesTowardLowerIndex) {
  const std::vector<double> l{0.5, 2.0, 2.0, -1.0};
  EXPECT_EQ(classes_ahead(l, 1), 0u);
  EXPECT_EQ(classes_ahead(l, 2), 1u);
  EXPECT_EQ(classes_ahead(l, 0), 2u);
  EXPECT_EQ(classes_ahead(l, 3), 3u);
}

TEST(Evaluate, PerfectProposalScoresOne) {
  const std::vector<std::vector<int>> truth{{0, 2, 1}, {1, 1, 0}, {2, 0, 2}};
  std::vector<std::vector<std::vector<double>>> logits;
  for (const auto& seq : truth) {
    logits.emplace_back();
    for (int y : seq) {
      std::vector<double> l(3, -5.0);
      l[static_cast<std::size_t>(y)] = 5.0;
      logits.back().push_back(l);
    }
  }
  EvalResult r = evaluate(TableModel(logits), table_dataset(truth, 3), eval_opts({1, 2, 3}), Rng(1));
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.topk.at(1), 1.0);
  EXPECT_EQ(r.topk.at(3), 1.0);
  EXPECT_EQ(r.steps, 9u);
}

TEST(Evaluate, UniformProposalOverTenClasses) {
  std::vector<std::vector<int>> truth;
  for (int i = 0; i < 20; ++i) truth.push_back({i % 10});
  std::vector<std::vector<std::vector<double>>> logits(20, {std::vector<double>(10, 0.0)});
  EvalResult r = evaluate(TableModel(logits), table_dataset(truth, 10), eval_opts({1, 5, 10}), Rng(1));
  EXPECT_DOUBLE_EQ(r.topk.at(10), 1.0);
  EXPECT_DOUBLE_EQ(r.topk.at(1), 0.1);
  EXPECT_DOUBLE_EQ(r.topk.at(5), 0.5);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.1);
}

TEST(Evaluate, HandFixtureOfFourSequences) {
  // Per-step ranks of the truth: seq0 {0, 1}, seq1 {2, 0}, seq2 {0, 0}, seq3 {1, 2}.
  const std::vector<std::vector<int>> truth{{0, 1}, {2, 0}, {1, 2}, {0, 2}};
  const std::vector<std::vector<std::vector<double>>> logits{
      {{3, 1, 0}, {2, 1, 0}},
      {{1, 1, 0.5}, {0, -1, -2}},
      {{0, 4, 1}, {0, 0, 3}},
      {{0, 2, -1}, {0, 1, 0}},
  };
  EvalResult r = evaluate(TableModel(logits), table_dataset(truth, 3), eval_opts({1, 2, 3}), Rng(1));
  EXPECT_DOUBLE_EQ(r.accuracy, 4.0 / 8.0);
  EXPECT_DOUBLE_EQ(r.topk.at(2), 6.0 / 8.0);
  EXPECT_DOUBLE_EQ(r.topk.at(3), 1.0);
}

TEST(Evaluate, MissingGroundTruthIsAContractViolation) {
  Dataset ds = table_dataset({{0, 1}}, 2);
  TableModel model({{{0, 1}, {1, 0}}});
  Dataset no_truth = ds;
  no_truth.truth.clear();
  EXPECT_THROW(evaluate(model, no_truth, eval_opts({1}), Rng(1)), ContractViolation);
  Dataset hidden = ds;
  hidden.truth = {{kUnlabeled, kUnlabeled}};
  EXPECT_THROW(evaluate(model, hidden, eval_opts({1}), Rng(1)), ContractViolation);
}

// ---- trainer ---------------------------------------------------------------------

TEST(Trainer, ZeroLearningRatesLeaveParametersBitIdentical) {
  TrainConfig c = tiny_hmm_config();
  c.lr_theta = 0.0;
  c.lr_phi = 0.0;
  TaskData d = load_task_data(c);
  for (Objective o : {Objective::cws, Objective::ssws, Objective::reinforce_m1m2}) {
    c.objective = o;
    SeqModel m = make_sequence_model(c, d.train);
    const auto before = values(m.params());
    Trainer<SeqModel> t(m, c, d.train, d.val);
    t.run();
    EXPECT_EQ(t.state().step, 8u);
    EXPECT_TRUE(bit_identical(values(m.params()), before)) << to_string(o);
  }
}

TEST(Trainer, SameSeedGivesIdenticalRuns) {
  TrainConfig c = tiny_hmm_config();
  TaskData d = load_task_data(c);
  std::vector<std::vector<MetricRow>> rows(2);
  std::vector<std::vector<Tensor>> params;
  for (int run = 0; run < 2; ++run) {
    SeqModel m = make_sequence_model(c, d.train);
    TrainerOptions o;
    o.on_row = [&rows, run](const MetricRow& r) { rows[static_cast<std::size_t>(run)].push_back(r); };
    Trainer<SeqModel> t(m, c, d.train, d.val, o);
    t.run();
    params.push_back(values(m.params()));
  }
  expect_rows_equal(rows[0], rows[1]);
  EXPECT_TRUE(bit_identical(params[0], params[1]));
  ASSERT_EQ(rows[0].size(), 4u);
  EXPECT_TRUE(rows[0][1].eval);
  EXPECT_FALSE(rows[0][0].eval);

  c.seed = 2;
  SeqModel m = make_sequence_model(c, d.train);
  Trainer<SeqModel>(m, c, d.train, d.val).run();
  EXPECT_FALSE(bit_identical(values(m.params()), params[0]));
}

TEST(Trainer, ResumedRunReproducesMetricRows) {
  TrainConfig c = tiny_hmm_config();
  c.max_steps = 12;
  TaskData d = load_task_data(c);
  const fs::path full = temp_dir("full"), part = temp_dir("part");
  {
    SeqModel m = make_sequence_model(c, d.train);
    Trainer<SeqModel>(m, c, d.train, d.val, {.out_dir = full, .on_row = {}}).run();
  }
  struct Interrupt {};
  {
    SeqModel m = make_sequence_model(c, d.train);
    TrainerOptions o{.out_dir = part, .on_row = [](const MetricRow& r) {
                       if (r.step == 6) throw Interrupt{};
                     }};
    Trainer<SeqModel> t(m, c, d.train, d.val, o);
    EXPECT_THROW(t.run(), Interrupt);
  }
  // Rows through step 6 are on disk; the last checkpoint is from step 4.
  EXPECT_EQ(read_metrics(part / "metrics.jsonl").rows.back().step, 6u);
  {
    SeqModel m = make_sequence_model(c, d.train);
    Trainer<SeqModel> t(m, c, d.train, d.val, {.out_dir = part, .on_row = {}});
    t.resume(part / "last.ckpt");
    EXPECT_EQ(t.state().step, 4u);
    t.run();
  }
  expect_rows_equal(read_metrics(full / "metrics.jsonl").rows, read_metrics(part / "metrics.jsonl").rows);
  EXPECT_EQ(read_metrics(part / "metrics.jsonl").skipped, 0u);
}

TEST(Trainer, NumericFaultAbortsWithLastGoodCheckpoint) {
  TrainConfig c = tiny_hmm_config();
  TaskData d = load_task_data(c);
  const fs::path dir = temp_dir("fault");
  SeqModel m = make_sequence_model(c, d.train);
  TrainerOptions o{.out_dir = dir, .on_row = [&m](const MetricRow& r) {
                     if (r.step == 4) m.params().at("theta/prior_y/b").mutable_value().fill(std::nan(""));
                   }};
  Trainer<SeqModel> t(m, c, d.train, d.val, o);
  try {
    t.run();
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    EXPECT_EQ(fs::path(e.checkpoint()), dir / "last.ckpt");
    EXPECT_NE(std::string(e.what()).find("last.ckpt"), std::string::npos);
  }
  SeqModel fresh = make_sequence_model(c, d.train);
  Trainer<SeqModel> t2(fresh, c, d.train, d.val);
  t2.resume(dir / "last.ckpt");
  EXPECT_EQ(t2.state().step, 4u);
  for (const auto& v : values(fresh.params()))
    for (double x : v.data()) ASSERT_TRUE(std::isfinite(x));
}

TEST(Trainer, EarlyStoppingAfterPatienceEvaluations) {
  TrainConfig c = tiny_hmm_config();
  c.lr_theta = c.lr_phi = 0.0;
  c.max_steps = 40;
  c.eval_every = 2;
  c.patience = 3;
  TaskData d = load_task_data(c);
  SeqModel m = make_sequence_model(c, d.train);
  Trainer<SeqModel> t(m, c, d.train, d.val);
  TrainSummary s = t.run();
  EXPECT_TRUE(s.stopped_early);
  EXPECT_EQ(s.steps, 8u);  // first evaluation sets the best; three more without improvement
  EXPECT_EQ(s.best_step, 2u);
}

TEST(Trainer, BatchScheduleCoversEachEpochOnce) {
  TrainConfig c = tiny_hmm_config();
  c.batch_size = 6;
  TaskData d = load_task_data(c);
  SeqModel m = make_sequence_model(c, d.train);
  Trainer<SeqModel> t(m, c, d.train, d.val);
  ASSERT_EQ(t.batches_per_epoch(), 7u);
  for (std::size_t e : {0, 1}) {
    std::vector<int> seen(d.train.size(), 0);
    for (std::size_t b = 0; b < 7; ++b)
      for (std::size_t i : t.batch_indices(e, b)) ++seen[i];
    for (int s : seen) EXPECT_EQ(s, 1);
  }
  EXPECT_NE(t.batch_indices(0, 0), t.batch_indices(1, 0));
}

TEST(Trainer, SupervisedBaselineSeesOnlyLabeledSequences) {
  TrainConfig c = tiny_hmm_config();
  c.objective = Objective::iwae_supervised_baseline;
  TaskData d = load_task_data(c);
  SeqModel m = make_sequence_model(c, d.train);
  Trainer<SeqModel> t(m, c, d.train, d.val);
  const std::size_t labeled = d.train.labeled_sequences();
  ASSERT_GT(labeled, 0u);
  EXPECT_EQ(t.batches_per_epoch(), (labeled + c.batch_size - 1) / c.batch_size);
  for (std::size_t i : t.batch_indices(0, 0)) EXPECT_EQ(d.train.sequences[i].num_labeled(), d.train.sequences[i].length());
}

TEST(Trainer, LabeledExamplesAreMixedIntoEachBatch) {
  TrainConfig c = tiny_hmm_config();
  c.labeled_per_batch = 3;
  c.supervision_rate = 0.2;
  TaskData d = load_task_data(c);
  SeqModel m = make_sequence_model(c, d.train);
  Trainer<SeqModel> t(m, c, d.train, d.val);
  const auto idx = t.batch_indices(0, 1);
  ASSERT_EQ(idx.size(), c.batch_size + 3);
  for (std::size_t i = c.batch_size; i < idx.size(); ++i) EXPECT_GT(d.train.sequences[idx[i]].num_labeled(), 0u);
}

TEST(Trainer, ThetaStepWithNearExactGradientRaisesLogMarginal) {
  EnumerableToy toy({3, 1, 4, 3}, Rng(31), 1.5, 1.0);
  const std::vector<int> x{1, 3, 0};
  Dataset ds;
  ds.num_classes = 3;
  ds.obs_dim = 1;
  LabeledSequence s;
  s.x = Tensor(3, 1);
  for (std::size_t t = 0; t < 3; ++t) s.x(t, 0) = x[t];
  s.labels.assign(3, kUnlabeled);
  ds.sequences.push_back(s);
  ds.truth.push_back({0, 0, 0});

  TrainConfig c;
  c.objective = Objective::ssws;
  c.K = 20000;
  c.batch_size = 1;
  c.lr_theta = 1e-3;
  c.lr_phi = 1e-3;
  c.grad_clip = 0.0;
  Trainer<EnumerableToy> t(toy, c, ds, ds);
  const double before = toy.enumerate_joint(x, s.labels).log_marginal();
  t.step(make_batch(ds, std::vector<std::size_t>{0}), Rng(5));
  const double after = toy.enumerate_joint(x, s.labels).log_marginal();
  EXPECT_GT(after, before);
}

TEST(Trainer, StaticModelTrainsWithEveryObjective) {
  TrainConfig c;
  c.task = Task::mnist;
  c.K = 3;
  c.batch_size = 6;
  c.labeled_per_batch = 2;
  c.max_steps = 3;
  c.eval_every = 3;
  c.eval_particles = 2;
  c.z_dim = 2;
  c.hidden = 5;
  Dataset ds;
  ds.num_classes = 3;
  ds.obs_dim = 8;
  Rng r(3);
  for (int i = 0; i < 18; ++i) {
    LabeledSequence s;
    s.x = Tensor(1, 8);
    for (double& v : s.x.data()) v = r.uniform() < 0.5 ? 1.0 : 0.0;
    s.labels = {i < 6 ? i % 3 : kUnlabeled};
    ds.sequences.push_back(s);
    ds.truth.push_back({i % 3});
  }
  for (Objective o : {Objective::m1m2, Objective::cws, Objective::ssws, Objective::reinforce_m1m2}) {
    c.objective = o;
    StaticSemiVAE m = make_static_model(c, ds);
    const auto before = values(m.params());
    Trainer<StaticSemiVAE> t(m, c, ds, ds);
    TrainSummary s = t.run();
    EXPECT_EQ(s.steps, 3u) << to_string(o);
    ASSERT_TRUE(s.final_eval.has_value());
    EXPECT_TRUE(std::isfinite(s.final_eval->loss_p));
    EXPECT_FALSE(bit_identical(values(m.params()), before)) << to_string(o);
  }
}

TEST(Trainer, SequenceModelRejectsEnumeratedObjective) {
  TrainConfig c = tiny_hmm_config();
  TaskData d = load_task_data(c);
  SeqModel m = make_sequence_model(c, d.train);
  c.objective = Objective::m1m2;
  EXPECT_THROW(Trainer<SeqModel>(m, c, d.train, d.val), ConfigError);
}
