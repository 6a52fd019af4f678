#pragma once

// Training loop: one optimization step per batch, periodic greedy-decoding
// evaluation, early stopping on validation accuracy, checkpoints and resume.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cws/checkpoint.hpp"
#include "cws/config.hpp"
#include "cws/metrics.hpp"
#include "cws/objectives.hpp"
#include "cws/optim.hpp"

namespace cws {

// Thrown when a run aborts on a numeric fault; names the last good checkpoint.
class TrainingAborted : public NumericFault {
 public:
  TrainingAborted(const std::string& what, std::string checkpoint)
      : NumericFault(what + (checkpoint.empty() ? "" : " (last good checkpoint: " + checkpoint + ")")),
        checkpoint_(std::move(checkpoint)) {}
  const std::string& checkpoint() const { return checkpoint_; }

 private:
  std::string checkpoint_;
};

struct EvalResult {
  double accuracy = 0.0;
  std::map<std::size_t, double> topk;
  double loss_p = 0.0;  // IWAE bound per sequence, labels hidden
  std::size_t steps = 0;
};

struct EvalOptions {
  std::vector<std::size_t> topk{1, 5, 10};
  std::size_t particles = 10;  // 0 skips the IWAE pass
  std::size_t chunk = 250;
};

// Rank of the true class among the logits; ties go to the lower index, so
// truth is in the top k when fewer than k classes rank ahead of it.
inline std::size_t classes_ahead(std::span<const double> logits, int truth) {
  const auto y = static_cast<std::size_t>(truth);
  std::size_t ahead = 0;
  for (std::size_t c = 0; c < logits.size(); ++c)
    if (logits[c] > logits[y] || (logits[c] == logits[y] && c < y)) ++ahead;
  return ahead;
}

// Greedy decoding under q with labels hidden, scored against ground truth.
template <SequenceModel M>
EvalResult evaluate(const M& model, const Dataset& val, const EvalOptions& opts, const Rng& rng) {
  require(val.has_truth(), "evaluate: validation set has no ground-truth labels");
  require(val.size() > 0 && !val.truth[0].empty(), "evaluate: validation set is empty");
  require(!opts.topk.empty(), "evaluate: need at least one k");
  EvalResult r;
  std::map<std::size_t, std::size_t> hits;
  std::size_t top1 = 0;
  double loss_p_total = 0.0;
  std::vector<std::size_t> order(val.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t start = 0, chunk = 0; start < order.size(); start += opts.chunk, ++chunk) {
    const std::size_t end = std::min(order.size(), start + opts.chunk);
    std::span<const std::size_t> idx(order.data() + start, end - start);
    SequenceBatch b = make_batch(val, idx, true);
    GreedyChooser greedy;
    InferenceTrace tr = model.infer(b, 1, greedy);
    for (std::size_t t = 0; t < b.length; ++t) {
      const Tensor& logits = tr.q_y_logits[t].value();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const int truth = val.truth[idx[i]][t];
        if (truth == kUnlabeled) continue;
        const std::size_t ahead = classes_ahead(logits.row_span(i), truth);
        for (std::size_t k : opts.topk)
          if (ahead < k) ++hits[k];
        if (ahead == 0) ++top1;
        ++r.steps;
      }
    }
    if (opts.particles > 0) {
      BatchParticles bp = sample_particles(model, b, opts.particles, rng.fork(chunk));
      loss_p_total += loss_p(bp).item();
    }
  }
  require(r.steps > 0, "evaluate: validation set has no labeled steps");
  for (std::size_t k : opts.topk) r.topk[k] = static_cast<double>(hits[k]) / static_cast<double>(r.steps);
  r.accuracy = static_cast<double>(top1) / static_cast<double>(r.steps);
  r.loss_p = loss_p_total / static_cast<double>(val.size());
  return r;
}

// Losses for one batch under the configured objective.
template <SequenceModel M>
ObjectiveReport objective_losses(const M& model, const TrainConfig& cfg, const SequenceBatch& batch, const Rng& rng) {
  switch (cfg.objective) {
    case Objective::ssws:
    case Objective::iwae_supervised_baseline:
      return ssws_losses(sample_particles(model, batch, cfg.K, rng), batch, cfg.alpha);
    case Objective::cws:
      return cws_losses(sample_particles(model, batch, cfg.K, rng), batch);
    case Objective::reinforce_m1m2:
      return reinforce_losses(sample_particles(model, batch, cfg.K, rng, true), batch, cfg.alpha);
    case Objective::m1m2:
      if constexpr (StaticModel<M>) {
        return m1m2_losses(model, batch, cfg.alpha, rng);
      } else {
        throw ContractViolation("m1m2 needs a model whose class variable can be enumerated");
      }
  }
  throw ContractViolation("unknown objective");
}

struct StepResult {
  double loss_p = 0.0;
  double loss_phi = 0.0;
  double ess_mean = 0.0;
  double grad_norm_theta = 0.0;
  double grad_norm_phi = 0.0;
};

struct TrainerOptions {
  std::filesystem::path out_dir;  // empty: no files are written
  std::function<void(const MetricRow&)> on_row;
};

struct TrainSummary {
  std::size_t steps = 0;
  std::size_t epochs = 0;
  bool stopped_early = false;
  std::optional<EvalResult> final_eval;
  double best_accuracy = -1.0;
  std::size_t best_step = 0;
};

template <SequenceModel M>
class Trainer {
 public:
  Trainer(M& model, TrainConfig cfg, const Dataset& train, const Dataset& val, TrainerOptions opts = {})
      : model_(&model),
        cfg_(std::move(cfg)),
        train_(&train),
        val_(&val),
        opts_(std::move(opts)),
        adam_theta_(model.params(), Group::theta, AdamConfig{.lr = cfg_.lr_theta}),
        adam_phi_(model.params(), Group::phi, AdamConfig{.lr = cfg_.lr_phi}) {
    check_config_structure(cfg_);
    require(train.size() > 0, "Trainer: empty training set");
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (cfg_.objective == Objective::iwae_supervised_baseline) {
        if (train.sequences[i].num_labeled() == train.sequences[i].length()) pool_.push_back(i);
      } else {
        pool_.push_back(i);
      }
      if (train.sequences[i].num_labeled() > 0) labeled_.push_back(i);
    }
    require(!pool_.empty(), "Trainer: no usable training sequences for objective " + std::string(to_string(cfg_.objective)));
    require(cfg_.labeled_per_batch == 0 || !labeled_.empty(), "Trainer: labeled_per_batch needs labeled sequences");
    if (!opts_.out_dir.empty()) {
      std::filesystem::create_directories(opts_.out_dir);
      metrics_ = MetricsWriter(opts_.out_dir / "metrics.jsonl");
    }
  }

  const TrainConfig& config() const { return cfg_; }
  const TrainState& state() const { return state_; }
  std::size_t batches_per_epoch() const { return (pool_.size() + cfg_.batch_size - 1) / cfg_.batch_size; }
  std::size_t total_steps() const {
    const std::size_t by_epoch = cfg_.epochs * batches_per_epoch();
    return cfg_.max_steps > 0 ? std::min(by_epoch, cfg_.max_steps) : by_epoch;
  }
  std::filesystem::path last_checkpoint() const { return opts_.out_dir.empty() ? "" : opts_.out_dir / "last.ckpt"; }
  std::filesystem::path best_checkpoint() const { return opts_.out_dir.empty() ? "" : opts_.out_dir / "best.ckpt"; }

  // Sequence indices of batch `b` in epoch `e`.
  std::vector<std::size_t> batch_indices(std::size_t e, std::size_t b) const {
    std::vector<std::size_t> perm = pool_;
    Rng r = Rng(cfg_.seed).fork({0x5EED, e});
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[r.next_u64() % i]);
    const std::size_t start = b * cfg_.batch_size;
    std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                 perm.begin() + static_cast<std::ptrdiff_t>(std::min(perm.size(), start + cfg_.batch_size)));
    if (cfg_.labeled_per_batch > 0) {
      std::vector<std::size_t> lab = labeled_;
      Rng lr = Rng(cfg_.seed).fork({0x1AB, e, b});
      const std::size_t n = std::min(cfg_.labeled_per_batch, lab.size());
      for (std::size_t i = 0; i < n; ++i) {
        std::swap(lab[i], lab[i + lr.next_u64() % (lab.size() - i)]);
        idx.push_back(lab[i]);
      }
    }
    return idx;
  }

  // One optimization step. For the split objectives the theta and phi losses
  // are backpropagated separately and each must touch only its own group.
  StepResult step(const SequenceBatch& batch, const Rng& rng) {
    ParamStore& ps = model_->params();
    ps.zero_grad();
    ObjectiveReport rep = objective_losses(*model_, cfg_, batch, rng);
    check_finite(rep.loss_theta.item(), "theta loss");
    check_finite(rep.loss_phi.item(), "phi loss");
    StepResult out;
    if (rep.joint) {
      backward(rep.loss_theta);
      out.grad_norm_theta = ps.clip_grad_norm(Group::theta, cfg_.grad_clip);
      out.grad_norm_phi = ps.clip_grad_norm(Group::phi, cfg_.grad_clip);
    } else {
      audit(backward(rep.loss_theta), Group::theta);
      out.grad_norm_theta = ps.clip_grad_norm(Group::theta, cfg_.grad_clip);
      audit(backward(rep.loss_phi), Group::phi);
      out.grad_norm_phi = ps.clip_grad_norm(Group::phi, cfg_.grad_clip);
    }
    check_finite(out.grad_norm_theta, "theta gradient norm");
    check_finite(out.grad_norm_phi, "phi gradient norm");
    adam_theta_.step();
    adam_phi_.step();
    ps.zero_grad();
    out.loss_p = rep.diagnostics.at("loss_p");
    out.loss_phi = rep.loss_phi.item();
    out.ess_mean = rep.diagnostics.contains("ess") ? rep.diagnostics.at("ess") : 0.0;
    return out;
  }

  EvalResult evaluate_now() const {
    EvalOptions eo;
    eo.topk = cfg_.topk;
    eo.particles = cfg_.eval_particles;
    return evaluate(*model_, *val_, eo, Rng(cfg_.seed).fork({0xE7A1, state_.step}));
  }

  void save(const std::filesystem::path& path) const {
    save_checkpoint(path, config_hash(cfg_), state_, model_->params(), adam_theta_, adam_phi_);
  }

  void resume(const std::filesystem::path& path, CheckpointOptions opts = {}) {
    state_ = load_checkpoint(path, config_hash(cfg_), model_->params(), adam_theta_, adam_phi_, opts);
  }

  TrainSummary run() {
    const auto t0 = std::chrono::steady_clock::now();
    const double wall0 = state_.wall_time;
    auto wall = [&] { return wall0 + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
    const std::size_t total = total_steps();
    const std::size_t per_epoch = batches_per_epoch();
    TrainSummary summary;
    if (!opts_.out_dir.empty() && !std::filesystem::exists(last_checkpoint())) save(last_checkpoint());

    std::optional<EvalResult> last_eval;
    while (!state_.stopped && state_.step < total) {
      const std::size_t e = state_.epoch, b = state_.batch_in_epoch;
      const std::vector<std::size_t> idx = batch_indices(e, b);
      SequenceBatch batch = make_batch(*train_, idx);
      StepResult sr;
      try {
        sr = step(batch, Rng(cfg_.seed).fork({e, b}));
      } catch (const NumericFault& f) {
        throw TrainingAborted(std::string("numeric fault at step ") + std::to_string(state_.step + 1) + ": " + f.what(),
                              last_checkpoint().string());
      }
      ++state_.step;
      if (++state_.batch_in_epoch == per_epoch) {
        state_.batch_in_epoch = 0;
        ++state_.epoch;
      }
      state_.wall_time = wall();

      const bool do_eval = state_.step % cfg_.eval_every == 0 || state_.step == total;
      const bool do_log = do_eval || state_.step % cfg_.log_every == 0;
      MetricRow row;
      row.step = state_.step;
      row.epoch = state_.epoch;
      row.wall_time = state_.wall_time;
      row.loss_p = sr.loss_p;
      row.loss_phi = sr.loss_phi;
      row.ess_mean = sr.ess_mean;
      row.grad_norm_theta = sr.grad_norm_theta;
      row.grad_norm_phi = sr.grad_norm_phi;
      if (do_eval) {
        EvalResult ev = evaluate_now();
        last_eval = ev;
        row.eval = true;
        row.val_accuracy = ev.accuracy;
        row.val_loss_p = ev.loss_p;
        row.val_topk = ev.topk;
        if (ev.accuracy > state_.best_accuracy) {
          state_.best_accuracy = ev.accuracy;
          state_.best_step = state_.step;
          state_.evals_since_best = 0;
          if (!opts_.out_dir.empty()) save(best_checkpoint());
        } else if (cfg_.patience > 0 && ++state_.evals_since_best >= cfg_.patience) {
          state_.stopped = true;
          summary.stopped_early = true;
        }
        if (!opts_.out_dir.empty()) save(last_checkpoint());
      }
      if (do_log) {
        metrics_.write(row);
        if (opts_.on_row) opts_.on_row(row);
      }
    }
    if (!last_eval) last_eval = evaluate_now();
    summary.steps = state_.step;
    summary.epochs = state_.epoch;
    summary.final_eval = last_eval;
    summary.best_accuracy = state_.best_accuracy;
    summary.best_step = state_.best_step;
    summary.stopped_early = summary.stopped_early || state_.stopped;
    return summary;
  }

 private:
  static void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NumericFault(std::string("non-finite ") + what + " (" + std::to_string(v) + ")");
  }

  static void audit(const GradientMap& g, Group expected) {
    const std::string prefix = group_prefix(expected);
    for (const auto& [k, v] : g) {
      if (k.rfind(prefix, 0) != 0) {
        throw ContractViolation("gradient leak: " + k + " received a gradient from the " +
                                std::string(expected == Group::theta ? "theta" : "phi") + " loss");
      }
    }
  }

  M* model_;
  TrainConfig cfg_;
  const Dataset* train_;
  const Dataset* val_;
  TrainerOptions opts_;
  Adam adam_theta_;
  Adam adam_phi_;
  TrainState state_;
  MetricsWriter metrics_;
  std::vector<std::size_t> pool_;
  std::vector<std::size_t> labeled_;
};

}  // namespace cws
