#pragma once

// K joint particles per sequence drawn ancestrally from q, with supervised
// steps clamped to their labels. Three log densities per particle:
//   log_p_joint    log p(x, y, z)
//   log_q_sampled  log q over the sampled variables only (y_U and z)
//   log_q_full     log_q_sampled + sum over t in S of log q(y_t | .)
// SSWS weights normalize log_p_joint - log_q_sampled; CWS weights normalize
// log_p_joint - log_q_full.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cws/model.hpp"

namespace cws {

struct Particle {
  std::vector<int> y;
  std::vector<std::vector<double>> z;
  double log_p_joint = 0.0;
  double log_q_sampled = 0.0;
  double log_q_full = 0.0;
};

struct NormalizedWeights {
  std::vector<double> w;
  double ess = 0.0;
  double log_sum = 0.0;  // logsumexp of the unnormalized log weights
};

struct ParticleSet {
  std::vector<Particle> particles;
  std::vector<double> w_bar;
  std::vector<double> w_tilde;
  double ess = 0.0;
  std::size_t supervised_steps = 0;

  std::size_t size() const { return particles.size(); }
};

inline NormalizedWeights normalize_weights(std::span<const double> log_w) {
  require(!log_w.empty(), "normalize_weights: need at least one weight");
  double m = -std::numeric_limits<double>::infinity();
  for (double v : log_w) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
      throw NumericFault("normalize_weights: non-finite log weight " + std::to_string(v));
    m = std::max(m, v);
  }
  if (m == -std::numeric_limits<double>::infinity())
    throw NumericFault("normalize_weights: degenerate weights (all log weights are -inf)");
  double s = 0.0;
  for (double v : log_w) s += std::exp(v - m);
  NormalizedWeights out;
  out.log_sum = m + std::log(s);
  out.w.resize(log_w.size());
  double sq = 0.0;
  for (std::size_t k = 0; k < log_w.size(); ++k) {
    out.w[k] = std::exp(log_w[k] - out.log_sum);
    sq += out.w[k] * out.w[k];
  }
  out.ess = 1.0 / sq;
  return out;
}

inline std::vector<double> ssws_weights(const ParticleSet& ps) {
  std::vector<double> lw;
  for (const auto& p : ps.particles) lw.push_back(p.log_p_joint - p.log_q_sampled);
  return normalize_weights(lw).w;
}

inline std::vector<double> cws_weights(const ParticleSet& ps) {
  std::vector<double> lw;
  for (const auto& p : ps.particles) lw.push_back(p.log_p_joint - p.log_q_full);
  return normalize_weights(lw).w;
}

// Particles for a whole batch, keeping the graph nodes the losses need.
// Row n = b * K + k.
struct BatchParticles {
  std::size_t batch = 0;
  std::size_t K = 1;
  InferenceTrace trace;
  GenerativeTrace gen;
  Var log_p;             // N x 1
  Var log_q_sampled;     // N x 1
  Var log_q_supervised;  // N x 1
  Var log_q_full;        // N x 1
  Var log_q_score;       // N x 1, log q of the non-reparameterized sampled variables
  std::vector<ParticleSet> sets;

  std::size_t rows() const { return batch * K; }

  // Per-row weight columns for the graph losses.
  Tensor w_bar_column() const { return weight_column(&ParticleSet::w_bar); }
  Tensor w_tilde_column() const { return weight_column(&ParticleSet::w_tilde); }

  double ess_mean() const {
    double s = 0.0;
    for (const auto& ps : sets) s += ps.ess;
    return sets.empty() ? 0.0 : s / static_cast<double>(sets.size());
  }

 private:
  Tensor weight_column(std::vector<double> ParticleSet::*field) const {
    Tensor w(rows(), 1);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t k = 0; k < K; ++k) w(b * K + k, 0) = (sets[b].*field)[k];
    return w;
  }
};

namespace detail {

inline Tensor mask_column(const std::vector<bool>& m, bool value) {
  Tensor t(m.size(), 1);
  for (std::size_t n = 0; n < m.size(); ++n) t(n, 0) = m[n] == value ? 1.0 : 0.0;
  return t;
}

inline void check_finite_steps(const std::vector<Var>& steps, std::size_t K, const char* what) {
  for (std::size_t t = 0; t < steps.size(); ++t) {
    if (!steps[t].defined()) continue;
    const Tensor& v = steps[t].value();
    for (std::size_t n = 0; n < v.rows(); ++n) {
      if (!std::isfinite(v(n, 0))) {
        throw NumericFault(std::string("sample_particles: non-finite ") + what + " at sequence " + std::to_string(n / K) +
                           ", particle k=" + std::to_string(n % K) + ", step t=" + std::to_string(t));
      }
    }
  }
}

}  // namespace detail

// Ancestral sampling of K particles per sequence. With reparameterize set,
// continuous z carries a pathwise gradient; otherwise every latent is a
// constant sample and only the log densities depend on the parameters.
template <SequenceModel M>
BatchParticles sample_particles(const M& model, const SequenceBatch& batch, std::size_t K, const Rng& rng,
                                bool reparameterize = false) {
  require(K >= 1, "sample_particles: K must be >= 1");
  require(batch.size >= 1 && batch.length >= 1, "sample_particles: empty batch");
  BatchParticles bp;
  bp.batch = batch.size;
  bp.K = K;
  AncestralChooser chooser(rng, batch.size * K, reparameterize);
  bp.trace = model.infer(batch, K, chooser);
  bp.gen = model.log_joint(batch, K, bp.trace);
  const InferenceTrace& tr = bp.trace;
  detail::check_finite_steps(tr.log_q_y, K, "log q(y)");
  detail::check_finite_steps(tr.log_q_z, K, "log q(z)");
  detail::check_finite_steps(bp.gen.log_p_steps, K, "log p");

  const bool pathwise_z = reparameterize && tr.z_index.empty();
  std::vector<Var> sampled, supervised, score;
  bool any_supervised = false;
  for (std::size_t t = 0; t < tr.length; ++t) {
    bool step_supervised = false;
    for (bool s : tr.supervised[t]) step_supervised = step_supervised || s;
    any_supervised = any_supervised || step_supervised;
    Var qy_u = step_supervised ? mul(tr.log_q_y[t], Var::constant(detail::mask_column(tr.supervised[t], false)))
                               : tr.log_q_y[t];
    sampled.push_back(qy_u);
    score.push_back(qy_u);
    if (step_supervised) supervised.push_back(mul(tr.log_q_y[t], Var::constant(detail::mask_column(tr.supervised[t], true))));
    if (tr.log_q_z[t].defined()) {
      sampled.push_back(tr.log_q_z[t]);
      if (!pathwise_z) score.push_back(tr.log_q_z[t]);
    }
  }
  bp.log_p = bp.gen.log_p;
  bp.log_q_sampled = add_n(sampled);
  bp.log_q_score = add_n(score);
  if (any_supervised) {
    bp.log_q_supervised = add_n(supervised);
    bp.log_q_full = add(bp.log_q_sampled, bp.log_q_supervised);
  } else {
    bp.log_q_supervised = Var::constant(Tensor(bp.rows(), 1));
    bp.log_q_full = bp.log_q_sampled;
  }

  const Tensor& lp = bp.log_p.value();
  const Tensor& lqs = bp.log_q_sampled.value();
  const Tensor& lqf = bp.log_q_full.value();
  bp.sets.resize(batch.size);
  for (std::size_t b = 0; b < batch.size; ++b) {
    ParticleSet& ps = bp.sets[b];
    ps.supervised_steps = batch.num_labeled(b);
    std::vector<double> lw_bar(K), lw_tilde(K);
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t n = b * K + k;
      Particle p;
      p.y.resize(tr.length);
      for (std::size_t t = 0; t < tr.length; ++t) {
        p.y[t] = tr.y[t][n];
        if (tr.z[t].defined()) {
          auto row = tr.z[t].value().row_span(n);
          p.z.emplace_back(row.begin(), row.end());
        }
      }
      p.log_p_joint = lp(n, 0);
      p.log_q_sampled = lqs(n, 0);
      p.log_q_full = lqf(n, 0);
      lw_bar[k] = p.log_p_joint - p.log_q_sampled;
      lw_tilde[k] = p.log_p_joint - p.log_q_full;
      ps.particles.push_back(std::move(p));
    }
    NormalizedWeights nb = normalize_weights(lw_bar);
    ps.w_bar = std::move(nb.w);
    ps.ess = nb.ess;
    ps.w_tilde = any_supervised ? normalize_weights(lw_tilde).w : ps.w_bar;
  }
  return bp;
}

// Single-sequence convenience form.
template <SequenceModel M>
ParticleSet sample_particles(const M& model, const LabeledSequence& seq, std::size_t obs_dim, std::size_t K, const Rng& rng) {
  return sample_particles(model, make_batch(seq, obs_dim), K, rng).sets[0];
}

}  // namespace cws
