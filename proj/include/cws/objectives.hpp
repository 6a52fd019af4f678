#pragma once

// Training losses. Every loss here is written to be minimized; the batch
// reductions are sums over sequences, and the trainer divides by batch size.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "cws/particles.hpp"

namespace cws {

struct ObjectiveReport {
  Var loss_theta;  // minimized over theta
  Var loss_phi;    // minimized over phi; same node as loss_theta for joint objectives
  bool joint = false;
  std::map<std::string, double> diagnostics;
};

inline double log_weight_variance(const BatchParticles& bp) {
  const Tensor& lp = bp.log_p.value();
  const Tensor& lq = bp.log_q_sampled.value();
  double total = 0.0;
  for (std::size_t b = 0; b < bp.batch; ++b) {
    double m = 0.0, m2 = 0.0;
    for (std::size_t k = 0; k < bp.K; ++k) {
      const double w = lp(b * bp.K + k, 0) - lq(b * bp.K + k, 0);
      m += w;
      m2 += w * w;
    }
    m /= static_cast<double>(bp.K);
    total += m2 / static_cast<double>(bp.K) - m * m;
  }
  return total / static_cast<double>(bp.batch);
}

// One-sample ELBO estimate per row (K = 1): log p(x, y, z) - log q over the
// sampled variables, with z reparameterized.
template <SequenceModel M>
Var elbo(const M& model, const SequenceBatch& batch, const Rng& rng) {
  BatchParticles bp = sample_particles(model, batch, 1, rng, true);
  return sub(bp.log_p, bp.log_q_sampled);
}

// IWAE bound summed over sequences, with SSWS (sampled-variable) weights.
// Gradients reach theta only; the proposal density enters as a constant.
inline Var loss_p(const BatchParticles& bp) {
  Var log_w = sub(bp.log_p, detach(bp.log_q_sampled));
  Var per_seq = logsumexp(reshape(log_w, bp.batch, bp.K), Reduce::per_row);
  return add_scalar(sum(per_seq), -static_cast<double>(bp.batch) * std::log(static_cast<double>(bp.K)));
}

// Wake-phi loss: sum_k w_bar_k * (-log q_sampled^k), weights constant.
inline Var loss_q_ssws(const BatchParticles& bp) {
  return neg(sum(mul(Var::constant(bp.w_bar_column()), bp.log_q_sampled)));
}

// Monte Carlo estimate of E_q[log q(y_S | .)], summed over S and sequences.
inline Var loss_s(const BatchParticles& bp) {
  return scale(sum(bp.log_q_supervised), 1.0 / static_cast<double>(bp.K));
}

// Unified CWS loss: sum_k w_tilde_k * (-log q_full^k), weights constant.
inline Var loss_q_cws(const BatchParticles& bp) {
  return neg(sum(mul(Var::constant(bp.w_tilde_column()), bp.log_q_full)));
}

inline void fill_particle_diagnostics(ObjectiveReport& r, const BatchParticles& bp, const SequenceBatch& batch) {
  std::size_t sup = 0;
  for (std::size_t b = 0; b < batch.size; ++b) sup += batch.num_labeled(b);
  r.diagnostics["ess"] = bp.ess_mean();
  r.diagnostics["log_weight_var"] = log_weight_variance(bp);
  r.diagnostics["supervised_steps"] = static_cast<double>(sup);
  r.diagnostics["unsupervised_steps"] = static_cast<double>(batch.size * batch.length - sup);
}

inline ObjectiveReport ssws_losses(const BatchParticles& bp, const SequenceBatch& batch, double alpha) {
  require(alpha >= 0.0, "ssws_losses: alpha must be non-negative");
  const double inv_b = 1.0 / static_cast<double>(bp.batch);
  ObjectiveReport r;
  Var lp = loss_p(bp);
  Var lq = loss_q_ssws(bp);
  Var ls = loss_s(bp);
  r.loss_theta = scale(lp, -inv_b);
  r.loss_phi = scale(sub(lq, scale(ls, alpha)), inv_b);
  fill_particle_diagnostics(r, bp, batch);
  r.diagnostics["loss_p"] = lp.item() * inv_b;
  r.diagnostics["loss_q"] = lq.item() * inv_b;
  r.diagnostics["loss_s"] = ls.item() * inv_b;
  return r;
}

inline ObjectiveReport cws_losses(const BatchParticles& bp, const SequenceBatch& batch) {
  const double inv_b = 1.0 / static_cast<double>(bp.batch);
  ObjectiveReport r;
  Var lp = loss_p(bp);
  Var lq = loss_q_cws(bp);
  r.loss_theta = scale(lp, -inv_b);
  r.loss_phi = scale(lq, inv_b);
  fill_particle_diagnostics(r, bp, batch);
  r.diagnostics["loss_p"] = lp.item() * inv_b;
  r.diagnostics["loss_q"] = lq.item() * inv_b;
  return r;
}

// Score-function surrogate of the semi-supervised ELBO objective
//   sum_b E_q[log p - log q_sampled] + alpha * L_s
// with a leave-one-out mean baseline over the K particles of each sequence.
// Only the non-reparameterized variables (log_q_score) get a score term.
inline Var reinforce_surrogate(const BatchParticles& bp, double alpha) {
  require(bp.K >= 2, "reinforce: leave-one-out baseline needs K >= 2, got K=" + std::to_string(bp.K));
  const std::size_t K = bp.K;
  Var f = sub(bp.log_p, bp.log_q_sampled);
  const Tensor& fv = f.value();
  Tensor adv(bp.rows(), 1);
  for (std::size_t b = 0; b < bp.batch; ++b) {
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) total += fv(b * K + k, 0);
    for (std::size_t k = 0; k < K; ++k) {
      const double loo = (total - fv(b * K + k, 0)) / static_cast<double>(K - 1);
      adv(b * K + k, 0) = fv(b * K + k, 0) - loo;
    }
  }
  Var per_row = add(mul(Var::constant(adv), bp.log_q_score), f);
  Var objective = scale(sum(per_row), 1.0 / static_cast<double>(K));
  if (alpha != 0.0) objective = add(objective, scale(loss_s(bp), alpha));
  return objective;
}

inline ObjectiveReport reinforce_losses(const BatchParticles& bp, const SequenceBatch& batch, double alpha) {
  require(alpha >= 0.0, "reinforce_losses: alpha must be non-negative");
  const double inv_b = 1.0 / static_cast<double>(bp.batch);
  ObjectiveReport r;
  r.joint = true;
  r.loss_theta = r.loss_phi = scale(reinforce_surrogate(bp, alpha), -inv_b);
  fill_particle_diagnostics(r, bp, batch);
  r.diagnostics["loss_p"] = loss_p(bp).item() * inv_b;
  r.diagnostics["loss_q"] = r.loss_phi.item();
  return r;
}

inline GradientMap only_group(const GradientMap& g, Group group) {
  GradientMap out;
  const std::string prefix = group_prefix(group);
  for (const auto& [k, v] : g)
    if (k.rfind(prefix, 0) == 0) out.emplace(k, v);
  return out;
}

// phi-gradient of the surrogate (ascent direction of the objective).
template <SequenceModel M>
GradientMap reinforce_phi_grad(M& model, const SequenceBatch& batch, std::size_t K, const Rng& rng, double alpha = 0.0) {
  require(K >= 2, "reinforce_phi_grad: leave-one-out baseline needs K >= 2, got K=" + std::to_string(K));
  model.params().zero_grad();
  BatchParticles bp = sample_particles(model, batch, K, rng, true);
  GradientMap g = only_group(backward(reinforce_surrogate(bp, alpha)), Group::phi);
  model.params().zero_grad();
  return g;
}

// M1+M2 for single-step models. Labeled rows contribute ELBO(x, y) +
// alpha * log q(y | x); unlabeled rows contribute
// sum_c q(c | x) (ELBO(x, c) - log q(c | x)) with the class enumerated.
template <StaticModel M>
ObjectiveReport m1m2_losses(const M& model, const SequenceBatch& batch, double alpha, const Rng& rng) {
  require(batch.length == 1, "m1m2_losses: static model needs length-1 sequences");
  require(alpha >= 0.0, "m1m2_losses: alpha must be non-negative");
  const std::size_t C = model.num_classes();
  const Tensor& x = batch.x[0];
  const std::size_t D = x.cols();
  std::vector<std::size_t> lab, unl;
  for (std::size_t b = 0; b < batch.size; ++b) (batch.labels[0][b] == kUnlabeled ? unl : lab).push_back(b);

  auto take = [&](const std::vector<std::size_t>& idx, std::size_t repeat) {
    Tensor out(idx.size() * repeat, D);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < repeat; ++c)
        std::copy_n(x.row_span(idx[i]).begin(), D, out.row_span(i * repeat + c).begin());
    return out;
  };

  std::vector<Var> terms;
  double sup_total = 0.0, unsup_total = 0.0, log_q_total = 0.0;
  if (!lab.empty()) {
    Tensor xl = take(lab, 1);
    std::vector<int> yl;
    for (std::size_t b : lab) yl.push_back(batch.labels[0][b]);
    AncestralChooser ch(rng.fork(0), lab.size(), true);
    Var e = model.elbo_given_class(xl, yl, ch);
    Var lq = Categorical(model.class_logits(xl)).log_prob(yl);
    Var s = add(sum(e), scale(sum(lq), alpha));
    sup_total = s.item();
    log_q_total = sum(lq).item();
    terms.push_back(s);
  }
  if (!unl.empty()) {
    const std::size_t U = unl.size();
    Tensor xu = take(unl, C);
    std::vector<int> yu(U * C);
    for (std::size_t n = 0; n < yu.size(); ++n) yu[n] = static_cast<int>(n % C);
    AncestralChooser ch(rng.fork(1), U * C, true);
    Var e = reshape(model.elbo_given_class(xu, yu, ch), U, C);
    Var lq = log_softmax(model.class_logits(take(unl, 1)));
    Var u = sum(mul(exp(lq), sub(e, lq)));
    unsup_total = u.item();
    terms.push_back(u);
  }
  ObjectiveReport r;
  r.joint = true;
  r.loss_theta = r.loss_phi = scale(add_n(terms), -1.0 / static_cast<double>(batch.size));
  r.diagnostics["labeled"] = static_cast<double>(lab.size());
  r.diagnostics["unlabeled"] = static_cast<double>(unl.size());
  r.diagnostics["supervised_term"] = sup_total;
  r.diagnostics["unsupervised_term"] = unsup_total;
  r.diagnostics["log_q_labeled"] = log_q_total;
  r.diagnostics["loss_p"] = -r.loss_theta.item();
  r.diagnostics["loss_q"] = r.loss_phi.item();
  return r;
}

}  // namespace cws
