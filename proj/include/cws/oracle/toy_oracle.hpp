#pragma once

// Brute-force references for EnumerableToy, computed in plain doubles from
// the model's probability tables. Nothing here goes through the autodiff
// engine or the model's own evaluation code.
//
// Table layout of the toy:
//   theta/init   1 x C            logits of y_1
//   theta/trans  C x C            logits of y_t | y_{t-1}
//   theta/zprior C x Z            logits of z_t | y_t          (Z > 1 only)
//   theta/emit   (C*Z) x V        logits of x_t | y_t, z_t, row y*Z + z
//   phi/qy_bias  (T*(C+1)) x C    row t*(C+1) + prev, prev = C at t = 0
//   phi/qy_obs   V x C
//   phi/qz_bias  (T*C) x Z        row t*C + y                   (Z > 1 only)
//   phi/qz_obs   V x Z

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "cws/models/toy.hpp"

namespace oracle {

using Table = std::vector<std::vector<double>>;
using Grad = std::map<std::string, std::vector<double>>;

inline constexpr int kFree = -1;

inline double lse(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline std::vector<double> log_normalize(std::vector<double> v) {
  const double z = lse(v);
  for (double& x : v) x -= z;
  return v;
}

struct ToyTables {
  std::size_t C = 0, Z = 1, V = 0, T = 0;
  Table init, trans, zprior, emit;          // logits
  Table qy_bias, qy_obs, qz_bias, qz_obs;   // logits
};

inline Table to_table(const cws::Tensor& t) {
  Table out(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out[r][c] = t(r, c);
  return out;
}

inline ToyTables tables(const cws::EnumerableToy& toy) {
  const auto& ps = toy.params();
  ToyTables tb;
  tb.C = toy.dims().classes;
  tb.Z = toy.dims().z_states;
  tb.V = toy.dims().alphabet;
  tb.T = toy.dims().max_length;
  tb.init = to_table(ps.at("theta/init").value());
  tb.trans = to_table(ps.at("theta/trans").value());
  tb.emit = to_table(ps.at("theta/emit").value());
  tb.qy_bias = to_table(ps.at("phi/qy_bias").value());
  tb.qy_obs = to_table(ps.at("phi/qy_obs").value());
  if (tb.Z > 1) {
    tb.zprior = to_table(ps.at("theta/zprior").value());
    tb.qz_bias = to_table(ps.at("phi/qz_bias").value());
    tb.qz_obs = to_table(ps.at("phi/qz_obs").value());
  }
  return tb;
}

struct Config {
  std::vector<int> y, z;
};

// All (y, z) with y fixed where labels are given; recursive, y before z.
inline std::vector<Config> configs(const ToyTables& tb, const std::vector<int>& labels) {
  const std::size_t T = labels.size();
  std::vector<Config> out;
  Config cur{std::vector<int>(T), std::vector<int>(T, 0)};
  std::function<void(std::size_t)> rec = [&](std::size_t pos) {
    if (pos == 2 * T) {
      out.push_back(cur);
      return;
    }
    if (pos < T) {
      if (labels[pos] != kFree) {
        cur.y[pos] = labels[pos];
        rec(pos + 1);
        return;
      }
      for (std::size_t c = 0; c < tb.C; ++c) {
        cur.y[pos] = static_cast<int>(c);
        rec(pos + 1);
      }
      return;
    }
    for (std::size_t k = 0; k < tb.Z; ++k) {
      cur.z[pos - T] = static_cast<int>(k);
      rec(pos + 1);
    }
  };
  rec(0);
  return out;
}

inline std::vector<double> q_y_logits(const ToyTables& tb, std::size_t t, int prev, int x) {
  const std::size_t row = t * (tb.C + 1) + (prev < 0 ? tb.C : static_cast<std::size_t>(prev));
  std::vector<double> l(tb.C);
  for (std::size_t c = 0; c < tb.C; ++c) l[c] = tb.qy_bias[row][c] + tb.qy_obs[static_cast<std::size_t>(x)][c];
  return l;
}

inline std::vector<double> q_z_logits(const ToyTables& tb, std::size_t t, int y, int x) {
  const std::size_t row = t * tb.C + static_cast<std::size_t>(y);
  std::vector<double> l(tb.Z);
  for (std::size_t k = 0; k < tb.Z; ++k) l[k] = tb.qz_bias[row][k] + tb.qz_obs[static_cast<std::size_t>(x)][k];
  return l;
}

inline double log_joint(const ToyTables& tb, const std::vector<int>& x, const Config& c) {
  double lp = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const auto y = static_cast<std::size_t>(c.y[t]);
    lp += t == 0 ? log_normalize(tb.init[0])[y] : log_normalize(tb.trans[static_cast<std::size_t>(c.y[t - 1])])[y];
    std::size_t er = y;
    if (tb.Z > 1) {
      lp += log_normalize(tb.zprior[y])[static_cast<std::size_t>(c.z[t])];
      er = y * tb.Z + static_cast<std::size_t>(c.z[t]);
    }
    lp += log_normalize(tb.emit[er])[static_cast<std::size_t>(x[t])];
  }
  return lp;
}

// log q of the configuration; `full` adds the supervised y terms.
inline double log_q(const ToyTables& tb, const std::vector<int>& x, const std::vector<int>& labels, const Config& c,
                    bool full) {
  double lq = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (full || labels[t] == kFree)
      lq += log_normalize(q_y_logits(tb, t, t == 0 ? -1 : c.y[t - 1], x[t]))[static_cast<std::size_t>(c.y[t])];
    if (tb.Z > 1) lq += log_normalize(q_z_logits(tb, t, c.y[t], x[t]))[static_cast<std::size_t>(c.z[t])];
  }
  return lq;
}

struct ExactPosterior {
  std::vector<Config> table;
  std::vector<double> prob;
  std::vector<double> log_joint;
  double log_marginal = 0.0;
};

inline ExactPosterior exact_posterior(const ToyTables& tb, const std::vector<int>& x, const std::vector<int>& labels) {
  ExactPosterior post;
  post.table = configs(tb, labels);
  for (const auto& c : post.table) post.log_joint.push_back(log_joint(tb, x, c));
  post.log_marginal = lse(post.log_joint);
  for (double l : post.log_joint) post.prob.push_back(std::exp(l - post.log_marginal));
  return post;
}

inline double exact_log_marginal(const ToyTables& tb, const std::vector<int>& x, const std::vector<int>& labels) {
  return exact_posterior(tb, x, labels).log_marginal;
}

// KL(p(. | x, y_S) || q) over the sampled variables; +inf if q misses mass.
inline double exact_kl_posterior_q(const ToyTables& tb, const std::vector<int>& x, const std::vector<int>& labels) {
  ExactPosterior post = exact_posterior(tb, x, labels);
  double kl = 0.0;
  for (std::size_t i = 0; i < post.table.size(); ++i) {
    if (post.prob[i] == 0.0) continue;
    const double lq = log_q(tb, x, labels, post.table[i], false);
    if (lq == -std::numeric_limits<double>::infinity()) return std::numeric_limits<double>::infinity();
    kl += post.prob[i] * (post.log_joint[i] - post.log_marginal - lq);
  }
  return kl;
}

// Exact ELBO of log p(x, y_S) under q over the sampled variables.
inline double exact_elbo(const ToyTables& tb, const std::vector<int>& x, const std::vector<int>& labels) {
  double e = 0.0;
  for (const auto& c : configs(tb, labels)) {
    const double lq = log_q(tb, x, labels, c, false);
    e += std::exp(lq) * (log_joint(tb, x, c) - lq);
  }
  return e;
}

inline Grad zero_phi_grad(const ToyTables& tb) {
  Grad g;
  g["phi/qy_bias"].assign(tb.qy_bias.size() * tb.C, 0.0);
  g["phi/qy_obs"].assign(tb.V * tb.C, 0.0);
  if (tb.Z > 1) {
    g["phi/qz_bias"].assign(tb.qz_bias.size() * tb.Z, 0.0);
    g["phi/qz_obs"].assign(tb.V * tb.Z, 0.0);
  }
  return g;
}

// Adds scale * d log q(config) / d phi. For a softmax row with logits l and
// chosen class k the derivative is onehot(k) - softmax(l), and each logit is
// a bias entry plus an observation entry.
inline void add_grad_log_q(const ToyTables& tb, const std::vector<int>& x, const std::vector<int>& labels,
                           const Config& c, double scale, Grad& g, bool full) {
  for (std::size_t t = 0; t < x.size(); ++t) {
    const auto xt = static_cast<std::size_t>(x[t]);
    if (full || labels[t] == kFree) {
      const int prev = t == 0 ? -1 : c.y[t - 1];
      const std::size_t row = t * (tb.C + 1) + (prev < 0 ? tb.C : static_cast<std::size_t>(prev));
      std::vector<double> lp = log_normalize(q_y_logits(tb, t, prev, x[t]));
      for (std::size_t k = 0; k < tb.C; ++k) {
        const double d = scale * ((static_cast<int>(k) == c.y[t] ? 1.0 : 0.0) - std::exp(lp[k]));
        g["phi/qy_bias"][row * tb.C + k] += d;
        g["phi/qy_obs"][xt * tb.C + k] += d;
      }
    }
    if (tb.Z > 1) {
      const std::size_t row = t * tb.C + static_cast<std::size_t>(c.y[t]);
      std::vector<double> lp = log_normalize(q_z_logits(tb, t, c.y[t], x[t]));
      for (std::size_t k = 0; k < tb.Z; ++k) {
        const double d = scale * ((static_cast<int>(k) == c.z[t] ? 1.0 : 0.0) - std::exp(lp[k]));
        g["phi/qz_bias"][row * tb.Z + k] += d;
        g["phi/qz_obs"][xt * tb.Z + k] += d;
      }
    }
  }
}

// E_{p(. | x, y_S)}[-grad_phi log q(sampled variables)] = grad_phi KL(p || q).
inline Grad exact_phi_gradient(const ToyTables& tb, const std::vector<int>& x, const std::vector<int>& labels) {
  ExactPosterior post = exact_posterior(tb, x, labels);
  Grad g = zero_phi_grad(tb);
  for (std::size_t i = 0; i < post.table.size(); ++i) add_grad_log_q(tb, x, labels, post.table[i], -post.prob[i], g, false);
  return g;
}

// grad_phi of the exact ELBO: sum_c q(c) (log p(c) - log q(c)) grad log q(c);
// the remaining term sum_c q(c) grad log q(c) vanishes.
inline Grad exact_elbo_phi_gradient(const ToyTables& tb, const std::vector<int>& x, const std::vector<int>& labels) {
  Grad g = zero_phi_grad(tb);
  for (const auto& c : configs(tb, labels)) {
    const double lq = log_q(tb, x, labels, c, false);
    add_grad_log_q(tb, x, labels, c, std::exp(lq) * (log_joint(tb, x, c) - lq), g, false);
  }
  return g;
}

// Forward algorithm with z summed out of the emission; a second route to
// log p(x, y_S) that never lists configurations.
inline double forward_log_marginal(const ToyTables& tb, const std::vector<int>& x, const std::vector<int>& labels) {
  auto emission = [&](std::size_t y, int xt) {
    std::vector<double> terms;
    for (std::size_t k = 0; k < tb.Z; ++k) {
      const double lz = tb.Z > 1 ? log_normalize(tb.zprior[y])[k] : 0.0;
      terms.push_back(lz + log_normalize(tb.emit[y * tb.Z + k])[static_cast<std::size_t>(xt)]);
    }
    return lse(terms);
  };
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> alpha(tb.C);
  const std::vector<double> li = log_normalize(tb.init[0]);
  for (std::size_t c = 0; c < tb.C; ++c) {
    const bool ok = labels[0] == kFree || labels[0] == static_cast<int>(c);
    alpha[c] = ok ? li[c] + emission(c, x[0]) : ninf;
  }
  for (std::size_t t = 1; t < x.size(); ++t) {
    std::vector<double> next(tb.C);
    for (std::size_t c = 0; c < tb.C; ++c) {
      if (labels[t] != kFree && labels[t] != static_cast<int>(c)) {
        next[c] = ninf;
        continue;
      }
      std::vector<double> terms(tb.C);
      for (std::size_t p = 0; p < tb.C; ++p) terms[p] = alpha[p] + log_normalize(tb.trans[p])[c];
      next[c] = lse(terms) + emission(c, x[t]);
    }
    alpha = next;
  }
  return lse(alpha);
}

// Sets the toy's phi tables so that q over the sampled variables equals the
// exact posterior p(y_U, z | x, y_S) for this single observation sequence.
// Built from backward messages beta_t(y) = log p(x_{t+1:T}, y_S in (t, T] | y_t).
inline void posterior_proposal(cws::EnumerableToy& toy, const std::vector<int>& x, const std::vector<int>& labels) {
  ToyTables tb = tables(toy);
  const std::size_t T = x.size(), C = tb.C, Z = tb.Z;
  const double ninf = -std::numeric_limits<double>::infinity();
  auto allowed = [&](std::size_t t, std::size_t c) { return labels[t] == kFree || labels[t] == static_cast<int>(c); };
  auto emission = [&](std::size_t y, std::size_t t) {
    std::vector<double> terms;
    for (std::size_t k = 0; k < Z; ++k) {
      const double lz = Z > 1 ? log_normalize(tb.zprior[y])[k] : 0.0;
      terms.push_back(lz + log_normalize(tb.emit[y * Z + k])[static_cast<std::size_t>(x[t])]);
    }
    return lse(terms);
  };
  std::vector<std::vector<double>> beta(T, std::vector<double>(C, 0.0));
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<double> terms(C);
      for (std::size_t n = 0; n < C; ++n)
        terms[n] = allowed(t + 1, n) ? log_normalize(tb.trans[c])[n] + emission(n, t + 1) + beta[t + 1][n] : ninf;
      beta[t][c] = lse(terms);
    }
  }
  cws::Tensor qy(T * (C + 1), C);
  // Rows for impossible predecessors keep zeros; they are never reached.
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t prev = 0; prev <= C; ++prev) {
      if ((t == 0) != (prev == C)) continue;
      const std::vector<double> lprior = t == 0 ? log_normalize(tb.init[0]) : log_normalize(tb.trans[prev]);
      std::vector<double> l(C);
      for (std::size_t c = 0; c < C; ++c) l[c] = allowed(t, c) ? lprior[c] + emission(c, t) + beta[t][c] : ninf;
      if (labels[t] != kFree) continue;  // supervised step: q(y_t) is not part of the sampled density
      l = log_normalize(l);
      for (std::size_t c = 0; c < C; ++c) qy(t * (C + 1) + prev, c) = std::max(l[c], -700.0);
    }
  }
  auto& ps = toy.params();
  ps.at("phi/qy_bias").mutable_value() = qy;
  ps.at("phi/qy_obs").mutable_value().fill(0.0);
  if (Z > 1) {
    cws::Tensor qz(T * C, Z);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c) {
        std::vector<double> l(Z);
        for (std::size_t k = 0; k < Z; ++k)
          l[k] = log_normalize(tb.zprior[c])[k] + log_normalize(tb.emit[c * Z + k])[static_cast<std::size_t>(x[t])];
        l = log_normalize(l);
        for (std::size_t k = 0; k < Z; ++k) qz(t * C + c, k) = l[k];
      }
    ps.at("phi/qz_bias").mutable_value() = qz;
    ps.at("phi/qz_obs").mutable_value().fill(0.0);
  }
}

}  // namespace oracle
