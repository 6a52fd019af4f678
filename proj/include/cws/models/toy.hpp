#pragma once

// A fully discrete sequential model small enough to enumerate.
//
// Generative side (theta): y_1 ~ init, y_t | y_{t-1} ~ trans, z_t | y_t ~ zprior,
// x_t | y_t, z_t ~ emit, with x_t drawn from a finite alphabet. Setting
// z_states = 1 removes z and gives a plain HMM.
//
// Inference side (phi): q(y_t | x, y_{t-1}) has logits qy_bias[t, y_{t-1}] +
// qy_obs[x_t]; q(z_t | x, y_t) has logits qz_bias[t, y_t] + qz_obs[x_t]. The
// per-position bias tables are rich enough to represent the exact posterior
// of any single observed sequence.

#include <cmath>
#include <optional>
#include <vector>

#include "cws/model.hpp"
#include "cws/nn.hpp"

namespace cws {

struct ToyDims {
  std::size_t classes = 3;
  std::size_t z_states = 1;
  std::size_t alphabet = 4;
  std::size_t max_length = 4;
};

struct ToyConfig {
  std::vector<int> y;
  std::vector<int> z;
  double log_joint = 0.0;
};

struct ToyEnumeration {
  std::vector<ToyConfig> rows;

  double log_marginal() const {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& r : rows) m = std::max(m, r.log_joint);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (const auto& r : rows) s += std::exp(r.log_joint - m);
    return m + std::log(s);
  }
};

class EnumerableToy {
 public:
  static constexpr std::size_t kMaxTable = 1000000;

  EnumerableToy(ToyDims dims, const Rng& rng, double theta_scale = 1.0, double phi_scale = 0.0) : dims_(dims) {
    require(dims.classes >= 2 && dims.z_states >= 1 && dims.alphabet >= 2 && dims.max_length >= 1, "EnumerableToy: bad dims");
    Rng r = rng;
    auto table = [&](std::size_t rows, std::size_t cols, double s) {
      Tensor t(rows, cols);
      for (double& v : t.data()) v = s * r.normal();
      return t;
    };
    const std::size_t C = dims.classes, Z = dims.z_states, V = dims.alphabet, T = dims.max_length;
    init_ = params_.add("init", Group::theta, table(1, C, theta_scale));
    trans_ = params_.add("trans", Group::theta, table(C, C, theta_scale));
    if (Z > 1) zprior_ = params_.add("zprior", Group::theta, table(C, Z, theta_scale));
    emit_ = params_.add("emit", Group::theta, table(C * Z, V, theta_scale));
    qy_bias_ = params_.add("qy_bias", Group::phi, table(T * (C + 1), C, phi_scale));
    qy_obs_ = params_.add("qy_obs", Group::phi, table(V, C, phi_scale));
    if (Z > 1) {
      qz_bias_ = params_.add("qz_bias", Group::phi, table(T * C, Z, phi_scale));
      qz_obs_ = params_.add("qz_obs", Group::phi, table(V, Z, phi_scale));
    }
  }

  const ToyDims& dims() const { return dims_; }
  std::size_t num_classes() const { return dims_.classes; }
  bool has_z() const { return dims_.z_states > 1; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  std::size_t qy_row(std::size_t t, int prev) const {
    return t * (dims_.classes + 1) + (prev < 0 ? dims_.classes : static_cast<std::size_t>(prev));
  }
  std::size_t qz_row(std::size_t t, int y) const { return t * dims_.classes + static_cast<std::size_t>(y); }
  std::size_t emit_row(int y, int z) const { return static_cast<std::size_t>(y) * dims_.z_states + static_cast<std::size_t>(z); }

  struct GenStep {
    Categorical p_y;
    std::optional<Categorical> p_z;
    Categorical p_x;
  };

  // prev empty means t = 1 (initial distribution).
  GenStep gen_step(const std::vector<int>& prev, const std::vector<int>& y, const std::vector<int>& z) const {
    const std::size_t N = y.size();
    Var py = prev.empty() ? broadcast_rows(init_, N) : gather_rows(trans_, to_rows(prev));
    std::optional<Categorical> pz;
    if (has_z()) pz.emplace(gather_rows(zprior_, to_rows(y)));
    std::vector<std::size_t> er(N);
    for (std::size_t n = 0; n < N; ++n) er[n] = emit_row(y[n], has_z() ? z[n] : 0);
    return {Categorical(py), std::move(pz), Categorical(gather_rows(emit_, er))};
  }

  InferenceTrace infer(const SequenceBatch& b, std::size_t K, LatentChooser& chooser) const {
    require(b.length <= dims_.max_length, "EnumerableToy: sequence longer than max_length");
    const std::size_t N = b.size * K, C = dims_.classes;
    InferenceTrace tr;
    tr.rows = N;
    tr.length = b.length;
    tr.particles = K;
    std::vector<int> prev(N, -1);
    for (std::size_t t = 0; t < b.length; ++t) {
      const std::vector<std::size_t> xr = obs_rows(b, t, K);
      std::vector<std::size_t> br(N);
      for (std::size_t n = 0; n < N; ++n) br[n] = qy_row(t, prev[n]);
      Categorical qy(add(gather_rows(qy_bias_, br), gather_rows(qy_obs_, xr)));
      std::vector<int> y = chooser.choose(t, Site::y, qy);
      tr.supervised.push_back(clamp_to_labels(y, b.labels[t], K, C));
      tr.q_y_logits.push_back(qy.logits());
      tr.log_q_y.push_back(qy.log_prob(y));
      if (has_z()) {
        std::vector<std::size_t> zr(N);
        for (std::size_t n = 0; n < N; ++n) zr[n] = qz_row(t, y[n]);
        Categorical qz(add(gather_rows(qz_bias_, zr), gather_rows(qz_obs_, xr)));
        std::vector<int> z = chooser.choose(t, Site::z, qz);
        tr.log_q_z.push_back(qz.log_prob(z));
        tr.z.push_back(Var::constant(index_column(z)));
        tr.z_index.push_back(std::move(z));
      } else {
        tr.log_q_z.emplace_back();
        tr.z.emplace_back();
        tr.z_index.push_back(std::vector<int>(N, 0));
      }
      prev = y;
      tr.y.push_back(std::move(y));
    }
    return tr;
  }

  GenerativeTrace log_joint(const SequenceBatch& b, std::size_t K, const InferenceTrace& tr) const {
    GenerativeTrace g;
    for (std::size_t t = 0; t < b.length; ++t) {
      GenStep s = gen_step(t == 0 ? std::vector<int>{} : tr.y[t - 1], tr.y[t], tr.z_index[t]);
      const std::vector<std::size_t> xr = obs_rows(b, t, K);
      std::vector<int> x(xr.begin(), xr.end());
      Var lp = add(s.p_y.log_prob(tr.y[t]), s.p_x.log_prob(x));
      if (s.p_z) lp = add(lp, s.p_z->log_prob(tr.z_index[t]));
      g.log_p_steps.push_back(lp);
    }
    g.log_p = add_n(g.log_p_steps);
    return g;
  }

  // --- single-step (static) view, valid for length-1 sequences ---------------

  Var class_logits(const Tensor& x) const {
    std::vector<std::size_t> br(x.rows(), qy_row(0, -1));
    return add(gather_rows(qy_bias_, br), gather_rows(qy_obs_, column_rows(x)));
  }

  // log p(x, y) when there is no z; otherwise the exact ELBO over z given (x, y).
  Var elbo_given_class(const Tensor& x, std::span<const int> y, LatentChooser&) const {
    const std::size_t M = x.rows();
    std::vector<int> yv(y.begin(), y.end());
    const std::vector<std::size_t> xr = column_rows(x);
    std::vector<int> xi(xr.begin(), xr.end());
    Var log_py = Categorical(broadcast_rows(init_, M)).log_prob(yv);
    if (!has_z()) return add(log_py, gen_step({}, yv, std::vector<int>(M, 0)).p_x.log_prob(xi));
    std::vector<std::size_t> zr(M);
    for (std::size_t n = 0; n < M; ++n) zr[n] = qz_row(0, yv[n]);
    Var qz_log = log_softmax(add(gather_rows(qz_bias_, zr), gather_rows(qz_obs_, xr)));
    Var pz_log = log_softmax(gather_rows(zprior_, to_rows(yv)));
    std::vector<Var> cols;
    for (std::size_t z = 0; z < dims_.z_states; ++z) {
      std::vector<std::size_t> er(M);
      for (std::size_t n = 0; n < M; ++n) er[n] = emit_row(yv[n], static_cast<int>(z));
      cols.push_back(Categorical(gather_rows(emit_, er)).log_prob(xi));
    }
    Var lpx = hcat(cols);  // M x Z
    Var term = sub(add(pz_log, lpx), qz_log);
    return add(log_py, sum(mul(exp(qz_log), term), Reduce::per_row));
  }

  // --- plain-double evaluation --------------------------------------------

  Tensor log_table(const Var& logits) const {
    Tensor t = logits.value();
    for (std::size_t r = 0; r < t.rows(); ++r) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < t.cols(); ++c) m = std::max(m, t(r, c));
      double s = 0.0;
      for (std::size_t c = 0; c < t.cols(); ++c) s += std::exp(t(r, c) - m);
      for (std::size_t c = 0; c < t.cols(); ++c) t(r, c) -= m + std::log(s);
    }
    return t;
  }

  double log_joint_config(const std::vector<int>& x, const std::vector<int>& y, const std::vector<int>& z) const {
    const Tensor li = log_table(init_), lt = log_table(trans_), le = log_table(emit_);
    const Tensor lz = has_z() ? log_table(zprior_) : Tensor();
    double lp = 0.0;
    for (std::size_t t = 0; t < x.size(); ++t) {
      const auto yt = static_cast<std::size_t>(y[t]);
      lp += t == 0 ? li(0, yt) : lt(static_cast<std::size_t>(y[t - 1]), yt);
      if (has_z()) lp += lz(yt, static_cast<std::size_t>(z[t]));
      lp += le(emit_row(y[t], has_z() ? z[t] : 0), static_cast<std::size_t>(x[t]));
    }
    return lp;
  }

  struct LogQ {
    double sampled = 0.0;  // y over unsupervised steps, plus all z
    double full = 0.0;     // sampled plus log q(y_t) at supervised steps
  };

  LogQ log_q_config(const std::vector<int>& x, const std::vector<int>& labels, const std::vector<int>& y,
                    const std::vector<int>& z) const {
    const Tensor& qb = qy_bias_.value();
    const Tensor& qo = qy_obs_.value();
    LogQ out;
    for (std::size_t t = 0; t < x.size(); ++t) {
      const std::size_t row = qy_row(t, t == 0 ? -1 : y[t - 1]);
      std::vector<double> l(dims_.classes);
      for (std::size_t c = 0; c < dims_.classes; ++c) l[c] = qb(row, c) + qo(static_cast<std::size_t>(x[t]), c);
      const double ly = log_softmax_at(l, static_cast<std::size_t>(y[t]));
      out.full += ly;
      if (labels[t] == kUnlabeled) out.sampled += ly;
      if (has_z()) {
        const std::size_t zr = qz_row(t, y[t]);
        std::vector<double> lzv(dims_.z_states);
        for (std::size_t k = 0; k < dims_.z_states; ++k)
          lzv[k] = qz_bias_.value()(zr, k) + qz_obs_.value()(static_cast<std::size_t>(x[t]), k);
        const double lzz = log_softmax_at(lzv, static_cast<std::size_t>(z[t]));
        out.full += lzz;
        out.sampled += lzz;
      }
    }
    return out;
  }

  // Every latent configuration consistent with the labels, with its exact log joint.
  ToyEnumeration enumerate_joint(const std::vector<int>& x, const std::vector<int>& labels) const {
    const std::size_t T = x.size();
    require(labels.size() == T, "enumerate_joint: labels/observations length mismatch");
    std::size_t free_y = 0;
    for (int l : labels) free_y += l == kUnlabeled ? 1 : 0;
    double estimate = std::pow(static_cast<double>(dims_.classes), static_cast<double>(free_y)) *
                      std::pow(static_cast<double>(dims_.z_states), static_cast<double>(T));
    if (estimate > static_cast<double>(kMaxTable)) {
      throw ContractViolation("enumerate_joint: table would have " + std::to_string(static_cast<long long>(estimate)) +
                              " rows (limit " + std::to_string(kMaxTable) + ")");
    }
    ToyEnumeration out;
    std::vector<int> y(T, 0), z(T, 0);
    for (std::size_t t = 0; t < T; ++t)
      if (labels[t] != kUnlabeled) y[t] = labels[t];
    // Odometer over free y positions then z positions.
    while (true) {
      out.rows.push_back({y, z, log_joint_config(x, y, z)});
      std::size_t pos = 0;
      bool carry = true;
      while (carry && pos < 2 * T) {
        if (pos < T) {
          if (labels[pos] == kUnlabeled) {
            if (++y[pos] < static_cast<int>(dims_.classes)) carry = false;
            else y[pos] = 0;
          }
        } else if (has_z()) {
          const std::size_t t = pos - T;
          if (++z[t] < static_cast<int>(dims_.z_states)) carry = false;
          else z[t] = 0;
        }
        ++pos;
      }
      if (carry) break;
    }
    return out;
  }

 private:
  static double log_softmax_at(const std::vector<double>& l, std::size_t i) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : l) m = std::max(m, v);
    double s = 0.0;
    for (double v : l) s += std::exp(v - m);
    return l[i] - m - std::log(s);
  }

  static std::vector<std::size_t> to_rows(const std::vector<int>& v) { return {v.begin(), v.end()}; }

  static Tensor index_column(const std::vector<int>& v) {
    Tensor t(v.size(), 1);
    for (std::size_t i = 0; i < v.size(); ++i) t(i, 0) = v[i];
    return t;
  }

  std::vector<std::size_t> column_rows(const Tensor& x) const {
    require(x.cols() == 1, "EnumerableToy: observations must be a single symbol column");
    std::vector<std::size_t> r(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const double v = x(i, 0);
      require(v >= 0 && v < static_cast<double>(dims_.alphabet) && v == std::floor(v),
              "EnumerableToy: observation " + std::to_string(v) + " outside alphabet");
      r[i] = static_cast<std::size_t>(v);
    }
    return r;
  }

  std::vector<std::size_t> obs_rows(const SequenceBatch& b, std::size_t t, std::size_t K) const {
    std::vector<std::size_t> per_seq = column_rows(b.x[t]);
    std::vector<std::size_t> out(b.size * K);
    for (std::size_t n = 0; n < out.size(); ++n) out[n] = per_seq[n / K];
    return out;
  }

  ToyDims dims_;
  ParamStore params_;
  Var init_, trans_, zprior_, emit_;
  Var qy_bias_, qy_obs_, qz_bias_, qz_obs_;
};

// Wraps symbol sequences as a batch the toy understands.
inline SequenceBatch toy_batch(const std::vector<std::vector<int>>& xs, const std::vector<std::vector<int>>& labels) {
  require(!xs.empty() && xs.size() == labels.size(), "toy_batch: need matching observation/label lists");
  SequenceBatch b;
  b.size = xs.size();
  b.length = xs[0].size();
  b.obs_dim = 1;
  b.x.assign(b.length, Tensor(b.size, 1));
  b.labels.assign(b.length, std::vector<int>(b.size, kUnlabeled));
  for (std::size_t i = 0; i < b.size; ++i) {
    require(xs[i].size() == b.length && labels[i].size() == b.length, "toy_batch: ragged input");
    for (std::size_t t = 0; t < b.length; ++t) {
      b.x[t](i, 0) = xs[i][t];
      b.labels[t][i] = labels[i][t];
    }
  }
  return b;
}

}  // namespace cws
