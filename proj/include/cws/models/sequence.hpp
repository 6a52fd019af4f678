#pragma once

// Structured recurrent latent-variable model with a discrete y_t and a
// continuous z_t per step.
//
// Generative (theta):
//   h_0 learned, h_t = GRU_p(h_{t-1}, [x_t, onehot(y_t), z_t])
//   p(y_t | h_{t-1}), p(z_t | h_{t-1}), p(x_t | h_{t-1}, y_t, z_t)
// All history (x_{<t}, y_{<t}, z_{<t}) reaches the heads through h_{t-1}.
//
// Inference (phi):
//   c_t = GRU_c(c_{t+1}, x_t) run backwards, so c_t summarizes x_{t:T}
//   g_t = GRU_g(g_{t-1}, [onehot(y_t), z_t]) summarizes y_{<=t}, z_{<=t}
//   q(y_t | c_t, g_{t-1}),  q(z_t | c_t, g_{t-1}, y_t)

#include <vector>

#include "cws/model.hpp"
#include "cws/nn.hpp"

namespace cws {

enum class ObservationKind { gaussian, bernoulli };

struct SeqModelDims {
  std::size_t obs_dim = 4;
  std::size_t classes = 6;
  std::size_t z_dim = 8;
  std::size_t hidden = 64;
  std::size_t mlp_hidden = 64;
  ObservationKind observation = ObservationKind::gaussian;
};

// Observation likelihood head: diagonal Gaussian or independent Bernoulli.
struct ObservationDist {
  ObservationKind kind;
  Var first;   // mean or logits
  Var second;  // log_std (Gaussian only)

  Var log_prob(const Tensor& x) const {
    if (kind == ObservationKind::bernoulli) return BernoulliVec(first).log_prob(x);
    return DiagGaussian(first, second).log_prob(x);
  }
  Tensor sample(std::span<Rng> streams) const {
    if (kind == ObservationKind::bernoulli) return BernoulliVec(first).sample(streams);
    return DiagGaussian(first, second).sample(streams);
  }
};

struct Continuation {
  Tensor x;                    // steps x D_x
  std::vector<int> y;          // steps
  std::vector<double> log_p_y; // per step
  std::vector<double> log_p_z;
  std::vector<double> log_p_x;
};

class SeqModel {
 public:
  SeqModel(SeqModelDims dims, const Rng& rng) : dims_(dims) {
    Rng r = rng;
    const std::size_t H = dims.hidden, C = dims.classes, Dz = dims.z_dim, Dx = dims.obs_dim, W = dims.mlp_hidden;
    require(C >= 2 && Dz >= 1 && H >= 1 && Dx >= 1, "SeqModel: bad dims");
    const std::size_t out_x = dims.observation == ObservationKind::gaussian ? 2 * Dx : Dx;
    h0_ = params_.add_uniform("h0", Group::theta, 1, H, H, r);
    gru_p_ = GRUCell::make(params_, Group::theta, "gru", Dx + C + Dz, H, r);
    prior_y_ = Linear::make(params_, Group::theta, "prior_y", H, C, r);
    prior_z_ = Linear::make(params_, Group::theta, "prior_z", H, 2 * Dz, r);
    emit_ = MLP::make(params_, Group::theta, "emit", H + C + Dz, W, out_x, r);
    c_end_ = params_.add_uniform("c_end", Group::phi, 1, H, H, r);
    gru_c_ = GRUCell::make(params_, Group::phi, "gru_ctx", Dx, H, r);
    g0_ = params_.add_uniform("g0", Group::phi, 1, H, H, r);
    gru_g_ = GRUCell::make(params_, Group::phi, "gru_lat", C + Dz, H, r);
    q_y_ = MLP::make(params_, Group::phi, "q_y", 2 * H, W, C, r);
    q_z_ = MLP::make(params_, Group::phi, "q_z", 2 * H + C, W, 2 * Dz, r);
  }

  const SeqModelDims& dims() const { return dims_; }
  std::size_t num_classes() const { return dims_.classes; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // --- generative side ----------------------------------------------------

  struct Heads {
    Categorical p_y;
    DiagGaussian p_z;
  };

  Var initial_state(std::size_t rows) const { return broadcast_rows(h0_, rows); }

  Heads heads(const Var& h_prev) const {
    Var zp = prior_z_(h_prev);
    const std::size_t Dz = dims_.z_dim;
    return {Categorical(prior_y_(h_prev)), DiagGaussian(slice_cols(zp, 0, Dz), slice_cols(zp, Dz, 2 * Dz))};
  }

  ObservationDist emission(const Var& h_prev, const std::vector<int>& y, const Var& z) const {
    Var out = emit_(hcat({h_prev, Var::constant(one_hot(y, dims_.classes)), z}));
    if (dims_.observation == ObservationKind::bernoulli) return {ObservationKind::bernoulli, out, Var()};
    const std::size_t Dx = dims_.obs_dim;
    return {ObservationKind::gaussian, slice_cols(out, 0, Dx), slice_cols(out, Dx, 2 * Dx)};
  }

  Var advance(const Var& h_prev, const Tensor& x, const std::vector<int>& y, const Var& z) const {
    return gru_p_(hcat({Var::constant(x), Var::constant(one_hot(y, dims_.classes)), z}), h_prev);
  }

  struct GenStep {
    Heads heads;
    Var h;  // state after consuming the previous step, i.e. h_{t-1}
  };

  // Consumes (x_{t-1}, y_{t-1}, z_{t-1}) and returns the step-t conditionals.
  GenStep gen_step(const Var& h_prev, const Tensor& x_prev, const std::vector<int>& y_prev, const Var& z_prev) const {
    Var h = advance(h_prev, x_prev, y_prev, z_prev);
    return {heads(h), h};
  }

  GenerativeTrace log_joint(const SequenceBatch& b, std::size_t K, const InferenceTrace& tr) const {
    const std::size_t N = b.size * K;
    const std::vector<std::size_t> rows = particle_rows(b.size, K);
    GenerativeTrace g;
    Var h = initial_state(N);
    for (std::size_t t = 0; t < b.length; ++t) {
      const Tensor x = expand(b.x[t], rows);
      Heads hd = heads(h);
      Var lp = add(hd.p_y.log_prob(tr.y[t]), hd.p_z.log_prob(tr.z[t]));
      lp = add(lp, emission(h, tr.y[t], tr.z[t]).log_prob(x));
      g.log_p_steps.push_back(lp);
      if (t + 1 < b.length) h = advance(h, x, tr.y[t], tr.z[t]);
    }
    g.log_p = add_n(g.log_p_steps);
    return g;
  }

  // --- inference side -----------------------------------------------------

  // Backward summaries c_t over x_{t:T}, one row per sequence.
  std::vector<Var> context(const SequenceBatch& b) const {
    std::vector<Var> c(b.length);
    Var state = broadcast_rows(c_end_, b.size);
    for (std::size_t t = b.length; t-- > 0;) {
      state = gru_c_(Var::constant(b.x[t]), state);
      c[t] = state;
    }
    return c;
  }

  struct InfStep {
    Categorical q_y;
    std::vector<int> y;
    std::vector<bool> supervised;
    DiagGaussian q_z;
  };

  // One step of q: y_t is chosen (or clamped when labels[n / K] is set),
  // then z_t's head conditions on the realized y_t.
  InfStep inf_step(std::size_t t, const Var& ctx, const Var& g_prev, const std::vector<int>& labels, std::size_t K,
                   LatentChooser& chooser) const {
    Var base = hcat({ctx, g_prev});
    Categorical qy(q_y_(base));
    std::vector<int> y = chooser.choose(t, Site::y, qy);
    std::vector<bool> sup = clamp_to_labels(y, labels, K, dims_.classes);
    Var zp = q_z_(hcat({base, Var::constant(one_hot(y, dims_.classes))}));
    const std::size_t Dz = dims_.z_dim;
    return {qy, std::move(y), std::move(sup), DiagGaussian(slice_cols(zp, 0, Dz), slice_cols(zp, Dz, 2 * Dz))};
  }

  InferenceTrace infer(const SequenceBatch& b, std::size_t K, LatentChooser& chooser) const {
    const std::size_t N = b.size * K;
    const std::vector<std::size_t> rows = particle_rows(b.size, K);
    std::vector<Var> ctx = context(b);
    InferenceTrace tr;
    tr.rows = N;
    tr.length = b.length;
    tr.particles = K;
    Var g = broadcast_rows(g0_, N);
    for (std::size_t t = 0; t < b.length; ++t) {
      InfStep s = inf_step(t, K == 1 ? ctx[t] : gather_rows(ctx[t], rows), g, b.labels[t], K, chooser);
      Var z = chooser.choose(t, s.q_z);
      tr.q_y_logits.push_back(s.q_y.logits());
      tr.log_q_y.push_back(s.q_y.log_prob(s.y));
      tr.log_q_z.push_back(s.q_z.log_prob(z));
      if (t + 1 < b.length) g = gru_g_(hcat({Var::constant(one_hot(s.y, dims_.classes)), z}), g);
      tr.z.push_back(z);
      tr.y.push_back(std::move(s.y));
      tr.supervised.push_back(std::move(s.supervised));
    }
    return tr;
  }

  // Seeds the generative recurrence with a fully labeled prefix (z taken as
  // the inference mean) and samples `steps` further steps from p.
  Continuation continue_sequence(const LabeledSequence& prefix, std::size_t steps, const Rng& rng) const {
    for (std::size_t t = 0; t < prefix.length(); ++t) require(prefix.is_labeled(t), "continue_sequence: prefix must be fully labeled");
    SequenceBatch b = make_batch(prefix, dims_.obs_dim);
    GreedyChooser greedy;
    InferenceTrace tr = infer(b, 1, greedy);
    Var h = initial_state(1);
    for (std::size_t t = 0; t < b.length; ++t) h = advance(h, b.x[t], tr.y[t], tr.z[t]);

    Continuation out;
    out.x = Tensor(steps, dims_.obs_dim);
    std::vector<Rng> stream{rng};
    for (std::size_t s = 0; s < steps; ++s) {
      Heads hd = heads(h);
      std::vector<int> y = hd.p_y.sample(stream);
      Var z = Var::constant(hd.p_z.sample(stream));
      ObservationDist px = emission(h, y, z);
      Tensor x = px.sample(stream);
      out.log_p_y.push_back(hd.p_y.log_prob(y).item());
      out.log_p_z.push_back(hd.p_z.log_prob(z).item());
      out.log_p_x.push_back(px.log_prob(x).item());
      out.y.push_back(y[0]);
      for (std::size_t d = 0; d < dims_.obs_dim; ++d) out.x(s, d) = x(0, d);
      h = advance(h, x, y, z);
    }
    return out;
  }

 private:
  static Tensor expand(const Tensor& x, const std::vector<std::size_t>& rows) {
    if (rows.size() == x.rows()) return x;
    Tensor out(rows.size(), x.cols());
    for (std::size_t n = 0; n < rows.size(); ++n)
      std::copy_n(x.row_span(rows[n]).begin(), x.cols(), out.row_span(n).begin());
    return out;
  }

  SeqModelDims dims_;
  ParamStore params_;
  Var h0_;
  GRUCell gru_p_;
  Linear prior_y_, prior_z_;
  MLP emit_;
  Var c_end_, g0_;
  GRUCell gru_c_, gru_g_;
  MLP q_y_, q_z_;
};

}  // namespace cws
