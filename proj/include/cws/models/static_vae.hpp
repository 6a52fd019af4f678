#pragma once

// Semi-supervised VAE for single-step data (binarized images).
//
//   p(y) uniform, p(z) = N(0, I), p(x | y, z) Bernoulli(MLP([z, onehot y]))
//   q(y | x) = Cat(MLP(x)),  q(z | x, y) = N(MLP([x, onehot y]))

#include <cmath>
#include <vector>

#include "cws/model.hpp"
#include "cws/nn.hpp"

namespace cws {

struct StaticVaeDims {
  std::size_t obs_dim = 784;
  std::size_t classes = 10;
  std::size_t z_dim = 50;
  std::size_t hidden = 500;
};

class StaticSemiVAE {
 public:
  StaticSemiVAE(StaticVaeDims dims, const Rng& rng) : dims_(dims) {
    Rng r = rng;
    const std::size_t D = dims.obs_dim, C = dims.classes, Z = dims.z_dim, H = dims.hidden;
    require(C >= 2 && D >= 1 && Z >= 1 && H >= 1, "StaticSemiVAE: bad dims");
    dec_ = MLP::make(params_, Group::theta, "dec", Z + C, H, D, r, Activation::softplus);
    enc_y_ = MLP::make(params_, Group::phi, "enc_y", D, H, C, r, Activation::softplus);
    enc_zx_ = Linear::make(params_, Group::phi, "enc_z/x", D, H, r);
    enc_zy_ = params_.add_uniform("enc_z/y", Group::phi, C, H, D + C, r);
    enc_zo_ = Linear::make(params_, Group::phi, "enc_z/o", H, 2 * Z, r);
  }

  const StaticVaeDims& dims() const { return dims_; }
  std::size_t num_classes() const { return dims_.classes; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Var class_logits(const Tensor& x) const { return enc_y_(Var::constant(x)); }

  // q(z | x, y) for rows given by `rows` into the M x D input x.
  DiagGaussian q_z(const Var& xw, std::span<const std::size_t> rows, std::span<const int> y) const {
    Var pre = add(gather_rows(xw, rows), matmul(Var::constant(one_hot(y, dims_.classes)), enc_zy_));
    Var out = enc_zo_(softplus(pre));
    const std::size_t Z = dims_.z_dim;
    return DiagGaussian(slice_cols(out, 0, Z), slice_cols(out, Z, 2 * Z));
  }

  // log p(y) + log p(z) + log p(x | y, z), rows x 1.
  Var log_joint_rows(const Tensor& x, std::span<const int> y, const Var& z) const {
    Var lpz = sum(add_scalar(scale(square(z), -0.5), -kHalfLog2Pi), Reduce::per_row);
    Var logits = dec_(hcat({z, Var::constant(one_hot(y, dims_.classes))}));
    Var lpx = BernoulliVec(logits).log_prob(x);
    return add_scalar(add(lpz, lpx), -std::log(static_cast<double>(dims_.classes)));
  }

  // Single-sample ELBO of (x, y) with z drawn by the chooser, rows x 1.
  Var elbo_given_class(const Tensor& x, std::span<const int> y, LatentChooser& chooser) const {
    std::vector<std::size_t> rows(x.rows());
    for (std::size_t n = 0; n < rows.size(); ++n) rows[n] = n;
    Var xw = enc_zx_(Var::constant(x));
    DiagGaussian qz = q_z(xw, rows, y);
    Var z = chooser.choose(0, qz);
    return sub(log_joint_rows(x, y, z), qz.log_prob(z));
  }

  InferenceTrace infer(const SequenceBatch& b, std::size_t K, LatentChooser& chooser) const {
    require(b.length == 1, "StaticSemiVAE: sequences must have length 1");
    const std::size_t N = b.size * K;
    const std::vector<std::size_t> rows = particle_rows(b.size, K);
    InferenceTrace tr;
    tr.rows = N;
    tr.length = 1;
    tr.particles = K;
    Var logits = class_logits(b.x[0]);
    Categorical qy(K == 1 ? logits : gather_rows(logits, rows));
    std::vector<int> y = chooser.choose(0, Site::y, qy);
    tr.supervised.push_back(clamp_to_labels(y, b.labels[0], K, dims_.classes));
    tr.q_y_logits.push_back(qy.logits());
    tr.log_q_y.push_back(qy.log_prob(y));
    DiagGaussian qz = q_z(enc_zx_(Var::constant(b.x[0])), rows, y);
    Var z = chooser.choose(0, qz);
    tr.log_q_z.push_back(qz.log_prob(z));
    tr.z.push_back(z);
    tr.y.push_back(std::move(y));
    return tr;
  }

  GenerativeTrace log_joint(const SequenceBatch& b, std::size_t K, const InferenceTrace& tr) const {
    const std::vector<std::size_t> rows = particle_rows(b.size, K);
    Tensor x(rows.size(), dims_.obs_dim);
    for (std::size_t n = 0; n < rows.size(); ++n)
      std::copy_n(b.x[0].row_span(rows[n]).begin(), dims_.obs_dim, x.row_span(n).begin());
    GenerativeTrace g;
    g.log_p_steps.push_back(log_joint_rows(x, tr.y[0], tr.z[0]));
    g.log_p = g.log_p_steps[0];
    return g;
  }

 private:
  StaticVaeDims dims_;
  ParamStore params_;
  MLP dec_;
  MLP enc_y_;
  Linear enc_zx_;
  Var enc_zy_;
  Linear enc_zo_;
};

}  // namespace cws
