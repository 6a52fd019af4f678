#pragma once

// Batched distributions: every object describes one distribution per row.

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "cws/autodiff.hpp"
#include "cws/rng.hpp"

namespace cws {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)

class Categorical {
 public:
  explicit Categorical(Var logits) : logits_(std::move(logits)) {
    require(logits_.cols() >= 2, "Categorical: need at least 2 classes, got " + std::to_string(logits_.cols()));
  }

  // Probabilities may contain exact zeros (logit -inf).
  static Categorical from_probs(const Tensor& probs) {
    Tensor l(probs.rows(), probs.cols());
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = std::log(probs[i]);
    return Categorical(Var::constant(std::move(l)));
  }

  std::size_t batch() const { return logits_.rows(); }
  std::size_t num_classes() const { return logits_.cols(); }
  const Var& logits() const { return logits_; }

  const Var& log_probs() const {
    if (!log_probs_.defined()) log_probs_ = log_softmax(logits_);
    return log_probs_;
  }

  Tensor probs() const {
    Tensor p = log_probs().value();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(p[i]);
    return p;
  }

  // rows x 1 column of log q(value_r).
  Var log_prob(std::span<const int> values) const { return gather_cols(log_probs(), values); }

  // Gumbel-argmax; row r draws from streams[r].
  std::vector<int> sample(std::span<Rng> streams) const {
    require(streams.size() == batch(), "Categorical::sample: " + std::to_string(streams.size()) +
                                           " streams for " + std::to_string(batch()) + " rows");
    const Tensor& l = logits_.value();
    std::vector<int> out(batch());
    for (std::size_t r = 0; r < batch(); ++r) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = 0;
      for (std::size_t c = 0; c < num_classes(); ++c) {
        const double g = l(r, c) + streams[r].gumbel();
        if (g > best) {
          best = g;
          arg = static_cast<int>(c);
        }
      }
      out[r] = arg;
    }
    return out;
  }

  std::vector<int> sample(Rng& rng) const {
    require(batch() == 1, "Categorical::sample(Rng&) needs a single row");
    return sample(std::span<Rng>(&rng, 1));
  }

  // Ties resolve to the lowest class index.
  std::vector<int> argmax() const {
    const Tensor& l = logits_.value();
    std::vector<int> out(batch());
    for (std::size_t r = 0; r < batch(); ++r) {
      std::size_t arg = 0;
      for (std::size_t c = 1; c < num_classes(); ++c)
        if (l(r, c) > l(r, arg)) arg = c;
      out[r] = static_cast<int>(arg);
    }
    return out;
  }

 private:
  Var logits_;
  mutable Var log_probs_;
};

class DiagGaussian {
 public:
  DiagGaussian(Var mean, Var log_std) : mean_(std::move(mean)), log_std_(std::move(log_std)) {
    require(mean_.shape() == log_std_.shape(), "DiagGaussian: mean " + to_string(mean_.shape()) + " vs log_std " +
                                                    to_string(log_std_.shape()));
  }

  std::size_t batch() const { return mean_.rows(); }
  std::size_t dim() const { return mean_.cols(); }
  const Var& mean() const { return mean_; }
  const Var& log_std() const { return log_std_; }

  Var log_prob(const Var& value) const {
    require(value.shape() == mean_.shape(),
            "DiagGaussian::log_prob: value " + to_string(value.shape()) + " vs event " + to_string(mean_.shape()));
    Var standardized = mul(sub(value, mean_), exp(neg(log_std_)));
    Var per_dim = sub(scale(square(standardized), -0.5), add_scalar(log_std_, kHalfLog2Pi));
    return sum(per_dim, Reduce::per_row);
  }
  Var log_prob(const Tensor& value) const { return log_prob(Var::constant(value)); }

  Tensor noise(std::span<Rng> streams) const {
    require(streams.size() == batch(), "DiagGaussian: stream count does not match batch");
    Tensor eps(batch(), dim());
    for (std::size_t r = 0; r < batch(); ++r)
      for (std::size_t d = 0; d < dim(); ++d) eps(r, d) = streams[r].normal();
    return eps;
  }

  Tensor sample(std::span<Rng> streams) const {
    Tensor eps = noise(streams);
    const Tensor& m = mean_.value();
    const Tensor& s = log_std_.value();
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = m[i] + std::exp(s[i]) * eps[i];
    return eps;
  }

  // mean + exp(log_std) * eps with gradients through mean and log_std.
  Var rsample(std::span<Rng> streams) const {
    return add(mean_, mul(exp(log_std_), Var::constant(noise(streams))));
  }

 private:
  Var mean_;
  Var log_std_;
};

class BernoulliVec {
 public:
  explicit BernoulliVec(Var logits) : logits_(std::move(logits)) {}

  const Var& logits() const { return logits_; }

  // sum_d x_d * l_d - softplus(l_d), for x in {0, 1}.
  Var log_prob(const Tensor& value) const {
    require(value.shape() == logits_.shape(),
            "BernoulliVec::log_prob: value " + to_string(value.shape()) + " vs event " + to_string(logits_.shape()));
    return sum(sub(mul(logits_, Var::constant(value)), softplus(logits_)), Reduce::per_row);
  }

  Tensor sample(std::span<Rng> streams) const {
    const Tensor& l = logits_.value();
    Tensor out(l.rows(), l.cols());
    for (std::size_t r = 0; r < l.rows(); ++r)
      for (std::size_t d = 0; d < l.cols(); ++d) out(r, d) = streams[r].uniform() < sigmoid_scalar(l(r, d)) ? 1.0 : 0.0;
    return out;
  }

 private:
  Var logits_;
};

// KL(q || p) for one row of two categoricals over the same classes.
inline double kl_categorical(const Categorical& q, const Categorical& p, std::size_t row = 0) {
  require(q.num_classes() == p.num_classes(), "kl_categorical: class count mismatch");
  const Tensor& lq = q.log_probs().value();
  const Tensor& lp = p.log_probs().value();
  double kl = 0.0;
  for (std::size_t c = 0; c < q.num_classes(); ++c) {
    const double qc = std::exp(lq(row, c));
    if (qc == 0.0) continue;
    kl += qc * (lq(row, c) - lp(row, c));
  }
  return std::max(kl, 0.0);
}

}  // namespace cws
