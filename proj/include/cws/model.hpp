#pragma once

// Common vocabulary for latent-variable models over labeled sequences.
//
// Rows are laid out particle-major within each sequence: row n = b * K + k
// for sequence b and particle k. Inference runs ancestrally through time; at
// each step a LatentChooser decides the value of every latent (sampled,
// greedy, or forced to given values). Supervised steps are clamped to their
// label after the chooser runs, but q(y_t) is always evaluated.

#include <concepts>
#include <cstddef>
#include <vector>

#include "cws/autodiff.hpp"
#include "cws/data.hpp"
#include "cws/distributions.hpp"
#include "cws/rng.hpp"

namespace cws {

enum class Site { y, z };

class LatentChooser {
 public:
  virtual ~LatentChooser() = default;
  virtual std::vector<int> choose(std::size_t t, Site site, const Categorical& q) = 0;
  virtual Var choose(std::size_t t, const DiagGaussian& q) = 0;
};

// Ancestral sampling from q with one counter-based stream per row.
class AncestralChooser final : public LatentChooser {
 public:
  AncestralChooser(const Rng& base, std::size_t rows, bool reparameterize = false) : reparameterize_(reparameterize) {
    streams_.reserve(rows);
    for (std::size_t n = 0; n < rows; ++n) streams_.push_back(base.fork(n));
  }

  std::vector<int> choose(std::size_t, Site, const Categorical& q) override { return q.sample(streams_); }

  Var choose(std::size_t, const DiagGaussian& q) override {
    return reparameterize_ ? q.rsample(streams_) : Var::constant(q.sample(streams_));
  }

 private:
  std::vector<Rng> streams_;
  bool reparameterize_;
};

// Mode of each conditional: argmax for categoricals, the mean for Gaussians.
class GreedyChooser final : public LatentChooser {
 public:
  std::vector<int> choose(std::size_t, Site, const Categorical& q) override { return q.argmax(); }
  Var choose(std::size_t, const DiagGaussian& q) override { return detach(q.mean()); }
};

// Replays fixed values, used to score given configurations under q.
class ForcedChooser final : public LatentChooser {
 public:
  ForcedChooser(std::vector<std::vector<int>> y, std::vector<std::vector<int>> z_discrete, std::vector<Tensor> z_continuous)
      : y_(std::move(y)), zd_(std::move(z_discrete)), zc_(std::move(z_continuous)) {}

  std::vector<int> choose(std::size_t t, Site site, const Categorical& q) override {
    const auto& src = site == Site::y ? y_ : zd_;
    require(t < src.size() && src[t].size() == q.batch(), "ForcedChooser: no forced value for this step");
    return src[t];
  }
  Var choose(std::size_t t, const DiagGaussian& q) override {
    require(t < zc_.size() && zc_[t].rows() == q.batch(), "ForcedChooser: no forced z for this step");
    return Var::constant(zc_[t]);
  }

 private:
  std::vector<std::vector<int>> y_;
  std::vector<std::vector<int>> zd_;
  std::vector<Tensor> zc_;
};

struct InferenceTrace {
  std::size_t rows = 0;
  std::size_t length = 0;
  std::size_t particles = 1;
  std::vector<std::vector<int>> y;          // [t][n], clamped where supervised
  std::vector<std::vector<bool>> supervised;  // [t][n]
  std::vector<Var> z;                       // [t] rows x D_z; discrete z stored as its index
  std::vector<std::vector<int>> z_index;    // [t][n] for discrete z
  std::vector<Var> q_y_logits;              // [t] rows x C
  std::vector<Var> log_q_y;                 // [t] rows x 1
  std::vector<Var> log_q_z;                 // [t] rows x 1, undefined when the model has no z
};

struct GenerativeTrace {
  std::vector<Var> log_p_steps;  // [t] rows x 1
  Var log_p;                     // rows x 1
};

// Row n of the expanded batch belongs to sequence n / K.
inline std::vector<std::size_t> particle_rows(std::size_t batch, std::size_t K) {
  std::vector<std::size_t> idx(batch * K);
  for (std::size_t n = 0; n < idx.size(); ++n) idx[n] = n / K;
  return idx;
}

inline std::vector<int> expand_labels(const std::vector<int>& per_seq, std::size_t K) {
  std::vector<int> out(per_seq.size() * K);
  for (std::size_t n = 0; n < out.size(); ++n) out[n] = per_seq[n / K];
  return out;
}

// Clamp chosen values to labels where supervised; returns the supervision mask.
inline std::vector<bool> clamp_to_labels(std::vector<int>& chosen, const std::vector<int>& labels, std::size_t K,
                                         std::size_t classes) {
  std::vector<bool> mask(chosen.size(), false);
  for (std::size_t n = 0; n < chosen.size(); ++n) {
    const int y = labels[n / K];
    if (y != kUnlabeled) {
      require(y >= 0 && static_cast<std::size_t>(y) < classes, "label " + std::to_string(y) + " out of range");
      chosen[n] = y;
      mask[n] = true;
    }
  }
  return mask;
}

inline Var broadcast_rows(const Var& row, std::size_t rows) {
  std::vector<std::size_t> idx(rows, 0);
  return gather_rows(row, idx);
}

template <class M>
concept SequenceModel = requires(const M& m, const SequenceBatch& b, std::size_t K, LatentChooser& ch,
                                 const InferenceTrace& tr) {
  { m.num_classes() } -> std::convertible_to<std::size_t>;
  { m.infer(b, K, ch) } -> std::same_as<InferenceTrace>;
  { m.log_joint(b, K, tr) } -> std::same_as<GenerativeTrace>;
};

// Single-step models whose class variable can be enumerated (M1+M2 baseline).
template <class M>
concept StaticModel = SequenceModel<M> && requires(const M& m, const Tensor& x, std::span<const int> y, LatentChooser& ch) {
  { m.class_logits(x) } -> std::same_as<Var>;
  { m.elbo_given_class(x, y, ch) } -> std::same_as<Var>;
};

}  // namespace cws
