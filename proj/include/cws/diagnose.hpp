#pragma once

// Estimator diagnostics.
//
// The estimator study compares per-set phi-gradient estimates on an
// enumerable toy against exact gradients: wake-phi (ssws) and cws against the
// exact grad KL(p || q), REINFORCE against the exact ELBO gradient.
//
// The instability witness compares the spread of the SSWS and CWS phi losses
// across batches of a partially labeled sequence dataset, on shared particles.

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cws/config.hpp"
#include "cws/models/toy.hpp"
#include "cws/objectives.hpp"
#include "cws/oracle/toy_oracle.hpp"

namespace cws {

// Running mean and variance per component (Welford).
struct Moments {
  std::vector<double> mean, m2;
  std::size_t n = 0;

  void add(const std::vector<double>& v) {
    if (mean.empty()) {
      mean.assign(v.size(), 0.0);
      m2.assign(v.size(), 0.0);
    }
    require(v.size() == mean.size(), "Moments: dimension changed");
    ++n;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double d = v[i] - mean[i];
      mean[i] += d / static_cast<double>(n);
      m2[i] += d * (v[i] - mean[i]);
    }
  }
  double variance(std::size_t i) const { return n > 1 ? m2[i] / static_cast<double>(n - 1) : 0.0; }
  double std_error(std::size_t i) const { return std::sqrt(variance(i) / static_cast<double>(n)); }
  double total_variance() const {
    double s = 0.0;
    for (std::size_t i = 0; i < mean.size(); ++i) s += variance(i);
    return s;
  }
};

// Concatenates gradients in the key order of `layout`; a missing key is zero.
inline std::vector<double> flatten(const GradientMap& g, const oracle::Grad& layout) {
  std::vector<double> out;
  for (const auto& [k, v] : layout) {
    auto it = g.find(k);
    if (it == g.end()) {
      out.insert(out.end(), v.size(), 0.0);
    } else {
      require(it->second.size() == v.size(), "flatten: size mismatch for " + k);
      out.insert(out.end(), it->second.storage().begin(), it->second.storage().end());
    }
  }
  return out;
}

inline std::vector<double> flatten(const oracle::Grad& g) {
  std::vector<double> out;
  for (const auto& [k, v] : g) out.insert(out.end(), v.begin(), v.end());
  return out;
}

// phi-gradient of the wake-phi loss for a fresh batch of particle sets.
template <SequenceModel M>
GradientMap wake_phi_grad(M& model, const SequenceBatch& b, std::size_t K, const Rng& rng) {
  model.params().zero_grad();
  BatchParticles bp = sample_particles(model, b, K, rng);
  GradientMap g = only_group(backward(loss_q_ssws(bp)), Group::phi);
  model.params().zero_grad();
  return g;
}

template <SequenceModel M>
GradientMap cws_phi_grad(M& model, const SequenceBatch& b, std::size_t K, const Rng& rng) {
  model.params().zero_grad();
  BatchParticles bp = sample_particles(model, b, K, rng);
  GradientMap g = only_group(backward(loss_q_cws(bp)), Group::phi);
  model.params().zero_grad();
  return g;
}

// ---- toy construction from config -------------------------------------------

inline std::vector<int> parse_int_list(const std::string& key, const std::string& s, bool allow_free) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find_first_not_of(' ');
    const auto b = item.find_last_not_of(' ');
    item = a == std::string::npos ? "" : item.substr(a, b - a + 1);
    if (allow_free && item == "-") {
      out.push_back(kUnlabeled);
      continue;
    }
    int v = 0;
    auto r = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || r.ec != std::errc() || r.ptr != item.data() + item.size() || v < 0)
      throw ConfigError("config key '" + key + "': bad entry '" + item + "'");
    out.push_back(v);
  }
  return out;
}

struct ToyProblem {
  EnumerableToy toy;
  std::vector<int> x;
  std::vector<int> labels;
};

inline ToyProblem make_toy_problem(const TrainConfig& c) {
  const ToyDims dims{c.toy_classes, c.toy_z_states, c.toy_alphabet, c.toy_length};
  std::size_t table = 1;
  for (std::size_t t = 0; t < c.toy_length; ++t) {
    table *= c.toy_classes * c.toy_z_states;
    if (table > EnumerableToy::kMaxTable)
      throw ContractViolation("diagnose: toy is not enumerable (more than " + std::to_string(EnumerableToy::kMaxTable) +
                              " configurations)");
  }
  std::vector<int> x = parse_int_list("toy_x", c.toy_x, false);
  std::vector<int> labels = parse_int_list("toy_labels", c.toy_labels, true);
  if (x.size() != c.toy_length || labels.size() != c.toy_length)
    throw ConfigError("toy_x and toy_labels must have toy_length = " + std::to_string(c.toy_length) + " entries");
  for (int v : x)
    if (static_cast<std::size_t>(v) >= c.toy_alphabet) throw ConfigError("toy_x symbol " + std::to_string(v) + " outside the alphabet");
  for (int v : labels)
    if (v != kUnlabeled && static_cast<std::size_t>(v) >= c.toy_classes)
      throw ConfigError("toy_labels entry " + std::to_string(v) + " outside the classes");
  return {EnumerableToy(dims, Rng(c.toy_seed), c.toy_theta_scale, c.toy_phi_scale), std::move(x), std::move(labels)};
}

// ---- estimator study ------------------------------------------------------------

struct EstimatorCell {
  std::string estimator;  // reinforce | ssws | cws
  std::string target;     // exact gradient the estimate is compared with
  std::size_t K = 0;
  std::size_t sets = 0;
  double bias_l2 = 0.0;          // || mean estimate - exact ||
  double bias_max_abs = 0.0;     // max over components of |mean - exact|
  double max_z = 0.0;            // max over components of |mean - exact| / standard error
  std::size_t components = 0;    // components with nonzero variance
  std::size_t outside_3se = 0;   // components beyond three standard errors
  double total_variance = 0.0;   // sum of per-component variances of one set's estimate
};

inline const std::vector<std::string>& estimator_cell_columns() {
  static const std::vector<std::string> cols{"estimator", "target", "K", "sets", "bias_l2", "bias_max_abs",
                                             "max_z", "components", "outside_3se", "total_variance"};
  return cols;
}

inline nlohmann::json to_json(const EstimatorCell& c) {
  return {{"estimator", c.estimator}, {"target", c.target},       {"K", c.K},
          {"sets", c.sets},           {"bias_l2", c.bias_l2},     {"bias_max_abs", c.bias_max_abs},
          {"max_z", c.max_z},         {"components", c.components}, {"outside_3se", c.outside_3se},
          {"total_variance", c.total_variance}};
}

// One particle set per draw, so every draw is an independent estimate. The
// three estimators share draw seeds, which makes ssws and cws identical when
// nothing is supervised.
inline std::vector<EstimatorCell> estimator_study(ToyProblem& p, const std::vector<std::size_t>& Ks, std::size_t sets,
                                                  const Rng& rng) {
  require(sets >= 2, "estimator_study: need at least two sets");
  const oracle::ToyTables tb = oracle::tables(p.toy);
  const oracle::Grad wake_target = oracle::exact_phi_gradient(tb, p.x, p.labels);
  const oracle::Grad elbo_target = oracle::exact_elbo_phi_gradient(tb, p.x, p.labels);
  const SequenceBatch b = toy_batch({p.x}, {p.labels});
  std::vector<EstimatorCell> out;
  for (std::size_t K : Ks) {
    for (const std::string name : {"reinforce", "ssws", "cws"}) {
      const oracle::Grad& target = name == "reinforce" ? elbo_target : wake_target;
      Moments mom;
      for (std::size_t i = 0; i < sets; ++i) {
        const Rng r = rng.fork({K, i});
        GradientMap g = name == "reinforce" ? reinforce_phi_grad(p.toy, b, K, r)
                        : name == "ssws"    ? wake_phi_grad(p.toy, b, K, r)
                                            : cws_phi_grad(p.toy, b, K, r);
        mom.add(flatten(g, target));
      }
      const std::vector<double> ex = flatten(target);
      EstimatorCell c;
      c.estimator = name;
      c.target = name == "reinforce" ? "grad ELBO" : "grad KL(p||q)";
      c.K = K;
      c.sets = sets;
      double sq = 0.0;
      for (std::size_t j = 0; j < ex.size(); ++j) {
        const double d = std::abs(mom.mean[j] - ex[j]);
        sq += d * d;
        c.bias_max_abs = std::max(c.bias_max_abs, d);
        const double se = mom.std_error(j);
        if (se == 0.0) continue;
        ++c.components;
        c.max_z = std::max(c.max_z, d / se);
        if (d > 3.0 * se) ++c.outside_3se;
      }
      c.bias_l2 = std::sqrt(sq);
      c.total_variance = mom.total_variance();
      out.push_back(c);
    }
  }
  return out;
}

// ---- instability witness ----------------------------------------------------------

struct CvWitness {
  double alpha = 0.0;
  std::size_t batches = 0;
  double ssws_mean = 0.0, ssws_std = 0.0, ssws_cv = 0.0;
  double cws_mean = 0.0, cws_std = 0.0, cws_cv = 0.0;
  double ratio = 0.0;  // ssws_cv / cws_cv
};

inline nlohmann::json to_json(const CvWitness& w) {
  return {{"alpha", w.alpha},         {"batches", w.batches},   {"ssws_mean", w.ssws_mean},
          {"ssws_std", w.ssws_std},   {"ssws_cv", w.ssws_cv},   {"cws_mean", w.cws_mean},
          {"cws_std", w.cws_std},     {"cws_cv", w.cws_cv},     {"ratio", w.ratio}};
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

// Coefficient of variation of the per-batch phi losses (already divided by
// batch size) of SSWS at each alpha and of CWS, over `batches` consecutive
// batches from `batch_of`. Both losses use the same particles.
template <SequenceModel M, class BatchOf>
std::vector<CvWitness> cv_witness(const M& model, BatchOf&& batch_of, std::size_t batches, std::size_t K,
                                  const std::vector<double>& alphas, const Rng& rng) {
  require(batches >= 2, "cv_witness: need at least two batches");
  std::vector<std::vector<double>> ssws(alphas.size());
  std::vector<double> cws;
  for (std::size_t i = 0; i < batches; ++i) {
    const SequenceBatch b = batch_of(i);
    BatchParticles bp = sample_particles(model, b, K, rng.fork(i));
    cws.push_back(cws_losses(bp, b).loss_phi.item());
    for (std::size_t a = 0; a < alphas.size(); ++a) ssws[a].push_back(ssws_losses(bp, b, alphas[a]).loss_phi.item());
  }
  const auto [cm, cs] = mean_std(cws);
  std::vector<CvWitness> out;
  for (std::size_t a = 0; a < alphas.size(); ++a) {
    const auto [sm, ss] = mean_std(ssws[a]);
    CvWitness w;
    w.alpha = alphas[a];
    w.batches = batches;
    w.ssws_mean = sm;
    w.ssws_std = ss;
    w.ssws_cv = ss / std::abs(sm);
    w.cws_mean = cm;
    w.cws_std = cs;
    w.cws_cv = cs / std::abs(cm);
    w.ratio = w.ssws_cv / w.cws_cv;
    out.push_back(w);
  }
  return out;
}

}  // namespace cws
