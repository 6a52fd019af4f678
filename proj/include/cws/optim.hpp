#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cws/io.hpp"
#include "cws/nn.hpp"

namespace cws {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over one parameter group, reading the gradients accumulated in the
// group's leaves.
class Adam {
 public:
  Adam(ParamStore& ps, Group group, AdamConfig cfg) : ps_(&ps), group_(group), cfg_(cfg) {
    require(cfg.lr >= 0.0, "Adam: learning rate must be non-negative");
    for (std::size_t i = 0; i < ps.entries().size(); ++i) {
      const auto& e = ps.entries()[i];
      if (e.group != group) continue;
      index_.push_back(i);
      m_.emplace_back(e.var.rows(), e.var.cols());
      v_.emplace_back(e.var.rows(), e.var.cols());
    }
  }

  void step() {
    for (std::size_t j = 0; j < index_.size(); ++j) {
      const auto& e = ps_->entries()[index_[j]];
      for (double g : e.var.grad().data()) {
        if (!std::isfinite(g)) throw NumericFault("Adam: non-finite gradient for " + e.name);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t j = 0; j < index_.size(); ++j) {
      auto& e = ps_->entries()[index_[j]];
      const Tensor& g = e.var.grad();
      Tensor& p = e.var.mutable_value();
      Tensor& m = m_[j];
      Tensor& v = v_[j];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        p[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  void save(io::ByteWriter& out) const {
    out.u64(t_);
    out.u64(m_.size());
    for (std::size_t j = 0; j < m_.size(); ++j) {
      for (double x : m_[j].data()) out.f64(x);
      for (double x : v_[j].data()) out.f64(x);
    }
  }

  void load(io::ByteReader& in) {
    t_ = in.u64();
    const std::uint64_t n = in.u64();
    if (n != m_.size()) in.fail("optimizer state has " + std::to_string(n) + " tensors, expected " + std::to_string(m_.size()));
    for (std::size_t j = 0; j < m_.size(); ++j) {
      for (double& x : m_[j].data()) x = in.f64();
      for (double& x : v_[j].data()) x = in.f64();
    }
  }

 private:
  ParamStore* ps_;
  Group group_;
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::size_t> index_;
  std::vector<Tensor> m_, v_;
};

}  // namespace cws
