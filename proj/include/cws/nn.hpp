#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "cws/autodiff.hpp"
#include "cws/rng.hpp"

namespace cws {

// Generative-model parameters are theta; inference-network parameters are phi.
enum class Group { theta, phi };

inline const char* group_prefix(Group g) { return g == Group::theta ? "theta/" : "phi/"; }

class ParamStore {
 public:
  struct Entry {
    std::string name;
    Group group;
    Var var;
  };

  Var add(const std::string& local_name, Group group, Tensor init) {
    std::string full = group_prefix(group) + local_name;
    require(!index_.contains(full), "ParamStore: duplicate parameter " + full);
    Var v = Var::parameter(std::move(init), full);
    index_.emplace(full, entries_.size());
    entries_.push_back({full, group, v});
    return v;
  }

  // Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Var add_uniform(const std::string& local_name, Group group, std::size_t rows, std::size_t cols, std::size_t fan_in,
                  Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = bound * (2.0 * rng.uniform() - 1.0);
    return add(local_name, group, std::move(t));
  }

  Var add_zeros(const std::string& local_name, Group group, std::size_t rows, std::size_t cols) {
    return add(local_name, group, Tensor(rows, cols));
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  bool contains(const std::string& full_name) const { return index_.contains(full_name); }

  Var at(const std::string& full_name) const {
    auto it = index_.find(full_name);
    require(it != index_.end(), "ParamStore: unknown parameter " + full_name);
    return entries_[it->second].var;
  }

  std::vector<Var> params(Group g) const {
    std::vector<Var> out;
    for (const auto& e : entries_)
      if (e.group == g) out.push_back(e.var);
    return out;
  }

  std::size_t count(Group g) const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.group == g) n += e.var.value().size();
    return n;
  }

  void zero_grad(Group g) {
    for (auto& e : entries_)
      if (e.group == g) e.var.zero_grad();
  }
  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

  double grad_norm(Group g) const {
    double s = 0.0;
    for (const auto& e : entries_)
      if (e.group == g) s += e.var.grad().squared_norm();
    return std::sqrt(s);
  }

  // Rescales the group's gradients so their joint L2 norm is at most max_norm.
  // Returns the norm before clipping. max_norm <= 0 disables clipping.
  double clip_grad_norm(Group g, double max_norm) {
    const double norm = grad_norm(g);
    if (max_norm > 0.0 && norm > max_norm) {
      const double f = max_norm / norm;
      for (auto& e : entries_) {
        if (e.group != g) continue;
        for (double& v : e.var.mutable_grad().data()) v *= f;
      }
    }
    return norm;
  }

  std::vector<Tensor> snapshot() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.var.value());
    return out;
  }

  void restore(const std::vector<Tensor>& values) {
    require(values.size() == entries_.size(), "ParamStore::restore: size mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      require(values[i].shape() == entries_[i].var.shape(), "ParamStore::restore: shape mismatch for " + entries_[i].name);
      entries_[i].var.mutable_value() = values[i];
    }
  }

  void fill(double v) {
    for (auto& e : entries_) e.var.mutable_value().fill(v);
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

struct Linear {
  Var weight;  // in x out
  Var bias;    // 1 x out

  static Linear make(ParamStore& ps, Group g, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    return {ps.add_uniform(name + "/w", g, in, out, in, rng), ps.add_zeros(name + "/b", g, 1, out)};
  }

  Var operator()(const Var& x) const { return add(matmul(x, weight), bias); }
  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

// Gated recurrent cell with update and reset gates.
struct GRUCell {
  Linear input;   // in -> 3H
  Var recurrent;  // H x 3H
  std::size_t hidden = 0;

  static GRUCell make(ParamStore& ps, Group g, const std::string& name, std::size_t in, std::size_t h, Rng& rng) {
    GRUCell cell;
    cell.input = Linear::make(ps, g, name + "/in", in, 3 * h, rng);
    cell.recurrent = ps.add_uniform(name + "/rec", g, h, 3 * h, h, rng);
    cell.hidden = h;
    return cell;
  }

  Var operator()(const Var& x, const Var& h) const {
    const std::size_t H = hidden;
    Var gx = input(x);
    Var gh = matmul(h, recurrent);
    Var update = sigmoid(add(slice_cols(gx, 0, H), slice_cols(gh, 0, H)));
    Var reset = sigmoid(add(slice_cols(gx, H, 2 * H), slice_cols(gh, H, 2 * H)));
    Var cand = tanh(add(slice_cols(gx, 2 * H, 3 * H), mul(reset, slice_cols(gh, 2 * H, 3 * H))));
    return add(cand, mul(update, sub(h, cand)));
  }
};

enum class Activation { tanh, softplus };

inline Var activate(const Var& x, Activation a) { return a == Activation::tanh ? tanh(x) : softplus(x); }

struct MLP {
  Linear hidden;
  Linear output;
  Activation act = Activation::tanh;

  static MLP make(ParamStore& ps, Group g, const std::string& name, std::size_t in, std::size_t width,
                  std::size_t out, Rng& rng, Activation act = Activation::tanh) {
    return {Linear::make(ps, g, name + "/h", in, width, rng), Linear::make(ps, g, name + "/o", width, out, rng), act};
  }

  Var operator()(const Var& x) const { return output(activate(hidden(x), act)); }
};

inline Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor t(labels.size(), classes);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    require(labels[r] >= 0 && static_cast<std::size_t>(labels[r]) < classes,
            "one_hot: label " + std::to_string(labels[r]) + " out of range");
    t(r, static_cast<std::size_t>(labels[r])) = 1.0;
  }
  return t;
}

}  // namespace cws
