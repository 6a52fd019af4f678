#pragma once

// Gaussian-emission HMM references: scaled forward-backward posteriors and
// the stationary distribution as the leading left eigenvector.

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "cws/data.hpp"

namespace oracle {

inline std::vector<double> stationary_eigen(const cws::Tensor& transition) {
  const Eigen::Index n = static_cast<Eigen::Index>(transition.rows());
  Eigen::MatrixXd At(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) At(j, i) = transition(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  Eigen::EigenSolver<Eigen::MatrixXd> es(At);
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < n; ++k)
    if (std::abs(es.eigenvalues()[k] - 1.0) < std::abs(es.eigenvalues()[best] - 1.0)) best = k;
  Eigen::VectorXd v = es.eigenvectors().col(best).real();
  v /= v.sum();
  return {v.data(), v.data() + n};
}

inline double gaussian_density(const cws::HmmSpec& spec, std::size_t state, std::span<const double> x) {
  double lp = 0.0;
  for (std::size_t d = 0; d < spec.obs_dim; ++d) {
    const double s = spec.stds(state, d);
    const double u = (x[d] - spec.means(state, d)) / s;
    lp += -0.5 * u * u - std::log(s) - 0.5 * std::log(2.0 * M_PI);
  }
  return std::exp(lp);
}

// Posterior marginals p(y_t | x_{1:T}) for each step, C entries per step.
inline std::vector<std::vector<double>> forward_backward(const cws::HmmSpec& spec, const cws::Tensor& x) {
  const std::size_t T = x.rows(), C = spec.states;
  std::vector<std::vector<double>> a(T, std::vector<double>(C)), b(T, std::vector<double>(C, 1.0));
  std::vector<double> scale(T);
  for (std::size_t t = 0; t < T; ++t) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      double prior = 0.0;
      if (t == 0) {
        prior = spec.initial(0, c);
      } else {
        for (std::size_t p = 0; p < C; ++p) prior += a[t - 1][p] * spec.transition(p, c);
      }
      a[t][c] = prior * gaussian_density(spec, c, x.row_span(t));
      s += a[t][c];
    }
    scale[t] = s;
    for (double& v : a[t]) v /= s;
  }
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < C; ++n) s += spec.transition(c, n) * gaussian_density(spec, n, x.row_span(t + 1)) * b[t + 1][n];
      b[t][c] = s / scale[t + 1];
    }
  }
  std::vector<std::vector<double>> post(T, std::vector<double>(C));
  for (std::size_t t = 0; t < T; ++t) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += post[t][c] = a[t][c] * b[t][c];
    for (double& v : post[t]) v /= s;
  }
  return post;
}

}  // namespace oracle
