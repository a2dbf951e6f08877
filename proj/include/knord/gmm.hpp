#pragma once

#include "knord/types.hpp"

#include <cstdint>
#include <vector>

namespace knord {

// Diagonal-covariance Gaussian mixture.
struct GaussianMixture {
  Matrix means;      // K x dim
  Matrix variances;  // K x dim, each >= the variance floor
  std::vector<double> weights;
  // Mean per-sample log-likelihood after each E-step of the winning restart.
  std::vector<double> log_likelihood_trace;

  std::size_t components() const { return weights.size(); }
  std::size_t dimension() const { return means.cols(); }

  // Per-row log p(x, k) for every component.
  Matrix joint_log_density(const Matrix& x) const;
  // Responsibilities; rows sum to 1.
  Matrix posteriors(const Matrix& x) const;
  double mean_log_likelihood(const Matrix& x) const;
};

struct GmmOptions {
  std::size_t components = 1;
  std::uint64_t seed = 0;
  std::size_t max_iter = 200;
  double tol = 1e-4;
  std::size_t n_init = 5;
  double variance_floor = 1e-6;
  std::size_t max_reseeds = 3;
};

struct GmmFit {
  GaussianMixture model;
  Matrix posteriors;
  std::vector<std::size_t> assignments;  // argmax posterior per row
  std::size_t iterations = 0;
  bool converged = false;
};

// EM from k-means++ seeds, best of n_init restarts by final log-likelihood.
// Stops when the per-sample log-likelihood changes by less than tol.
GmmFit fit_gmm(const Matrix& x, const GmmOptions& options);

}  // namespace knord
