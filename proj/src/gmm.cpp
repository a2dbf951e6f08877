#include "knord/gmm.hpp"

#include "knord/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace knord {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
// Responsibility mass below this marks a component as collapsed.
constexpr double kEmptyMass = 1e-6;

double log_sum_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::vector<double> column_variance(const Matrix& x, double floor) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) mean[c] += x(r, c);
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) var[c] += (x(r, c) - mean[c]) * (x(r, c) - mean[c]);
  for (double& v : var) v = std::max(v / static_cast<double>(n), floor);
  return var;
}

// k-means++ seeding: first center uniform, then D^2-weighted draws.
Matrix seed_means(const Matrix& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.rows();
  Matrix means(k, x.cols());
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.index(n);
  for (std::size_t c = 0; c < k; ++c) {
    std::copy(x.row(pick).begin(), x.row(pick).end(), means.row(c).begin());
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      nearest[r] = std::min(nearest[r], sq_dist(x.row(r), means.row(c)));
      total += nearest[r];
    }
    if (c + 1 == k) break;
    if (total <= 0.0) {
      pick = rng.index(n);
      continue;
    }
    double u = rng.uniform() * total;
    pick = n - 1;
    for (std::size_t r = 0; r < n; ++r) {
      u -= nearest[r];
      if (u < 0.0) {
        pick = r;
        break;
      }
    }
  }
  return means;
}

// Returns mean per-sample log-likelihood and fills responsibilities.
double e_step(const GaussianMixture& g, const Matrix& x, Matrix& resp) {
  resp = g.joint_log_density(x);
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = resp.row(r);
    const double lse = log_sum_exp(row);
    total += lse;
    for (double& v : row) v = std::exp(v - lse);
  }
  return total / static_cast<double>(x.rows());
}

struct Attempt {
  GaussianMixture model;
  Matrix resp;
  std::size_t iterations = 0;
  bool converged = false;
};

std::optional<Attempt> run_em(const Matrix& x, const GmmOptions& opt, std::uint64_t seed) {
  const std::size_t n = x.rows(), d = x.cols(), k = opt.components;
  Rng rng(seed);
  const auto global_var = column_variance(x, opt.variance_floor);

  Attempt a;
  a.model.means = seed_means(x, k, rng);
  a.model.variances = Matrix(k, d);
  for (std::size_t c = 0; c < k; ++c)
    std::copy(global_var.begin(), global_var.end(), a.model.variances.row(c).begin());
  a.model.weights.assign(k, 1.0 / static_cast<double>(k));

  std::size_t reseeds = 0;
  std::vector<double> mass(k);
  auto& trace = a.model.log_likelihood_trace;
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    const double ll = e_step(a.model, x, a.resp);
    trace.push_back(ll);
    a.iterations = it + 1;
    if (trace.size() >= 2 && std::abs(ll - trace[trace.size() - 2]) < opt.tol) {
      a.converged = true;
      return a;
    }

    std::fill(mass.begin(), mass.end(), 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < k; ++c) mass[c] += a.resp(r, c);

    bool reseeded = false;
    for (std::size_t c = 0; c < k; ++c) {
      if (mass[c] >= kEmptyMass) continue;
      if (++reseeds > opt.max_reseeds) return std::nullopt;
      // Re-seed from the row worst explained by the current mixture.
      const Matrix joint = a.model.joint_log_density(x);
      std::size_t worst = 0;
      double worst_ll = std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < n; ++r) {
        const double l = log_sum_exp(joint.row(r));
        if (l < worst_ll) {
          worst_ll = l;
          worst = r;
        }
      }
      std::copy(x.row(worst).begin(), x.row(worst).end(), a.model.means.row(c).begin());
      std::copy(global_var.begin(), global_var.end(), a.model.variances.row(c).begin());
      a.model.weights[c] = 1.0 / static_cast<double>(k);
      reseeded = true;
    }
    if (reseeded) {
      double s = 0.0;
      for (double w : a.model.weights) s += w;
      for (double& w : a.model.weights) w /= s;
      // A re-seed is a fresh start; the monotone trace restarts with it.
      trace.clear();
      continue;
    }

    for (std::size_t c = 0; c < k; ++c) {
      auto mean = a.model.means.row(c);
      auto var = a.model.variances.row(c);
      std::fill(mean.begin(), mean.end(), 0.0);
      std::fill(var.begin(), var.end(), 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        const double w = a.resp(r, c);
        if (w == 0.0) continue;
        for (std::size_t j = 0; j < d; ++j) mean[j] += w * x(r, j);
      }
      for (double& m : mean) m /= mass[c];
      for (std::size_t r = 0; r < n; ++r) {
        const double w = a.resp(r, c);
        if (w == 0.0) continue;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = x(r, j) - mean[j];
          var[j] += w * diff * diff;
        }
      }
      for (double& v : var) v = std::max(v / mass[c], opt.variance_floor);
      a.model.weights[c] = mass[c] / static_cast<double>(n);
    }
  }
  trace.push_back(e_step(a.model, x, a.resp));
  return a;
}

}  // namespace

Matrix GaussianMixture::joint_log_density(const Matrix& x) const {
  const std::size_t k = components(), d = dimension();
  if (x.cols() != d) throw Error("data dimension does not match the mixture");
  std::vector<double> log_norm(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += std::log(variances(c, j));
    log_norm[c] = std::log(weights[c]) - 0.5 * (static_cast<double>(d) * kLog2Pi + s);
  }
  Matrix out(x.rows(), k);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      double q = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = x(r, j) - means(c, j);
        q += diff * diff / variances(c, j);
      }
      out(r, c) = log_norm[c] - 0.5 * q;
    }
  }
  return out;
}

Matrix GaussianMixture::posteriors(const Matrix& x) const {
  Matrix resp;
  e_step(*this, x, resp);
  return resp;
}

double GaussianMixture::mean_log_likelihood(const Matrix& x) const {
  Matrix resp;
  return e_step(*this, x, resp);
}

GmmFit fit_gmm(const Matrix& x, const GmmOptions& opt) {
  if (opt.components == 0) throw Error("mixture needs at least one component");
  if (x.rows() < opt.components) {
    throw Error("mixture needs at least as many rows (" + std::to_string(x.rows()) +
                ") as components (" + std::to_string(opt.components) + ")");
  }
  std::optional<Attempt> best;
  for (std::size_t i = 0; i < std::max<std::size_t>(1, opt.n_init); ++i) {
    auto attempt = run_em(x, opt, hash_combine(opt.seed, i));
    if (!attempt) continue;
    if (!best || attempt->model.log_likelihood_trace.back() >
                     best->model.log_likelihood_trace.back()) {
      best = std::move(attempt);
    }
  }
  if (!best) {
    throw Error("mixture fit failed: components kept collapsing after " +
                std::to_string(opt.max_reseeds) + " re-seeds");
  }
  GmmFit fit;
  fit.model = std::move(best->model);
  fit.posteriors = std::move(best->resp);
  fit.iterations = best->iterations;
  fit.converged = best->converged;
  fit.assignments.resize(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = fit.posteriors.row(r);
    fit.assignments[r] =
        static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return fit;
}

}  // namespace knord
