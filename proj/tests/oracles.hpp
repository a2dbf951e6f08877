#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include "knord/classifier.hpp"
#include "knord/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace oracle {

// Optimal one-to-one value by enumerating every permutation of the
// zero-padded square matrix.
inline double brute_force_assignment(const knord::Matrix& m, bool maximize) {
  const std::size_t n = std::max(m.rows(), m.cols());
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = maximize ? -std::numeric_limits<double>::infinity()
                         : std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      if (perm[r] < m.cols()) total += m(r, perm[r]);
    }
    best = maximize ? std::max(best, total) : std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline double cross_entropy(const knord::Matrix& x, const std::vector<std::size_t>& y,
                            const knord::Matrix& w, const std::vector<double>& b) {
  double loss = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::vector<double> z(w.rows());
    for (std::size_t c = 0; c < w.rows(); ++c) {
      z[c] = b[c];
      for (std::size_t j = 0; j < w.cols(); ++j) z[c] += w(c, j) * x(r, j);
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    loss += (mx + std::log(s)) - z[y[r]];
  }
  return loss / static_cast<double>(x.rows());
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Largest relative error between the analytic head gradients and central
// differences of the loss above, over weights, bias and features.
inline double max_gradient_error(const knord::Matrix& x, const std::vector<std::size_t>& y,
                                 const knord::Matrix& w, const std::vector<double>& b,
                                 double h = 1e-5) {
  const auto g = knord::softmax_cross_entropy(x, y, w, b);
  double worst = 0.0;
  auto probe = [&](double& slot, double analytic, auto&& loss) {
    const double keep = slot;
    slot = keep + h;
    const double up = loss();
    slot = keep - h;
    const double down = loss();
    slot = keep;
    worst = std::max(worst, relative_error(analytic, (up - down) / (2 * h)));
  };
  knord::Matrix wm = w, xm = x;
  std::vector<double> bm = b;
  auto loss = [&] { return cross_entropy(xm, y, wm, bm); };
  for (std::size_t i = 0; i < wm.data().size(); ++i) probe(wm.data()[i], g.d_weights.data()[i], loss);
  for (std::size_t i = 0; i < bm.size(); ++i) probe(bm[i], g.d_bias[i], loss);
  for (std::size_t i = 0; i < xm.data().size(); ++i) probe(xm.data()[i], g.d_features.data()[i], loss);
  return worst;
}

}  // namespace oracle
