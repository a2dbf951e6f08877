#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace knord {

// Adam with decoupled weight decay over one flat parameter buffer.
class AdamW {
 public:
  AdamW(std::size_t size, double learning_rate, double weight_decay = 0.0)
      : m_(size, 0.0), v_(size, 0.0), lr_(learning_rate), decay_(weight_decay) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (1 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1 - b2) * grad[i] * grad[i];
      params[i] -= lr_ * ((m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps) + decay_ * params[i]);
    }
  }

 private:
  std::vector<double> m_, v_;
  double lr_;
  double decay_;
  std::size_t t_ = 0;
};

// Scales every buffer so their joint L2 norm is at most max_norm. Returns the
// norm before clipping.
inline double clip_global_norm(std::span<const std::span<double>> grads, double max_norm) {
  double sq = 0.0;
  for (auto g : grads)
    for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto g : grads)
      for (double& x : g) x *= s;
  }
  return norm;
}

}  // namespace knord
