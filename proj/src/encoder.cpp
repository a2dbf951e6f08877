#include "knord/encoder.hpp"

#include "knord/rng.hpp"

#include <cmath>

namespace knord {

namespace {

std::vector<double> hashed_gaussian(const std::string& token, std::uint64_t seed,
                                    std::size_t dim) {
  Rng rng(hash_combine(seed, fnv1a(token)));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<double> v(dim);
  for (double& x : v) x = rng.normal() * scale;
  return v;
}

}  // namespace

StubEncoder::StubEncoder(std::size_t hidden_dim, std::uint64_t seed, double context_weight)
    : dim_(hidden_dim), seed_(seed), context_weight_(context_weight) {
  if (dim_ == 0) throw Error("encoder hidden dimension must be positive");
}

std::vector<double> StubEncoder::token_embedding(const std::string& token) const {
  return hashed_gaussian(token, seed_, dim_);
}

Matrix StubEncoder::encode(std::span<const std::string> tokens) const {
  Matrix h(tokens.size(), dim_);
  std::vector<double> ctx(dim_, 0.0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto e = token_embedding(tokens[i]);
    std::copy(e.begin(), e.end(), h.row(i).begin());
    for (std::size_t k = 0; k < dim_; ++k) ctx[k] += e[k];
  }
  if (tokens.empty()) return h;
  const double w = context_weight_ / static_cast<double>(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i)
    for (std::size_t k = 0; k < dim_; ++k) h(i, k) += w * ctx[k];
  return h;
}

TinyEncoder::TinyEncoder(Vocabulary vocabulary, std::size_t hidden_dim, std::uint64_t seed)
    : vocab_(std::move(vocabulary)), dim_(hidden_dim) {
  if (dim_ == 0) throw Error("encoder hidden dimension must be positive");
  const std::size_t rows = vocab_.size() + 1;
  embeddings_.resize(rows * dim_);
  for (std::size_t r = 0; r < vocab_.size(); ++r) {
    const auto e = hashed_gaussian(vocab_.at(r), seed, dim_);
    std::copy(e.begin(), e.end(), embeddings_.begin() + static_cast<std::ptrdiff_t>(r * dim_));
  }
  mixing_.assign(dim_ * dim_, 0.0);
  for (std::size_t k = 0; k < dim_; ++k) mixing_[k * dim_ + k] = 1.0;
  grad_embeddings_.assign(embeddings_.size(), 0.0);
  grad_mixing_.assign(mixing_.size(), 0.0);
}

std::size_t TinyEncoder::row_of(const std::string& token) const {
  auto id = vocab_.find(token);
  return id ? *id : vocab_.size();
}

std::vector<double> TinyEncoder::context(std::span<const std::size_t> rows) const {
  std::vector<double> c(dim_, 0.0);
  for (std::size_t r : rows) {
    const double* e = embeddings_.data() + r * dim_;
    for (std::size_t k = 0; k < dim_; ++k) c[k] += e[k];
  }
  if (!rows.empty()) {
    for (double& x : c) x /= static_cast<double>(rows.size());
  }
  return c;
}

Matrix TinyEncoder::encode(std::span<const std::string> tokens) const {
  std::vector<std::size_t> rows;
  for (const auto& t : tokens) rows.push_back(row_of(t));
  const auto c = context(rows);
  std::vector<double> mixed(dim_, 0.0);
  for (std::size_t a = 0; a < dim_; ++a)
    for (std::size_t b = 0; b < dim_; ++b) mixed[a] += mixing_[a * dim_ + b] * c[b];
  Matrix h(tokens.size(), dim_);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* e = embeddings_.data() + rows[i] * dim_;
    for (std::size_t k = 0; k < dim_; ++k) h(i, k) = std::tanh(e[k] + mixed[k]);
  }
  return h;
}

void TinyEncoder::zero_grad() {
  std::fill(grad_embeddings_.begin(), grad_embeddings_.end(), 0.0);
  std::fill(grad_mixing_.begin(), grad_mixing_.end(), 0.0);
}

void TinyEncoder::backward(std::span<const std::string> tokens, const Matrix& d_hidden) {
  if (tokens.empty()) return;
  std::vector<std::size_t> rows;
  for (const auto& t : tokens) rows.push_back(row_of(t));
  const Matrix h = encode(tokens);
  const auto c = context(rows);

  std::vector<double> d_pre_sum(dim_, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double* ge = grad_embeddings_.data() + rows[i] * dim_;
    for (std::size_t k = 0; k < dim_; ++k) {
      const double d_pre = d_hidden(i, k) * (1.0 - h(i, k) * h(i, k));
      ge[k] += d_pre;
      d_pre_sum[k] += d_pre;
    }
  }
  // mixed = M c is shared by every position.
  std::vector<double> d_c(dim_, 0.0);
  for (std::size_t a = 0; a < dim_; ++a) {
    for (std::size_t b = 0; b < dim_; ++b) {
      grad_mixing_[a * dim_ + b] += d_pre_sum[a] * c[b];
      d_c[b] += mixing_[a * dim_ + b] * d_pre_sum[a];
    }
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (std::size_t r : rows) {
    double* ge = grad_embeddings_.data() + r * dim_;
    for (std::size_t k = 0; k < dim_; ++k) ge[k] += d_c[k] * inv;
  }
}

std::vector<std::span<double>> TinyEncoder::parameters() {
  return {std::span<double>(embeddings_), std::span<double>(mixing_)};
}

std::vector<std::span<double>> TinyEncoder::gradients() {
  return {std::span<double>(grad_embeddings_), std::span<double>(grad_mixing_)};
}

}  // namespace knord
