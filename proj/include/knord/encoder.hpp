#pragma once

#include "knord/prompt.hpp"
#include "knord/types.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace knord {

// Maps a token sequence to one hidden vector per token.
class SequenceEncoder {
 public:
  virtual ~SequenceEncoder() = default;
  virtual std::size_t hidden_dim() const = 0;
  virtual Matrix encode(std::span<const std::string> tokens) const = 0;
  virtual std::string name() const = 0;

  // Trainable encoders accumulate parameter gradients given dL/dhidden for
  // one sequence. Frozen encoders ignore these.
  virtual bool trainable() const { return false; }
  virtual void zero_grad() {}
  virtual void backward(std::span<const std::string> /*tokens*/, const Matrix& /*d_hidden*/) {}
  virtual std::vector<std::span<double>> parameters() { return {}; }
  virtual std::vector<std::span<double>> gradients() { return {}; }
};

// Frozen: h_i = e(t_i) + context_weight · mean_j e(t_j), where e() is a
// seeded hashed Gaussian embedding.
class StubEncoder : public SequenceEncoder {
 public:
  explicit StubEncoder(std::size_t hidden_dim = 64, std::uint64_t seed = 0,
                       double context_weight = 1.0);

  std::size_t hidden_dim() const override { return dim_; }
  Matrix encode(std::span<const std::string> tokens) const override;
  std::string name() const override { return "stub"; }

  std::vector<double> token_embedding(const std::string& token) const;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  double context_weight_;
};

// Trainable: h_i = tanh(E[t_i] + M·c) with c = mean_j E[t_j]. E starts from the
// stub embeddings and M from the identity; tokens outside the vocabulary
// share one extra row.
class TinyEncoder : public SequenceEncoder {
 public:
  TinyEncoder(Vocabulary vocabulary, std::size_t hidden_dim = 64, std::uint64_t seed = 0);

  std::size_t hidden_dim() const override { return dim_; }
  Matrix encode(std::span<const std::string> tokens) const override;
  std::string name() const override { return "tiny_trainable"; }

  bool trainable() const override { return true; }
  void zero_grad() override;
  void backward(std::span<const std::string> tokens, const Matrix& d_hidden) override;
  std::vector<std::span<double>> parameters() override;
  std::vector<std::span<double>> gradients() override;

 private:
  std::size_t row_of(const std::string& token) const;
  std::vector<double> context(std::span<const std::size_t> rows) const;

  Vocabulary vocab_;
  std::size_t dim_;
  std::vector<double> embeddings_;  // (|V| + 1) x dim
  std::vector<double> mixing_;      // dim x dim
  std::vector<double> grad_embeddings_;
  std::vector<double> grad_mixing_;
};

}  // namespace knord
