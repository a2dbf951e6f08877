#pragma once

#include "knord/corpus.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace knord {

inline constexpr const char* kMaskToken = "[MASK]";

// Sentence ++ head tokens ++ mask slots ++ tail tokens.
struct PromptText {
  std::vector<std::string> tokens;
  std::vector<std::size_t> mask_positions;
};

PromptText build_prompt_text(const RelationInstance& instance, std::size_t n_masks);

// "per:city_of_birth" -> {city, of, birth}; "P361:partOf" -> {part, of}.
// Dataset prefixes are dropped, "_" / "-" / camel case split, lowercased.
std::vector<std::string> normalize_relation_name(const std::string& name);

enum class MaskOrigin { relation_mask, random_mask };

struct MaskedExample {
  Uid uid = 0;
  std::vector<std::string> tokens;
  std::vector<std::size_t> mask_positions;  // strictly increasing
  std::vector<std::string> mask_targets;    // aligned with mask_positions
  std::vector<MaskOrigin> origins;          // aligned with mask_positions

  std::size_t relation_mask_count() const;
};

// One example per instance: relation-name masks in the template plus
// ⌊mask_rate·|sentence|⌋ random sentence masks outside the entity spans.
std::vector<MaskedExample> make_training_batch(std::span<const RelationInstance> instances,
                                               double mask_rate, std::uint64_t seed);

class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  // Adds a token if absent; returns its index.
  std::size_t add(const std::string& token);
  std::optional<std::size_t> find(const std::string& token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& at(std::size_t i) const { return tokens_.at(i); }
  std::size_t size() const { return tokens_.size(); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Sentence tokens of every instance in uid order, then relation-name words
// of the given classes. The mask token is never a vocabulary item.
Vocabulary build_vocabulary(std::span<const RelationInstance> corpus,
                            std::span<const std::string> relation_classes);

struct MlmTrainReport {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  std::vector<double> train_loss;
  std::vector<double> heldout_perplexity;
};

// Whole-word masked language model. score_masks returns one score vector of
// length |vocabulary| per mask position; higher is more likely.
class MlmBackend {
 public:
  virtual ~MlmBackend() = default;
  virtual const Vocabulary& vocabulary() const = 0;
  virtual std::vector<std::vector<double>> score_masks(
      std::span<const std::string> tokens, std::span<const std::size_t> mask_positions) const = 0;
  virtual bool trainable() const { return false; }
  virtual MlmTrainReport train(std::span<const MaskedExample> examples,
                               std::span<const MaskedExample> heldout);
  virtual std::string name() const = 0;
};

// Context-free scores: a fixed hash-seeded value in [0, 1) per token,
// overridable per token.
class StubMlm : public MlmBackend {
 public:
  StubMlm(Vocabulary vocabulary, std::uint64_t seed);

  void set_score(const std::string& token, double score);

  const Vocabulary& vocabulary() const override { return vocab_; }
  std::vector<std::vector<double>> score_masks(
      std::span<const std::string> tokens,
      std::span<const std::size_t> mask_positions) const override;
  std::string name() const override { return "stub"; }

 private:
  Vocabulary vocab_;
  std::vector<double> scores_;
};

struct TinyMlmOptions {
  std::size_t dim = 32;
  std::size_t window = 3;
  std::size_t max_epochs = 30;
  std::size_t patience = 2;
  std::size_t batch_size = 32;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
};

// Small trainable model: each slot's context is the mean input embedding of
// the whole sequence blended with a local window, followed by a softmax
// output layer over the vocabulary. Scores are output probabilities.
class TinyMlm : public MlmBackend {
 public:
  TinyMlm(Vocabulary vocabulary, TinyMlmOptions options);

  const Vocabulary& vocabulary() const override { return vocab_; }
  std::vector<std::vector<double>> score_masks(
      std::span<const std::string> tokens,
      std::span<const std::size_t> mask_positions) const override;
  bool trainable() const override { return true; }
  // Adam on masked-token cross-entropy; early stops on held-out perplexity
  // and restores the best epoch's weights.
  MlmTrainReport train(std::span<const MaskedExample> examples,
                       std::span<const MaskedExample> heldout) override;
  std::string name() const override { return "tiny_trainable"; }

  // Mean negative log-likelihood of the masked targets.
  double mean_nll(std::span<const MaskedExample> examples) const;

 private:
  struct Params {
    std::vector<double> input;   // |V| x dim
    std::vector<double> output;  // |V| x dim
    std::vector<double> bias;    // |V|
  };

  std::vector<double> context(std::span<const std::string> tokens,
                              std::span<const std::size_t> mask_positions, std::size_t slot,
                              std::vector<std::pair<std::size_t, double>>* weights) const;
  std::vector<double> logits(const std::vector<double>& ctx) const;

  Vocabulary vocab_;
  TinyMlmOptions options_;
  Params params_;
};

// Holds out every instance of `count` randomly chosen relations (never the
// negative class) for early stopping. Returns {train, heldout}.
std::pair<std::vector<RelationInstance>, std::vector<RelationInstance>> split_heldout_relations(
    std::span<const RelationInstance> labeled, std::size_t count,
    const std::optional<std::string>& negative_class, std::uint64_t seed);

enum class RankingMode { constrained, unconstrained };

struct TokenScore {
  std::string token;
  double score = 0.0;
  bool operator==(const TokenScore&) const = default;
};

struct TokenRanking {
  RankingMode mode = RankingMode::unconstrained;
  std::vector<TokenScore> entries;  // scores non-increasing, tokens unique
};

// Single-mask inference restricted to the instance's own (deduplicated) tokens.
// top_k = 0 keeps every candidate.
TokenRanking rank_tokens_constrained(const RelationInstance& instance, const MlmBackend& backend,
                                     std::size_t top_k = 0);
// Single-mask inference over the whole vocabulary. Ties keep vocabulary order.
TokenRanking rank_tokens_unconstrained(const RelationInstance& instance,
                                       const MlmBackend& backend, std::size_t top_k = 0);

std::string ranking_mode_name(RankingMode mode);

}  // namespace knord
