#pragma once

#include "knord/prompt.hpp"
#include "knord/types.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace knord {

class PhraseEmbedder {
 public:
  virtual ~PhraseEmbedder() = default;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<double> embed(const std::string& phrase) const = 0;
};

// Seeded random projection of a hashed one-hot: every word maps to a fixed
// Gaussian column (entries N(0, 1/D)); a multi-word phrase is the mean of
// its word columns. Individual tokens can be pinned to explicit vectors.
class HashProjectionEmbedder : public PhraseEmbedder {
 public:
  explicit HashProjectionEmbedder(std::size_t dimension = 64, std::uint64_t seed = 0,
                                  std::uint64_t buckets = 1ULL << 20);

  void set_vector(const std::string& token, std::vector<double> vector);

  std::size_t dimension() const override { return dim_; }
  std::vector<double> embed(const std::string& phrase) const override;

 private:
  std::vector<double> word_vector(const std::string& word) const;

  std::size_t dim_;
  std::uint64_t seed_;
  std::uint64_t buckets_;
  std::unordered_map<std::string, std::vector<double>> overrides_;
};

struct RelationRepresentation {
  Uid uid = 0;
  std::vector<double> vector;  // constrained mean ++ unconstrained mean, length 2D
  std::vector<std::string> constrained_tokens;
  std::vector<std::string> unconstrained_tokens;
};

// Means the embeddings of the top-n tokens of each ranking (fewer if the
// ranking is shorter) and concatenates constrained then unconstrained.
RelationRepresentation build_representation(Uid uid, const TokenRanking& constrained,
                                            const TokenRanking& unconstrained,
                                            const PhraseEmbedder& embedder, std::size_t n = 3);

struct EmbeddedMatrix {
  Matrix rows;            // one row per representation, ascending uid
  std::vector<Uid> uids;  // row index -> uid
};

EmbeddedMatrix embed_matrix(std::vector<RelationRepresentation> representations);

// Binary cache: ASCII header line "KNORDREP 1 count=<n> dim=<D> row=<2D> encoding=f32le",
// then per row a u32le uid followed by 2D f32le values. The sidecar lists
// uid<TAB>constrained tokens<TAB>unconstrained tokens.
std::string encode_representation_cache(const std::vector<RelationRepresentation>& reps);
std::string encode_representation_sidecar(const std::vector<RelationRepresentation>& reps);
std::vector<RelationRepresentation> decode_representation_cache(const std::string& bytes);

}  // namespace knord
