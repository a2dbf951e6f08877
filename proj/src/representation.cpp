#include "knord/representation.hpp"

#include "knord/io.hpp"
#include "knord/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace knord {

HashProjectionEmbedder::HashProjectionEmbedder(std::size_t dimension, std::uint64_t seed,
                                               std::uint64_t buckets)
    : dim_(dimension), seed_(seed), buckets_(buckets) {
  if (dim_ == 0) throw Error("embedding dimension must be positive");
  if (buckets_ == 0) throw Error("embedder needs at least one bucket");
}

void HashProjectionEmbedder::set_vector(const std::string& token, std::vector<double> vector) {
  if (vector.size() != dim_) throw Error("override vector has the wrong dimension");
  overrides_[token] = std::move(vector);
}

std::vector<double> HashProjectionEmbedder::word_vector(const std::string& word) const {
  if (auto it = overrides_.find(word); it != overrides_.end()) return it->second;
  const std::uint64_t bucket = fnv1a(word) % buckets_;
  Rng rng(hash_combine(seed_, bucket));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
  std::vector<double> v(dim_);
  for (double& x : v) x = rng.normal() * scale;
  return v;
}

std::vector<double> HashProjectionEmbedder::embed(const std::string& phrase) const {
  if (overrides_.contains(phrase)) return overrides_.at(phrase);
  std::istringstream in(phrase);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  if (words.size() <= 1) return word_vector(phrase);
  std::vector<double> out(dim_, 0.0);
  for (const auto& w : words) {
    const auto v = word_vector(w);
    for (std::size_t k = 0; k < dim_; ++k) out[k] += v[k];
  }
  for (double& x : out) x /= static_cast<double>(words.size());
  return out;
}

namespace {

std::vector<double> mean_of_top(const TokenRanking& ranking, const PhraseEmbedder& embedder,
                                std::size_t n, std::vector<std::string>& used) {
  const std::size_t take = std::min(n, ranking.entries.size());
  std::vector<double> mean(embedder.dimension(), 0.0);
  for (std::size_t i = 0; i < take; ++i) {
    used.push_back(ranking.entries[i].token);
    const auto z = embedder.embed(ranking.entries[i].token);
    if (z.size() != mean.size()) throw Error("embedder returned the wrong dimension");
    for (std::size_t k = 0; k < z.size(); ++k) mean[k] += z[k];
  }
  for (double& x : mean) x /= static_cast<double>(take);
  return mean;
}

}  // namespace

RelationRepresentation build_representation(Uid uid, const TokenRanking& constrained,
                                            const TokenRanking& unconstrained,
                                            const PhraseEmbedder& embedder, std::size_t n) {
  if (n == 0) throw Error("need at least one top token per ranking");
  if (constrained.entries.empty()) {
    throw Error("instance " + std::to_string(uid) + ": empty constrained ranking");
  }
  if (unconstrained.entries.empty()) {
    throw Error("instance " + std::to_string(uid) + ": empty unconstrained ranking");
  }
  RelationRepresentation rep;
  rep.uid = uid;
  rep.vector = mean_of_top(constrained, embedder, n, rep.constrained_tokens);
  const auto second = mean_of_top(unconstrained, embedder, n, rep.unconstrained_tokens);
  rep.vector.insert(rep.vector.end(), second.begin(), second.end());
  return rep;
}

EmbeddedMatrix embed_matrix(std::vector<RelationRepresentation> reps) {
  std::sort(reps.begin(), reps.end(), [](const auto& a, const auto& b) { return a.uid < b.uid; });
  EmbeddedMatrix out;
  if (reps.empty()) return out;
  const std::size_t width = reps.front().vector.size();
  out.rows = Matrix(reps.size(), width);
  for (std::size_t r = 0; r < reps.size(); ++r) {
    if (r > 0 && reps[r].uid == reps[r - 1].uid) {
      throw Error("duplicate representation for uid " + std::to_string(reps[r].uid));
    }
    if (reps[r].vector.size() != width) {
      throw Error("representation dimension mismatch at uid " + std::to_string(reps[r].uid));
    }
    std::copy(reps[r].vector.begin(), reps[r].vector.end(), out.rows.row(r).begin());
    out.uids.push_back(reps[r].uid);
  }
  return out;
}

std::string encode_representation_cache(const std::vector<RelationRepresentation>& reps) {
  const std::size_t width = reps.empty() ? 0 : reps.front().vector.size();
  std::string out = "KNORDREP 1 count=" + std::to_string(reps.size()) +
                    " dim=" + std::to_string(width / 2) + " row=" + std::to_string(width) +
                    " encoding=f32le\n";
  for (const auto& rep : reps) {
    if (rep.vector.size() != width) throw Error("representation dimension mismatch");
    append_u32le(out, rep.uid);
    for (double x : rep.vector) append_f32le(out, x);
  }
  return out;
}

std::string encode_representation_sidecar(const std::vector<RelationRepresentation>& reps) {
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& t : v) s += (s.empty() ? "" : " ") + t;
    return s;
  };
  std::string out = "uid\tconstrained\tunconstrained\n";
  for (const auto& rep : reps) {
    out += std::to_string(rep.uid) + "\t" + join(rep.constrained_tokens) + "\t" +
           join(rep.unconstrained_tokens) + "\n";
  }
  return out;
}

std::vector<RelationRepresentation> decode_representation_cache(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw Error("representation cache: missing header");
  std::istringstream header(bytes.substr(0, nl));
  std::string magic, version, count_s, dim_s, row_s, enc_s;
  header >> magic >> version >> count_s >> dim_s >> row_s >> enc_s;
  if (magic != "KNORDREP" || version != "1" || enc_s != "encoding=f32le") {
    throw Error("representation cache: unsupported header");
  }
  auto value = [](const std::string& kv, const char* key) -> std::size_t {
    const std::string prefix = std::string(key) + "=";
    if (kv.rfind(prefix, 0) != 0) throw Error("representation cache: bad header field " + kv);
    return std::stoull(kv.substr(prefix.size()));
  };
  const std::size_t count = value(count_s, "count");
  const std::size_t dim = value(dim_s, "dim");
  const std::size_t width = value(row_s, "row");
  if (width != 2 * dim) throw Error("representation cache: row width is not 2*dim");

  const std::size_t record = 4 * (1 + width);
  std::size_t off = nl + 1;
  if (bytes.size() != off + count * record) throw Error("representation cache: size mismatch");
  std::vector<RelationRepresentation> reps(count);
  for (auto& rep : reps) {
    rep.uid = read_u32le(bytes, off);
    off += 4;
    rep.vector.resize(width);
    for (double& x : rep.vector) {
      x = read_f32le(bytes, off);
      off += 4;
    }
  }
  return reps;
}

}  // namespace knord
