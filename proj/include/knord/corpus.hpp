#pragma once

#include "knord/types.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace knord {

// Half-open token range [start, end).
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - start; }
  bool overlaps(const Span& other) const { return start < other.end && other.start < end; }
  bool operator==(const Span&) const = default;
};

struct RelationInstance {
  Uid uid = 0;
  std::vector<std::string> tokens;
  Span head;
  Span tail;
  std::string head_type;
  std::string tail_type;
  std::optional<std::string> gold_class;
  std::optional<std::string> head_kb_id;
  std::optional<std::string> tail_kb_id;

  std::vector<std::string> head_tokens() const;
  std::vector<std::string> tail_tokens() const;
};

using Corpus = std::vector<RelationInstance>;

enum class CorpusFormat { tacred_json, generic_jsonl };

CorpusFormat parse_corpus_format(const std::string& name);

// Loads a corpus and assigns uids 1..n in record order.
Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format);
Corpus parse_corpus(const std::string& text, CorpusFormat format);

// Serializes in generic_jsonl form with an extra "uid" key per record.
std::string to_jsonl(const Corpus& corpus);

// Throws if a span is out of range, empty, or the two spans are identical.
void validate_spans(const RelationInstance& instance, std::size_t record_number);

struct SplitManifest {
  std::vector<std::string> known_classes;
  std::vector<std::string> novel_classes;
  std::set<Uid> labeled_uids;
  std::set<Uid> unlabeled_uids;
  std::optional<std::string> negative_class;
  std::uint64_t seed = 0;
  double labeled_fraction = 0.85;
  std::vector<std::string> warnings;

  bool is_known(const std::string& cls) const;
  bool is_novel(const std::string& cls) const;
};

struct SplitOptions {
  double labeled_fraction = 0.85;
  std::uint64_t seed = 0;
  // Name of the hard-negative class, if the corpus carries one.
  std::optional<std::string> negative_class;
  // External class frequencies (e.g. knowledge-base counts); otherwise the
  // corpus's own counts rank the classes.
  std::optional<std::map<std::string, std::size_t>> frequencies;
};

SplitManifest build_grd_split(const Corpus& corpus, const SplitOptions& options);

// Throws when a manifest violates disjointness or labeling rules against the corpus.
void verify_split(const SplitManifest& manifest, const Corpus& corpus);

std::string split_to_json(const SplitManifest& manifest);
SplitManifest split_from_json(const std::string& text);

// Reads "class<TAB>count" lines.
std::map<std::string, std::size_t> load_frequencies(const std::filesystem::path& path);

Corpus augment_hard_negatives(const Corpus& corpus, const Corpus& negatives,
                              const std::string& negative_class);

}  // namespace knord
