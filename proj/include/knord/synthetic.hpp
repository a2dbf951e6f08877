#pragma once

#include "knord/corpus.hpp"
#include "knord/metatype.hpp"
#include "knord/representation.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace knord {

// A relation class for generated corpora. Instances put the cue words
// between head and tail, surrounded by filler words.
struct PlantedClass {
  std::string name;
  std::size_t count = 0;
  std::string head_type;
  std::string tail_type;
  std::vector<std::string> cue_words;  // empty for the hard-negative class
};

struct SyntheticOptions {
  std::vector<PlantedClass> classes;
  std::size_t filler_vocabulary = 40;
  std::size_t min_filler = 4;
  std::size_t max_filler = 10;
  std::uint64_t seed = 0;
  // Attach "Q<n>" knowledge-base ids to both entities.
  bool with_kb_ids = false;
};

// n_known frequent classes followed by n_novel rarer ones, plus an optional
// hard-negative class. Counts descend so the frequency ranking is strict.
std::vector<PlantedClass> planted_classes(std::size_t n_known, std::size_t n_novel,
                                          std::size_t known_count, std::size_t novel_count,
                                          std::size_t negative_count = 0,
                                          const std::string& negative_class = "no_relation");

// Records are emitted class by class in a seeded shuffled order; uids 1..n.
Corpus generate_synthetic_corpus(const SyntheticOptions& options);

// Ontology matching with_kb_ids corpora: each entity is an instance of its
// type node, which is a subclass of one root per entity type.
OntologyGraph synthetic_ontology(const Corpus& corpus);

// One representation per instance: the class center (separation along the
// class's own axis) plus isotropic N(0, sigma^2) noise.
std::vector<RelationRepresentation> planted_representations(const Corpus& corpus,
                                                            const std::vector<std::string>& classes,
                                                            std::size_t dimension,
                                                            double separation, double sigma,
                                                            std::uint64_t seed);

}  // namespace knord
