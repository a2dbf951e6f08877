#include "knord/synthetic.hpp"

#include "knord/prompt.hpp"
#include "knord/rng.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <set>

namespace knord {

namespace {

struct RelationTemplate {
  const char* name;
  const char* head_type;
  const char* tail_type;
};

constexpr std::array<RelationTemplate, 16> kTemplates{{
    {"per:employee_of", "PERSON", "ORGANIZATION"},
    {"org:founded_by", "ORGANIZATION", "PERSON"},
    {"per:city_of_birth", "PERSON", "CITY"},
    {"org:member_of", "ORGANIZATION", "ORGANIZATION"},
    {"per:spouse", "PERSON", "PERSON"},
    {"org:headquarters", "ORGANIZATION", "CITY"},
    {"per:title", "PERSON", "TITLE"},
    {"org:dissolved", "ORGANIZATION", "DATE"},
    {"per:date_of_birth", "PERSON", "DATE"},
    {"org:subsidiaries", "ORGANIZATION", "ORGANIZATION"},
    {"per:origin", "PERSON", "NATIONALITY"},
    {"org:shareholders", "ORGANIZATION", "PERSON"},
    {"per:children", "PERSON", "PERSON"},
    {"org:website", "ORGANIZATION", "URL"},
    {"per:religion", "PERSON", "RELIGION"},
    {"org:country_of_headquarters", "ORGANIZATION", "COUNTRY"},
}};

constexpr std::array<const char*, 40> kFiller{
    "the",    "a",     "said",  "on",     "in",     "that",   "was",    "and",
    "after",  "his",   "her",   "their",  "new",    "last",   "year",   "which",
    "when",   "also",  "while", "report", "today",  "early",  "later",  "group",
    "people", "week",  "city",  "state",  "public", "former", "during", "where",
    "told",   "news",  "since", "before", "many",   "some",   "first",  "time",
};

constexpr std::array<const char*, 10> kTypes{"PERSON", "ORGANIZATION", "CITY",      "DATE",
                                             "TITLE",  "NATIONALITY",  "URL",       "RELIGION",
                                             "COUNTRY", "MISC"};

std::size_t type_index(const std::string& type) {
  for (std::size_t i = 0; i < kTypes.size(); ++i) {
    if (type == kTypes[i]) return i;
  }
  return kTypes.size() - 1;
}

constexpr std::size_t kEntitiesPerType = 25;

std::string entity_kb_id(std::size_t type, std::size_t entity) {
  return "Q" + std::to_string(1000 + type * 100 + entity);
}
std::string type_node_id(std::size_t type) { return "Q" + std::to_string(100 + type); }
std::string root_id(std::size_t type) { return "Q" + std::to_string(10 + type); }

std::vector<std::string> entity_tokens(const std::string& type, std::size_t entity) {
  std::string base = type;
  std::transform(base.begin(), base.end(), base.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::vector<std::string> toks{base + "_" + std::to_string(entity)};
  if (entity % 3 == 0) toks.push_back("jr");
  return toks;
}

}  // namespace

std::vector<PlantedClass> planted_classes(std::size_t n_known, std::size_t n_novel,
                                          std::size_t known_count, std::size_t novel_count,
                                          std::size_t negative_count,
                                          const std::string& negative_class) {
  if (n_known + n_novel > kTemplates.size()) {
    throw Error("at most " + std::to_string(kTemplates.size()) + " planted classes");
  }
  if (n_known > 0 && n_novel > 0 && novel_count + n_novel >= known_count) {
    throw Error("known classes must be strictly more frequent than novel ones");
  }
  std::vector<PlantedClass> out;
  for (std::size_t i = 0; i < n_known + n_novel; ++i) {
    const auto& t = kTemplates[i];
    const std::size_t base = i < n_known ? known_count - i : novel_count - (i - n_known);
    out.push_back({t.name, base, t.head_type, t.tail_type, normalize_relation_name(t.name)});
  }
  if (negative_count > 0) out.push_back({negative_class, negative_count, "MISC", "MISC", {}});
  return out;
}

Corpus generate_synthetic_corpus(const SyntheticOptions& options) {
  if (options.classes.empty()) throw Error("no classes to generate");
  if (options.min_filler > options.max_filler || options.max_filler < 2) {
    throw Error("invalid filler length range");
  }
  const std::size_t n_filler = std::min(options.filler_vocabulary, kFiller.size());
  if (n_filler == 0) throw Error("filler vocabulary is empty");
  Rng rng(options.seed);

  Corpus corpus;
  for (const auto& cls : options.classes) {
    for (std::size_t n = 0; n < cls.count; ++n) {
      const bool negative = cls.cue_words.empty();
      std::string head_type = cls.head_type;
      std::string tail_type = cls.tail_type;
      if (negative) {
        head_type = kTypes[rng.index(kTypes.size() - 1)];
        tail_type = kTypes[rng.index(kTypes.size() - 1)];
      }
      const std::size_t ht = type_index(head_type), tt = type_index(tail_type);
      const std::size_t he = rng.index(kEntitiesPerType);
      std::size_t te = rng.index(kEntitiesPerType);
      if (ht == tt && te == he) te = (te + 1) % kEntitiesPerType;

      const std::size_t filler = options.min_filler + rng.index(options.max_filler - options.min_filler + 1);
      const std::size_t before = rng.index(filler / 2 + 1);
      const std::size_t between = std::min<std::size_t>(1, filler - before);
      auto fill = [&](std::vector<std::string>& toks, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) toks.emplace_back(kFiller[rng.index(n_filler)]);
      };

      RelationInstance inst;
      const auto head = entity_tokens(head_type, he);
      const auto tail = entity_tokens(tail_type, te);
      fill(inst.tokens, before);
      inst.head = {inst.tokens.size(), inst.tokens.size() + head.size()};
      inst.tokens.insert(inst.tokens.end(), head.begin(), head.end());
      fill(inst.tokens, between);
      inst.tokens.insert(inst.tokens.end(), cls.cue_words.begin(), cls.cue_words.end());
      inst.tail = {inst.tokens.size(), inst.tokens.size() + tail.size()};
      inst.tokens.insert(inst.tokens.end(), tail.begin(), tail.end());
      fill(inst.tokens, filler - before - between);
      inst.head_type = head_type;
      inst.tail_type = tail_type;
      inst.gold_class = cls.name;
      if (options.with_kb_ids) {
        inst.head_kb_id = entity_kb_id(ht, he);
        inst.tail_kb_id = entity_kb_id(tt, te);
      }
      corpus.push_back(std::move(inst));
    }
  }
  rng.shuffle(corpus);
  for (std::size_t i = 0; i < corpus.size(); ++i) corpus[i].uid = static_cast<Uid>(i + 1);
  return corpus;
}

OntologyGraph synthetic_ontology(const Corpus& corpus) {
  OntologyGraph g;
  std::set<std::size_t> types;
  auto add_entity = [&](const std::optional<std::string>& id, const std::string& type) {
    if (!id) return;
    const std::size_t t = type_index(type);
    types.insert(t);
    g.nodes[*id].instance_of = {type_node_id(t)};
  };
  for (const auto& inst : corpus) {
    add_entity(inst.head_kb_id, inst.head_type);
    add_entity(inst.tail_kb_id, inst.tail_type);
  }
  for (std::size_t t : types) {
    g.nodes[type_node_id(t)].subclass_of = {root_id(t)};
    g.nodes[root_id(t)];
    g.roots.insert(root_id(t));
  }
  return g;
}

std::vector<RelationRepresentation> planted_representations(const Corpus& corpus,
                                                            const std::vector<std::string>& classes,
                                                            std::size_t dimension,
                                                            double separation, double sigma,
                                                            std::uint64_t seed) {
  if (dimension < classes.size()) throw Error("dimension must cover one axis per class");
  std::map<std::string, std::size_t> axis;
  for (std::size_t i = 0; i < classes.size(); ++i) axis[classes[i]] = i;
  Rng rng(seed);
  std::vector<RelationRepresentation> out;
  for (const auto& inst : corpus) {
    if (!inst.gold_class || !axis.contains(*inst.gold_class)) {
      throw Error("instance " + std::to_string(inst.uid) + " has no planted class");
    }
    RelationRepresentation rep;
    rep.uid = inst.uid;
    rep.vector.resize(dimension);
    for (double& x : rep.vector) x = rng.normal(0.0, sigma);
    rep.vector[axis[*inst.gold_class]] += separation;
    out.push_back(std::move(rep));
  }
  return out;
}

}  // namespace knord
