#pragma once

#include "knord/corpus.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace knord {

inline constexpr const char* kUnknownMetaType = "unknown";

// Ordered (head, tail) pair of coarse entity types.
struct MetaTypePair {
  std::string head;
  std::string tail;

  auto operator<=>(const MetaTypePair&) const = default;
};

struct OntologyNode {
  std::vector<std::string> subclass_of;
  std::vector<std::string> instance_of;
};

// Where ontology nodes come from. fetch() returns nullopt for ids the source
// does not know.
class OntologySource {
 public:
  virtual ~OntologySource() = default;
  virtual std::optional<OntologyNode> fetch(const std::string& id) = 0;
  virtual bool is_root(const std::string& id, const OntologyNode& node) const = 0;
  // Count of fetch() calls that reached the backing graph or service.
  virtual std::size_t calls() const = 0;
};

struct OntologyGraph {
  std::map<std::string, OntologyNode> nodes;
  std::set<std::string> roots;
  // Optional expected resolutions shipped with a fixture.
  std::map<std::string, std::string> expected;
};

// Fixture format: {"roots": [...], "nodes": [{"node", "relation": "subclass_of" |
// "instance_of", "parents": [...]}], "expected": {id: meta}}.
OntologyGraph parse_ontology_fixture(const std::string& json_text);
OntologyGraph load_ontology_fixture(const std::filesystem::path& path);
std::string ontology_to_fixture_json(const OntologyGraph& graph);

class FixtureOntology : public OntologySource {
 public:
  explicit FixtureOntology(OntologyGraph graph);
  std::optional<OntologyNode> fetch(const std::string& id) override;
  bool is_root(const std::string& id, const OntologyNode& node) const override;
  std::size_t calls() const override { return calls_; }
  const OntologyGraph& graph() const { return graph_; }

 private:
  OntologyGraph graph_;
  std::size_t calls_ = 0;
};

// Raised when the live service cannot be reached or keeps refusing requests.
class ServiceUnavailable : public Error {
 public:
  ServiceUnavailable(const std::string& what, std::chrono::milliseconds retry_after)
      : Error(what), retry_after_(retry_after) {}
  std::chrono::milliseconds retry_after() const { return retry_after_; }

 private:
  std::chrono::milliseconds retry_after_;
};

struct WikidataOptions {
  // Scheme + host, e.g. "https://www.wikidata.org" or "http://127.0.0.1:8080".
  std::string base_url = "https://www.wikidata.org";
  double max_requests_per_second = 10.0;
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::seconds timeout{10};
};

// Live client for Special:EntityData/<id>.json. Reads P279 (subclass of) and
// P31 (instance of) claim lists. A node with neither is a root.
class WikidataOntology : public OntologySource {
 public:
  explicit WikidataOntology(WikidataOptions options = {});
  std::optional<OntologyNode> fetch(const std::string& id) override;
  bool is_root(const std::string& id, const OntologyNode& node) const override;
  std::size_t calls() const override { return calls_; }

 private:
  void throttle();

  WikidataOptions options_;
  std::size_t calls_ = 0;
  std::chrono::steady_clock::time_point last_request_{};
};

// Parses the Special:EntityData JSON body for one entity.
OntologyNode parse_wikidata_entity(const std::string& body, const std::string& id);

// Resolves entity ids to root meta-types by walking "subclass of" parents
// depth-first (falling back to "instance of" when a node has no subclass
// parent), skipping parents that close a loop over the current path.
// Results persist in a tab-separated cache file.
class MetaTypeResolver {
 public:
  MetaTypeResolver(std::shared_ptr<OntologySource> source,
                   std::optional<std::filesystem::path> cache_path = std::nullopt);

  std::string resolve(const std::string& entity_id);
  // Writes the cache file atomically (no-op without a cache path).
  void flush();

  std::size_t service_calls() const { return source_->calls(); }
  std::size_t cache_size() const;

 private:
  std::optional<std::string> walk(const std::string& id, std::vector<std::string>& path);
  const OntologyNode* node(const std::string& id);

  std::shared_ptr<OntologySource> source_;
  std::optional<std::filesystem::path> cache_path_;
  std::map<std::string, std::string> cache_;
  std::unordered_map<std::string, std::optional<OntologyNode>> nodes_;
  mutable std::mutex mutex_;
};

std::map<std::string, std::string> load_metatype_cache(const std::filesystem::path& path);

// Resolved meta-types when KB ids are present, otherwise the dataset's own
// entity types. Empty or unresolvable sides become "unknown".
MetaTypePair meta_type_of_pair(const RelationInstance& instance, MetaTypeResolver* resolver);

}  // namespace knord
