#include "knord/metatype.hpp"

#include "knord/io.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace knord {

using nlohmann::json;

namespace {

void check_id(const std::string& id) {
  if (id.empty() || id.find_first_of(" \t\r\n") != std::string::npos) {
    throw Error("malformed entity id '" + id + "'");
  }
}

}  // namespace

OntologyGraph parse_ontology_fixture(const std::string& json_text) {
  OntologyGraph g;
  try {
    const json doc = json::parse(json_text);
    for (const auto& r : doc.at("roots")) {
      g.roots.insert(r.get<std::string>());
      g.nodes.try_emplace(r.get<std::string>());
    }
    for (const auto& entry : doc.at("nodes")) {
      const auto id = entry.at("node").get<std::string>();
      const auto relation = entry.at("relation").get<std::string>();
      auto parents = entry.at("parents").get<std::vector<std::string>>();
      auto& node = g.nodes[id];
      if (relation == "subclass_of") {
        node.subclass_of.insert(node.subclass_of.end(), parents.begin(), parents.end());
      } else if (relation == "instance_of") {
        node.instance_of.insert(node.instance_of.end(), parents.begin(), parents.end());
      } else {
        throw Error("unknown ontology relation '" + relation + "' on node " + id);
      }
    }
    if (doc.contains("expected")) {
      g.expected = doc.at("expected").get<std::map<std::string, std::string>>();
    }
  } catch (const json::exception& e) {
    throw Error(std::string("malformed ontology fixture: ") + e.what());
  }
  for (const auto& r : g.roots) {
    if (!g.nodes.at(r).subclass_of.empty()) {
      throw Error("ontology root '" + r + "' has a subclass parent");
    }
  }
  return g;
}

std::string ontology_to_fixture_json(const OntologyGraph& graph) {
  json nodes = json::array();
  for (const auto& [id, node] : graph.nodes) {
    if (!node.subclass_of.empty()) {
      nodes.push_back({{"node", id}, {"relation", "subclass_of"}, {"parents", node.subclass_of}});
    }
    if (!node.instance_of.empty()) {
      nodes.push_back({{"node", id}, {"relation", "instance_of"}, {"parents", node.instance_of}});
    }
  }
  json doc = {{"roots", graph.roots}, {"nodes", nodes}};
  if (!graph.expected.empty()) doc["expected"] = graph.expected;
  return doc.dump(2) + "\n";
}

OntologyGraph load_ontology_fixture(const std::filesystem::path& path) {
  return parse_ontology_fixture(read_file(path));
}

FixtureOntology::FixtureOntology(OntologyGraph graph) : graph_(std::move(graph)) {}

std::optional<OntologyNode> FixtureOntology::fetch(const std::string& id) {
  ++calls_;
  auto it = graph_.nodes.find(id);
  if (it == graph_.nodes.end()) return std::nullopt;
  return it->second;
}

bool FixtureOntology::is_root(const std::string& id, const OntologyNode&) const {
  return graph_.roots.contains(id);
}

// --- live client ---

WikidataOntology::WikidataOntology(WikidataOptions options) : options_(std::move(options)) {}

void WikidataOntology::throttle() {
  if (options_.max_requests_per_second <= 0) return;
  const auto min_gap = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(1.0 / options_.max_requests_per_second));
  const auto now = std::chrono::steady_clock::now();
  if (last_request_.time_since_epoch().count() != 0 && now - last_request_ < min_gap) {
    std::this_thread::sleep_for(min_gap - (now - last_request_));
  }
  last_request_ = std::chrono::steady_clock::now();
}

OntologyNode parse_wikidata_entity(const std::string& body, const std::string& id) {
  OntologyNode node;
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw Error("entity " + id + ": unparseable response: " + e.what());
  }
  const json* entity = nullptr;
  if (doc.contains("entities")) {
    const auto& entities = doc.at("entities");
    if (entities.contains(id)) {
      entity = &entities.at(id);
    } else if (!entities.empty()) {
      entity = &entities.begin().value();  // redirected id
    }
  }
  if (entity == nullptr || !entity->contains("claims")) return node;
  const auto& claims = entity->at("claims");
  auto collect = [&](const char* property, std::vector<std::string>& out) {
    if (!claims.contains(property)) return;
    for (const auto& claim : claims.at(property)) {
      const auto ptr = json::json_pointer("/mainsnak/datavalue/value/id");
      if (claim.contains(ptr) && claim.at(ptr).is_string()) {
        out.push_back(claim.at(ptr).get<std::string>());
      }
    }
  };
  collect("P279", node.subclass_of);
  collect("P31", node.instance_of);
  return node;
}

std::optional<OntologyNode> WikidataOntology::fetch(const std::string& id) {
  static const std::regex kEntityId("[QP][0-9]+");
  if (!std::regex_match(id, kEntityId)) throw Error("malformed Wikidata id '" + id + "'");

  httplib::Client client(options_.base_url);
  client.set_follow_location(true);
  client.set_connection_timeout(options_.timeout);
  client.set_read_timeout(options_.timeout);
  const std::string target = "/wiki/Special:EntityData/" + id + ".json";

  auto backoff = options_.initial_backoff;
  std::chrono::milliseconds retry_after = backoff;
  for (int attempt = 0; attempt < options_.max_attempts; ++attempt) {
    throttle();
    ++calls_;
    auto res = client.Get(target);
    if (res) {
      if (res->status == 200) return parse_wikidata_entity(res->body, id);
      if (res->status == 404) return std::nullopt;
      if (res->status == 429 || res->status >= 500) {
        retry_after = backoff;
        if (res->has_header("Retry-After")) {
          try {
            retry_after = std::chrono::seconds(std::stol(res->get_header_value("Retry-After")));
          } catch (const std::exception&) {
          }
        }
      } else {
        throw Error("entity " + id + ": HTTP " + std::to_string(res->status));
      }
    } else {
      retry_after = backoff;
    }
    if (attempt + 1 < options_.max_attempts) std::this_thread::sleep_for(retry_after);
    backoff *= 2;
  }
  throw ServiceUnavailable("knowledge-base service unavailable for " + id + " after " +
                               std::to_string(options_.max_attempts) + " attempts",
                           retry_after);
}

bool WikidataOntology::is_root(const std::string&, const OntologyNode& node) const {
  return node.subclass_of.empty() && node.instance_of.empty();
}

// --- resolver ---

std::map<std::string, std::string> load_metatype_cache(const std::filesystem::path& path) {
  std::map<std::string, std::string> cache;
  if (!std::filesystem::exists(path)) return cache;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    cache[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return cache;
}

MetaTypeResolver::MetaTypeResolver(std::shared_ptr<OntologySource> source,
                                   std::optional<std::filesystem::path> cache_path)
    : source_(std::move(source)), cache_path_(std::move(cache_path)) {
  if (cache_path_) cache_ = load_metatype_cache(*cache_path_);
}

std::size_t MetaTypeResolver::cache_size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

const OntologyNode* MetaTypeResolver::node(const std::string& id) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) it = nodes_.emplace(id, source_->fetch(id)).first;
  return it->second ? &*it->second : nullptr;
}

std::optional<std::string> MetaTypeResolver::walk(const std::string& id,
                                                  std::vector<std::string>& path) {
  const OntologyNode* n = node(id);
  if (n == nullptr) return std::nullopt;
  if (source_->is_root(id, *n)) return id;
  const auto& parents = n->subclass_of.empty() ? n->instance_of : n->subclass_of;
  for (const auto& parent : parents) {
    if (std::find(path.begin(), path.end(), parent) != path.end()) continue;  // loop
    path.push_back(parent);
    auto found = walk(parent, path);
    path.pop_back();
    if (found) return found;
  }
  return std::nullopt;
}

std::string MetaTypeResolver::resolve(const std::string& entity_id) {
  check_id(entity_id);
  std::lock_guard lock(mutex_);
  if (auto it = cache_.find(entity_id); it != cache_.end()) return it->second;
  std::vector<std::string> path{entity_id};
  const std::string meta = walk(entity_id, path).value_or(kUnknownMetaType);
  cache_.emplace(entity_id, meta);
  return meta;
}

void MetaTypeResolver::flush() {
  std::lock_guard lock(mutex_);
  if (!cache_path_) return;
  std::string out;
  for (const auto& [id, meta] : cache_) out += id + "\t" + meta + "\n";
  atomic_write(*cache_path_, out);
}

MetaTypePair meta_type_of_pair(const RelationInstance& inst, MetaTypeResolver* resolver) {
  auto side = [&](const std::optional<std::string>& kb_id, const std::string& dataset_type) {
    if (kb_id && resolver != nullptr) return resolver->resolve(*kb_id);
    return dataset_type.empty() ? std::string(kUnknownMetaType) : dataset_type;
  };
  return {side(inst.head_kb_id, inst.head_type), side(inst.tail_kb_id, inst.tail_type)};
}

}  // namespace knord
