#include "knord/corpus.hpp"

#include "knord/io.hpp"
#include "knord/rng.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace knord {

using nlohmann::json;

namespace {

std::string record_label(std::size_t record_number) {
  return "record " + std::to_string(record_number);
}

const json& require(const json& obj, const char* key, std::size_t record_number) {
  if (!obj.is_object() || !obj.contains(key) || obj.at(key).is_null()) {
    throw Error(record_label(record_number) + ": missing field '" + key + "'");
  }
  return obj.at(key);
}

template <typename T>
T field_as(const json& obj, const char* key, std::size_t record_number) {
  const json& v = require(obj, key, record_number);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw Error(record_label(record_number) + ": field '" + key + "' has the wrong type");
  }
}

std::optional<std::string> optional_string(const json& obj, const char* key) {
  if (obj.contains(key) && obj.at(key).is_string()) return obj.at(key).get<std::string>();
  return std::nullopt;
}

RelationInstance parse_generic(const json& rec, std::size_t record_number) {
  RelationInstance inst;
  inst.tokens = field_as<std::vector<std::string>>(rec, "tokens", record_number);
  const json& head = require(rec, "head", record_number);
  const json& tail = require(rec, "tail", record_number);
  inst.head = {field_as<std::size_t>(head, "start", record_number),
               field_as<std::size_t>(head, "end", record_number)};
  inst.tail = {field_as<std::size_t>(tail, "start", record_number),
               field_as<std::size_t>(tail, "end", record_number)};
  inst.head_type = field_as<std::string>(head, "type", record_number);
  inst.tail_type = field_as<std::string>(tail, "type", record_number);
  inst.head_kb_id = optional_string(head, "kb_id");
  inst.tail_kb_id = optional_string(tail, "kb_id");
  inst.gold_class = optional_string(rec, "relation");
  return inst;
}

// TACRED stores inclusive end offsets.
RelationInstance parse_tacred(const json& rec, std::size_t record_number) {
  RelationInstance inst;
  inst.tokens = field_as<std::vector<std::string>>(rec, "token", record_number);
  const auto subj_start = field_as<long long>(rec, "subj_start", record_number);
  const auto subj_end = field_as<long long>(rec, "subj_end", record_number);
  const auto obj_start = field_as<long long>(rec, "obj_start", record_number);
  const auto obj_end = field_as<long long>(rec, "obj_end", record_number);
  if (subj_start < 0 || obj_start < 0 || subj_end < subj_start || obj_end < obj_start) {
    throw Error("invalid span at " + record_label(record_number));
  }
  inst.head = {static_cast<std::size_t>(subj_start), static_cast<std::size_t>(subj_end) + 1};
  inst.tail = {static_cast<std::size_t>(obj_start), static_cast<std::size_t>(obj_end) + 1};
  inst.head_type = field_as<std::string>(rec, "subj_type", record_number);
  inst.tail_type = field_as<std::string>(rec, "obj_type", record_number);
  inst.gold_class = optional_string(rec, "relation");
  return inst;
}

}  // namespace

std::vector<std::string> RelationInstance::head_tokens() const {
  return {tokens.begin() + static_cast<std::ptrdiff_t>(head.start),
          tokens.begin() + static_cast<std::ptrdiff_t>(head.end)};
}

std::vector<std::string> RelationInstance::tail_tokens() const {
  return {tokens.begin() + static_cast<std::ptrdiff_t>(tail.start),
          tokens.begin() + static_cast<std::ptrdiff_t>(tail.end)};
}

CorpusFormat parse_corpus_format(const std::string& name) {
  if (name == "tacred_json") return CorpusFormat::tacred_json;
  if (name == "generic_jsonl") return CorpusFormat::generic_jsonl;
  throw Error("unknown corpus format '" + name + "'");
}

void validate_spans(const RelationInstance& inst, std::size_t record_number) {
  const auto n = inst.tokens.size();
  for (const Span* s : {&inst.head, &inst.tail}) {
    if (s->end <= s->start || s->end > n) {
      throw Error("invalid span at " + record_label(record_number));
    }
  }
  if (inst.head == inst.tail) {
    throw Error("identical head and tail spans at " + record_label(record_number));
  }
}

Corpus parse_corpus(const std::string& text, CorpusFormat format) {
  Corpus corpus;
  auto add = [&](RelationInstance inst) {
    const std::size_t record_number = corpus.size() + 1;
    validate_spans(inst, record_number);
    inst.uid = static_cast<Uid>(record_number);
    corpus.push_back(std::move(inst));
  };

  if (format == CorpusFormat::generic_jsonl) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const std::size_t record_number = corpus.size() + 1;
      json rec;
      try {
        rec = json::parse(line);
      } catch (const json::parse_error& e) {
        throw Error(record_label(record_number) + ": " + e.what());
      }
      add(parse_generic(rec, record_number));
    }
    return corpus;
  }

  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return corpus;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(std::string("corpus is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw Error("tacred_json corpus must be a JSON array");
  for (const auto& rec : doc) add(parse_tacred(rec, corpus.size() + 1));
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  return parse_corpus(read_file(path), format);
}

std::string to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const auto& inst : corpus) {
    json head = {{"start", inst.head.start}, {"end", inst.head.end}, {"type", inst.head_type}};
    json tail = {{"start", inst.tail.start}, {"end", inst.tail.end}, {"type", inst.tail_type}};
    if (inst.head_kb_id) head["kb_id"] = *inst.head_kb_id;
    if (inst.tail_kb_id) tail["kb_id"] = *inst.tail_kb_id;
    json rec = {{"uid", inst.uid}, {"tokens", inst.tokens}, {"head", head}, {"tail", tail}};
    if (inst.gold_class) rec["relation"] = *inst.gold_class;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

bool SplitManifest::is_known(const std::string& cls) const {
  return std::find(known_classes.begin(), known_classes.end(), cls) != known_classes.end();
}

bool SplitManifest::is_novel(const std::string& cls) const {
  return std::find(novel_classes.begin(), novel_classes.end(), cls) != novel_classes.end();
}

SplitManifest build_grd_split(const Corpus& corpus, const SplitOptions& options) {
  if (!(options.labeled_fraction > 0.0 && options.labeled_fraction <= 1.0)) {
    throw Error("labeled_fraction must be in (0, 1]");
  }

  std::map<std::string, std::vector<Uid>> by_class;
  for (const auto& inst : corpus) {
    if (!inst.gold_class) {
      throw Error("instance " + std::to_string(inst.uid) + " has no gold class");
    }
    by_class[*inst.gold_class].push_back(inst.uid);
  }

  SplitManifest m;
  m.seed = options.seed;
  m.labeled_fraction = options.labeled_fraction;

  const bool has_negative = options.negative_class && by_class.contains(*options.negative_class);
  struct Ranked {
    std::string name;
    std::size_t count;
  };
  std::vector<Ranked> ranked;
  for (const auto& [name, uids] : by_class) {
    if (has_negative && name == *options.negative_class) continue;
    std::size_t count = uids.size();
    if (options.frequencies) {
      auto it = options.frequencies->find(name);
      if (it == options.frequencies->end()) {
        m.warnings.push_back("class '" + name + "' missing from frequency table; counted as 0");
        count = 0;
      } else {
        count = it->second;
      }
    }
    ranked.push_back({name, count});
  }
  if (ranked.size() < 2) {
    throw Error("need at least 2 non-negative classes to split, found " +
                std::to_string(ranked.size()));
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.name < b.name;
  });

  const std::size_t n_known = ranked.size() / 2;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    (i < n_known ? m.known_classes : m.novel_classes).push_back(ranked[i].name);
  }
  if (has_negative) {
    m.negative_class = options.negative_class;
    m.known_classes.push_back(*options.negative_class);
  }

  for (const auto& cls : m.known_classes) {
    std::vector<Uid> uids = by_class.at(cls);
    std::sort(uids.begin(), uids.end());
    std::size_t take = floor_fraction(options.labeled_fraction, uids.size());
    if (uids.size() < 2) {
      m.warnings.push_back("known class '" + cls + "' has fewer than 2 instances; all labeled");
      take = uids.size();
    }
    Rng rng(hash_combine(options.seed, fnv1a(cls)));
    rng.shuffle(uids);
    for (std::size_t i = 0; i < uids.size(); ++i) {
      (i < take ? m.labeled_uids : m.unlabeled_uids).insert(uids[i]);
    }
  }
  for (const auto& cls : m.novel_classes) {
    for (Uid uid : by_class.at(cls)) m.unlabeled_uids.insert(uid);
  }
  return m;
}

void verify_split(const SplitManifest& m, const Corpus& corpus) {
  for (const auto& cls : m.known_classes) {
    if (m.is_novel(cls)) throw Error("class '" + cls + "' is both known and novel");
  }
  for (Uid uid : m.labeled_uids) {
    if (m.unlabeled_uids.contains(uid)) {
      throw Error("uid " + std::to_string(uid) + " is both labeled and unlabeled");
    }
  }
  for (const auto& inst : corpus) {
    const bool labeled = m.labeled_uids.contains(inst.uid);
    if (!labeled && !m.unlabeled_uids.contains(inst.uid)) {
      throw Error("uid " + std::to_string(inst.uid) + " missing from split");
    }
    if (!inst.gold_class) continue;
    if (labeled && !m.is_known(*inst.gold_class)) {
      throw Error("labeled uid " + std::to_string(inst.uid) + " has non-known class");
    }
    if (m.is_novel(*inst.gold_class) && labeled) {
      throw Error("novel-class uid " + std::to_string(inst.uid) + " is labeled");
    }
  }
}

std::string split_to_json(const SplitManifest& m) {
  json doc = {
      {"known_classes", m.known_classes},
      {"novel_classes", m.novel_classes},
      {"negative_class", m.negative_class ? json(*m.negative_class) : json(nullptr)},
      {"labeled_uids", std::vector<Uid>(m.labeled_uids.begin(), m.labeled_uids.end())},
      {"unlabeled_uids", std::vector<Uid>(m.unlabeled_uids.begin(), m.unlabeled_uids.end())},
      {"seed", m.seed},
      {"labeled_fraction", m.labeled_fraction},
      {"warnings", m.warnings},
  };
  return doc.dump(2) + "\n";
}

SplitManifest split_from_json(const std::string& text) {
  SplitManifest m;
  try {
    const json doc = json::parse(text);
    m.known_classes = doc.at("known_classes").get<std::vector<std::string>>();
    m.novel_classes = doc.at("novel_classes").get<std::vector<std::string>>();
    if (doc.contains("negative_class") && doc.at("negative_class").is_string()) {
      m.negative_class = doc.at("negative_class").get<std::string>();
    }
    for (Uid u : doc.at("labeled_uids").get<std::vector<Uid>>()) m.labeled_uids.insert(u);
    for (Uid u : doc.at("unlabeled_uids").get<std::vector<Uid>>()) m.unlabeled_uids.insert(u);
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.labeled_fraction = doc.at("labeled_fraction").get<double>();
    if (doc.contains("warnings")) m.warnings = doc.at("warnings").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(std::string("malformed split manifest: ") + e.what());
  }
  return m;
}

std::map<std::string, std::size_t> load_frequencies(const std::filesystem::path& path) {
  std::map<std::string, std::size_t> freq;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": expected class<TAB>count");
    }
    try {
      freq[line.substr(0, tab)] = std::stoull(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": bad count");
    }
  }
  return freq;
}

Corpus augment_hard_negatives(const Corpus& corpus, const Corpus& negatives,
                              const std::string& negative_class) {
  for (const auto& inst : corpus) {
    if (inst.gold_class && *inst.gold_class == negative_class) {
      throw Error("negative class '" + negative_class + "' collides with a positive class");
    }
  }
  for (const auto& inst : negatives) {
    if (!inst.gold_class || *inst.gold_class != negative_class) {
      throw Error("hard negative " + std::to_string(inst.uid) + " is not labeled '" +
                  negative_class + "'");
    }
  }
  Corpus merged;
  merged.reserve(corpus.size() + negatives.size());
  merged.insert(merged.end(), corpus.begin(), corpus.end());
  merged.insert(merged.end(), negatives.begin(), negatives.end());
  for (std::size_t i = 0; i < merged.size(); ++i) merged[i].uid = static_cast<Uid>(i + 1);
  return merged;
}

}  // namespace knord
