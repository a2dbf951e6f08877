#include "knord/pipeline.hpp"

#include "knord/classifier.hpp"
#include "knord/cluster.hpp"
#include "knord/encoder.hpp"
#include "knord/io.hpp"
#include "knord/metatype.hpp"
#include "knord/prompt.hpp"
#include "knord/representation.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include <json.hpp>

namespace knord {

using nlohmann::json;
namespace fs = std::filesystem;

fs::path PipelineConfig::run_dir() const {
  return output_dir / ("seed-" + std::to_string(seed));
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw Error("config key '" + key + "': not a number: " + v);
  return out;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw Error("config key '" + key + "': not a non-negative integer: " + v);
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw Error("config key '" + key + "': out of range: " + v);
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error("config key '" + key + "': not a boolean: " + v);
}

std::string opt_path(const std::optional<fs::path>& p) { return p ? p->string() : ""; }

struct ConfigKey {
  const char* name;
  Stage stage;          // first stage that reads the key
  const char* source;   // "paper" or "decision" for numeric keys, nullptr otherwise
  std::function<void(PipelineConfig&, const std::string&, const fs::path&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

#define KNORD_PATH_KEY(field, stage)                                                       \
  ConfigKey {                                                                              \
    #field, stage, nullptr,                                                                \
        [](PipelineConfig& c, const std::string& v, const fs::path& base) {                \
          c.field = fs::path(v).is_absolute() ? fs::path(v) : base / v;                    \
        },                                                                                 \
        [](const PipelineConfig& c) { return opt_path(c.field); }                          \
  }
#define KNORD_STRING_KEY(field, stage)                                                          \
  ConfigKey {                                                                                   \
    #field, stage, nullptr,                                                                     \
        [](PipelineConfig& c, const std::string& v, const fs::path&) { c.field = v; },          \
        [](const PipelineConfig& c) { return std::string(c.field); }                            \
  }
#define KNORD_SIZE_KEY(field, stage, source)                                                    \
  ConfigKey {                                                                                   \
    #field, stage, source,                                                                      \
        [](PipelineConfig& c, const std::string& v, const fs::path&) {                          \
          c.field = static_cast<decltype(c.field)>(parse_unsigned(#field, v));                  \
        },                                                                                      \
        [](const PipelineConfig& c) { return std::to_string(c.field); }                         \
  }
#define KNORD_DOUBLE_KEY(field, stage, source)                                                  \
  ConfigKey {                                                                                   \
    #field, stage, source,                                                                      \
        [](PipelineConfig& c, const std::string& v, const fs::path&) {                          \
          c.field = parse_double(#field, v);                                                    \
        },                                                                                      \
        [](const PipelineConfig& c) { return fmt_double(c.field); }                             \
  }

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      ConfigKey{"dataset", Stage::split, nullptr,
                [](PipelineConfig& c, const std::string& v, const fs::path& base) {
                  c.dataset = fs::path(v).is_absolute() ? fs::path(v) : base / v;
                },
                [](const PipelineConfig& c) { return c.dataset.string(); }},
      ConfigKey{"format", Stage::split, nullptr,
                [](PipelineConfig& c, const std::string& v, const fs::path&) {
                  c.format = parse_corpus_format(v);
                },
                [](const PipelineConfig& c) {
                  return std::string(c.format == CorpusFormat::tacred_json ? "tacred_json"
                                                                           : "generic_jsonl");
                }},
      KNORD_PATH_KEY(hard_negatives, Stage::split),
      KNORD_PATH_KEY(frequencies, Stage::split),
      ConfigKey{"negative_class", Stage::split, nullptr,
                [](PipelineConfig& c, const std::string& v, const fs::path&) {
                  if (v.empty()) {
                    c.negative_class.reset();
                  } else {
                    c.negative_class = v;
                  }
                },
                [](const PipelineConfig& c) { return c.negative_class.value_or(""); }},
      KNORD_SIZE_KEY(seed, Stage::split, "paper"),
      KNORD_DOUBLE_KEY(labeled_fraction, Stage::split, "paper"),

      KNORD_STRING_KEY(ontology, Stage::resolve_types),
      KNORD_PATH_KEY(ontology_fixture, Stage::resolve_types),
      KNORD_STRING_KEY(wikidata_url, Stage::resolve_types),
      KNORD_PATH_KEY(metatype_cache, Stage::resolve_types),

      KNORD_DOUBLE_KEY(mask_rate, Stage::train_prompt, "paper"),
      KNORD_SIZE_KEY(n_top_tokens, Stage::train_prompt, "paper"),
      KNORD_STRING_KEY(mlm_backend, Stage::train_prompt),
      KNORD_SIZE_KEY(heldout_relations, Stage::train_prompt, "paper"),
      KNORD_SIZE_KEY(mlm_epochs, Stage::train_prompt, "decision"),
      KNORD_DOUBLE_KEY(mlm_learning_rate, Stage::train_prompt, "decision"),

      KNORD_SIZE_KEY(embedding_dim, Stage::represent, "decision"),

      KNORD_DOUBLE_KEY(top_fraction, Stage::cluster, "paper"),
      KNORD_DOUBLE_KEY(weak_label_percent, Stage::cluster, "paper"),
      KNORD_SIZE_KEY(k_multiplier, Stage::cluster, "paper"),
      KNORD_SIZE_KEY(gmm_restarts, Stage::cluster, "decision"),
      KNORD_SIZE_KEY(gmm_max_iter, Stage::cluster, "decision"),
      KNORD_DOUBLE_KEY(gmm_tol, Stage::cluster, "decision"),
      KNORD_STRING_KEY(adjust_metric, Stage::cluster),

      KNORD_STRING_KEY(encoder_backend, Stage::classify),
      KNORD_SIZE_KEY(hidden_dim, Stage::classify, "decision"),
      KNORD_SIZE_KEY(classifier_epochs, Stage::classify, "paper"),
      KNORD_DOUBLE_KEY(classifier_learning_rate, Stage::classify, "decision"),
      KNORD_SIZE_KEY(classifier_batch, Stage::classify, "paper"),
      KNORD_DOUBLE_KEY(classifier_dropout, Stage::classify, "paper"),
      KNORD_DOUBLE_KEY(classifier_max_grad_norm, Stage::classify, "paper"),

      ConfigKey{"exclude_negative", Stage::evaluate, nullptr,
                [](PipelineConfig& c, const std::string& v, const fs::path&) {
                  c.exclude_negative = parse_bool("exclude_negative", v);
                },
                [](const PipelineConfig& c) {
                  return std::string(c.exclude_negative ? "true" : "false");
                }},
      KNORD_STRING_KEY(setting, Stage::evaluate),
  };
  return keys;
}

#undef KNORD_PATH_KEY
#undef KNORD_STRING_KEY
#undef KNORD_SIZE_KEY
#undef KNORD_DOUBLE_KEY

void validate(const PipelineConfig& c) {
  if (c.dataset.empty()) throw Error("config: 'dataset' is required");
  auto unit = [](const char* key, double v, bool open_top) {
    const bool ok = v > 0.0 && (open_top ? v < 1.0 : v <= 1.0);
    if (!ok) {
      throw Error(std::string("config key '") + key + "' must be in (0, 1" + (open_top ? ")" : "]"));
    }
  };
  unit("mask_rate", c.mask_rate, true);
  unit("top_fraction", c.top_fraction, false);
  if (!(c.weak_label_percent > 0.0 && c.weak_label_percent <= 100.0)) {
    throw Error("config key 'weak_label_percent' must be in (0, 100]");
  }
  if (!(c.classifier_dropout >= 0.0 && c.classifier_dropout < 1.0)) {
    throw Error("config key 'classifier_dropout' must be in [0, 1)");
  }
  if (c.n_top_tokens == 0) throw Error("config key 'n_top_tokens' must be positive");
  if (c.k_multiplier == 0) throw Error("config key 'k_multiplier' must be positive");
  if (c.gmm_restarts == 0) throw Error("config key 'gmm_restarts' must be positive");
  if (c.classifier_batch == 0) throw Error("config key 'classifier_batch' must be positive");
  if (c.mlm_backend != "stub" && c.mlm_backend != "tiny") {
    throw Error("config key 'mlm_backend' must be 'stub' or 'tiny' (pretrained checkpoints are not supported)");
  }
  if (c.encoder_backend != "stub" && c.encoder_backend != "tiny") {
    throw Error("config key 'encoder_backend' must be 'stub' or 'tiny' (pretrained checkpoints are not supported)");
  }
  if (c.ontology != "none" && c.ontology != "fixture" && c.ontology != "wikidata") {
    throw Error("config key 'ontology' must be none, fixture or wikidata");
  }
  if (c.ontology == "fixture" && !c.ontology_fixture) {
    throw Error("config: ontology = fixture needs 'ontology_fixture'");
  }
  if (c.adjust_metric != "posterior" && c.adjust_metric != "euclidean") {
    throw Error("config key 'adjust_metric' must be posterior or euclidean");
  }
}

// Stages whose outputs a stage reads directly.
std::vector<Stage> direct_upstream(Stage s) {
  switch (s) {
    case Stage::split: return {};
    case Stage::resolve_types: return {Stage::split};
    case Stage::train_prompt: return {Stage::split};
    case Stage::represent: return {Stage::train_prompt};
    case Stage::cluster: return {Stage::split, Stage::resolve_types, Stage::represent};
    case Stage::classify: return {Stage::split, Stage::cluster};
    case Stage::evaluate: return {Stage::split, Stage::classify};
  }
  return {};
}

void collect_ancestors(Stage s, std::set<Stage>& out) {
  if (!out.insert(s).second) return;
  for (Stage u : direct_upstream(s)) collect_ancestors(u, out);
}

fs::path manifest_path(const PipelineConfig& c, Stage s) {
  return c.run_dir() / (stage_name(s) + ".manifest.json");
}

json read_manifest(const PipelineConfig& c, Stage self, Stage up) {
  const auto path = manifest_path(c, up);
  if (!fs::exists(path)) {
    throw StageError(self, "missing upstream artifacts of stage '" + stage_name(up) + "'; run '" +
                               stage_name(up) + "' first");
  }
  try {
    return json::parse(read_file(path));
  } catch (const json::exception&) {
    throw StageError(self, "unreadable manifest of stage '" + stage_name(up) + "'; rerun '" +
                               stage_name(up) + "'");
  }
}

// An upstream stage is fresh when its recorded configuration and outputs
// still match, and its own inputs are unchanged since it ran.
void verify_fresh(const PipelineConfig& c, Stage self, Stage up, std::set<Stage>& checked) {
  if (!checked.insert(up).second) return;
  const json m = read_manifest(c, self, up);
  const std::string name = stage_name(up);
  if (m.value("config_hash", "") != stage_config_hash(up, c)) {
    throw StageError(self, "stale upstream artifact: configuration changed since '" + name +
                               "' ran; rerun '" + name + "'");
  }
  for (const auto& [file, sum] : m.at("outputs").items()) {
    const auto path = c.run_dir() / file;
    if (!fs::exists(path)) {
      throw StageError(self, "missing upstream artifact " + file + "; run '" + name + "' first");
    }
    if (file_checksum(path) != sum.get<std::string>()) {
      throw StageError(self, "stale upstream artifact: " + file + " changed after '" + name +
                                 "' ran; rerun '" + name + "'");
    }
  }
  for (const auto& [file, sum] : m.at("inputs").items()) {
    const fs::path path = fs::path(file).is_absolute() ? fs::path(file) : c.run_dir() / file;
    if (!fs::exists(path) || file_checksum(path) != sum.get<std::string>()) {
      throw StageError(self, "stale upstream artifact: input " + file + " changed after '" + name +
                                 "' ran; rerun '" + name + "'");
    }
  }
  for (Stage u : direct_upstream(up)) verify_fresh(c, self, u, checked);
}

struct StageContext {
  const PipelineConfig& config;
  Stage stage;
  std::map<std::string, std::string> inputs;  // file -> checksum
  std::vector<std::pair<std::string, std::string>> outputs;

  fs::path dir() const { return config.run_dir(); }
  std::string read(const std::string& file) {
    const auto path = dir() / file;
    std::string bytes = read_file(path);
    inputs[file] = checksum_hex(bytes);
    return bytes;
  }
  void input_file(const fs::path& path) {
    inputs[fs::absolute(path).lexically_normal().string()] = file_checksum(path);
  }
  void write(const std::string& file, const std::string& bytes) {
    outputs.emplace_back(file, bytes);
  }
};

Corpus load_run_corpus(StageContext& ctx) {
  return parse_corpus(ctx.read("corpus.jsonl"), CorpusFormat::generic_jsonl);
}

SplitManifest load_run_split(StageContext& ctx) { return split_from_json(ctx.read("split.json")); }

std::map<Uid, const RelationInstance*> index_by_uid(const Corpus& corpus) {
  std::map<Uid, const RelationInstance*> out;
  for (const auto& inst : corpus) out[inst.uid] = &inst;
  return out;
}

void stage_split(StageContext& ctx) {
  const auto& c = ctx.config;
  ctx.input_file(c.dataset);
  Corpus corpus = load_corpus(c.dataset, c.format);
  if (c.hard_negatives) {
    if (!c.negative_class) throw Error("hard_negatives needs negative_class");
    ctx.input_file(*c.hard_negatives);
    corpus = augment_hard_negatives(corpus, load_corpus(*c.hard_negatives, c.format),
                                    *c.negative_class);
  }
  SplitOptions opts;
  opts.labeled_fraction = c.labeled_fraction;
  opts.seed = c.seed;
  opts.negative_class = c.negative_class;
  if (c.frequencies) {
    ctx.input_file(*c.frequencies);
    opts.frequencies = load_frequencies(*c.frequencies);
  }
  const SplitManifest split = build_grd_split(corpus, opts);
  verify_split(split, corpus);
  ctx.write("corpus.jsonl", to_jsonl(corpus));
  ctx.write("split.json", split_to_json(split));
}

void stage_resolve_types(StageContext& ctx, std::ostream& log) {
  const auto& c = ctx.config;
  const Corpus corpus = load_run_corpus(ctx);
  std::unique_ptr<MetaTypeResolver> resolver;
  if (c.ontology != "none") {
    std::shared_ptr<OntologySource> source;
    if (c.ontology == "fixture") {
      ctx.input_file(*c.ontology_fixture);
      source = std::make_shared<FixtureOntology>(load_ontology_fixture(*c.ontology_fixture));
    } else {
      WikidataOptions wopts;
      wopts.base_url = c.wikidata_url;
      source = std::make_shared<WikidataOntology>(wopts);
    }
    const fs::path cache = c.metatype_cache ? *c.metatype_cache : c.run_dir() / "metatype_cache.tsv";
    resolver = std::make_unique<MetaTypeResolver>(source, cache);
  }
  std::string out;
  std::size_t unknown = 0;
  for (const auto& inst : corpus) {
    const MetaTypePair pair = meta_type_of_pair(inst, resolver.get());
    unknown += (pair.head == kUnknownMetaType) + (pair.tail == kUnknownMetaType);
    out += std::to_string(inst.uid) + "\t" + pair.head + "\t" + pair.tail + "\n";
  }
  if (resolver) {
    resolver->flush();
    log << "[resolve_types] " << resolver->service_calls() << " ontology lookups, "
        << resolver->cache_size() << " cached ids\n";
  }
  if (unknown > 0) log << "[resolve_types] " << unknown << " entity sides resolved to unknown\n";
  ctx.write("metatypes.tsv", out);
}

json ranking_json(const TokenRanking& r) {
  json arr = json::array();
  for (const auto& e : r.entries) arr.push_back({e.token, e.score});
  return arr;
}

TokenRanking ranking_from_json(const json& arr, RankingMode mode) {
  TokenRanking r;
  r.mode = mode;
  for (const auto& e : arr) r.entries.push_back({e.at(0).get<std::string>(), e.at(1).get<double>()});
  return r;
}

void stage_train_prompt(StageContext& ctx, std::ostream& log) {
  const auto& c = ctx.config;
  const Corpus corpus = load_run_corpus(ctx);
  const SplitManifest split = load_run_split(ctx);
  std::vector<RelationInstance> labeled;
  for (const auto& inst : corpus) {
    if (split.labeled_uids.contains(inst.uid)) labeled.push_back(inst);
  }
  const Vocabulary vocab = build_vocabulary(corpus, split.known_classes);

  std::unique_ptr<MlmBackend> backend;
  MlmTrainReport report;
  if (c.mlm_backend == "tiny") {
    TinyMlmOptions topts;
    topts.seed = c.seed;
    topts.max_epochs = c.mlm_epochs;
    topts.learning_rate = c.mlm_learning_rate;
    auto tiny = std::make_unique<TinyMlm>(vocab, topts);
    auto [train, held] = split_heldout_relations(labeled, c.heldout_relations, split.negative_class, c.seed);
    const auto train_ex = make_training_batch(train, c.mask_rate, c.seed);
    std::vector<MaskedExample> held_ex;
    if (!held.empty()) held_ex = make_training_batch(held, c.mask_rate, c.seed);
    report = tiny->train(train_ex, held_ex);
    log << "[train_prompt] " << report.epochs_run << " epochs, best epoch " << report.best_epoch << "\n";
    backend = std::move(tiny);
  } else {
    backend = std::make_unique<StubMlm>(vocab, c.seed);
  }

  std::string rankings;
  for (const auto& inst : corpus) {
    const auto con = rank_tokens_constrained(inst, *backend, c.n_top_tokens);
    const auto unc = rank_tokens_unconstrained(inst, *backend, c.n_top_tokens);
    json rec = {{"uid", inst.uid},
                {"constrained", ranking_json(con)},
                {"unconstrained", ranking_json(unc)}};
    rankings += rec.dump() + "\n";
  }
  json rep = {{"backend", backend->name()},
              {"vocabulary_size", vocab.size()},
              {"epochs_run", report.epochs_run},
              {"best_epoch", report.best_epoch},
              {"train_loss", report.train_loss},
              {"heldout_perplexity", report.heldout_perplexity}};
  ctx.write("rankings.jsonl", rankings);
  ctx.write("mlm_report.json", rep.dump(2) + "\n");
}

void stage_represent(StageContext& ctx) {
  const auto& c = ctx.config;
  const HashProjectionEmbedder embedder(c.embedding_dim, c.seed);
  std::vector<RelationRepresentation> reps;
  std::istringstream in(ctx.read("rankings.jsonl"));
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const json rec = json::parse(line);
    reps.push_back(build_representation(
        rec.at("uid").get<Uid>(), ranking_from_json(rec.at("constrained"), RankingMode::constrained),
        ranking_from_json(rec.at("unconstrained"), RankingMode::unconstrained), embedder,
        c.n_top_tokens));
  }
  std::sort(reps.begin(), reps.end(), [](const auto& a, const auto& b) { return a.uid < b.uid; });
  ctx.write("representations.bin", encode_representation_cache(reps));
  ctx.write("representations.tsv", encode_representation_sidecar(reps));
}

std::map<Uid, MetaTypePair> read_metatypes(const std::string& text) {
  std::map<Uid, MetaTypePair> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string uid, head, tail;
    if (!std::getline(fields, uid, '\t') || !std::getline(fields, head, '\t') ||
        !std::getline(fields, tail)) {
      throw Error("malformed metatypes line: " + line);
    }
    out[static_cast<Uid>(std::stoul(uid))] = {head, tail};
  }
  return out;
}

void stage_cluster(StageContext& ctx, std::ostream& log) {
  const auto& c = ctx.config;
  const SplitManifest split = load_run_split(ctx);
  const std::string rep_bytes = ctx.read("representations.bin");
  const EmbeddedMatrix data = embed_matrix(decode_representation_cache(rep_bytes));
  const auto meta = read_metatypes(ctx.read("metatypes.tsv"));
  const std::size_t n_known = split.known_classes.size();

  GmmOptions gopts;
  gopts.components = c.k_multiplier * n_known;
  gopts.seed = c.seed;
  gopts.max_iter = c.gmm_max_iter;
  gopts.tol = c.gmm_tol;
  gopts.n_init = c.gmm_restarts;
  const GmmFit fit = fit_gmm(data.rows, gopts);
  log << "[cluster] K=" << gopts.components << ", " << fit.iterations << " EM iterations"
      << (fit.converged ? "" : " (not converged)") << "\n";

  ClusterState state = make_cluster_state(data, fit);
  state = adjust_by_metatype(state, fit.model, data.rows, meta, c.top_fraction,
                             c.adjust_metric == "euclidean" ? AdjustMetric::euclidean
                                                            : AdjustMetric::posterior);
  state = bifurcate_majority_vote(state, split.labeled_uids, n_known);
  const WeakLabelSet weak = select_weak_labels(state, split.labeled_uids, c.weak_label_percent);
  log << "[cluster] " << state.known_clusters.size() << " known clusters, "
      << state.novel_clusters.size() << " novel clusters, " << weak.entries.size()
      << " weak labels\n";
  ctx.write("clusters.json", cluster_state_to_json(state, weak, checksum_hex(rep_bytes)));
}

void stage_classify(StageContext& ctx, std::ostream& log) {
  const auto& c = ctx.config;
  const Corpus corpus = load_run_corpus(ctx);
  const SplitManifest split = load_run_split(ctx);
  const PersistedClusterState clusters = cluster_state_from_json(ctx.read("clusters.json"));

  const LabelSpace labels(split.known_classes,
                          novel_clusters_by_unlabeled_size(clusters.state, split.labeled_uids));
  std::vector<RelationInstance> gold, unlabeled;
  for (const auto& inst : corpus) {
    if (split.labeled_uids.contains(inst.uid)) {
      gold.push_back(inst);
    } else {
      unlabeled.push_back(inst);
    }
  }
  const auto by_uid = index_by_uid(corpus);
  const auto examples = build_training_set(gold, clusters.weak, by_uid, labels);

  std::unique_ptr<SequenceEncoder> encoder;
  if (c.encoder_backend == "tiny") {
    Vocabulary vocab;
    for (const auto& inst : corpus) {
      for (const auto& t : encode_with_markers(inst).tokens) vocab.add(t);
    }
    encoder = std::make_unique<TinyEncoder>(std::move(vocab), c.hidden_dim, c.seed);
  } else {
    encoder = std::make_unique<StubEncoder>(c.hidden_dim, c.seed);
  }
  TrainOptions topts;
  topts.epochs = c.classifier_epochs;
  topts.learning_rate = c.classifier_learning_rate;
  topts.batch_size = c.classifier_batch;
  topts.dropout = c.classifier_dropout;
  topts.max_grad_norm = c.classifier_max_grad_norm;
  topts.seed = c.seed;
  const ClassifierHead head = train_classifier(examples, labels, *encoder, topts);
  if (!head.loss_trace.empty()) {
    log << "[classify] " << examples.size() << " training examples, final loss "
        << head.loss_trace.back() << "\n";
  }

  const auto predictions = predict(unlabeled, head, *encoder);
  std::string out;
  for (const auto& [uid, p] : predictions) {
    char conf[32];
    std::snprintf(conf, sizeof conf, "%.6f", p.confidence);
    out += std::to_string(uid) + "\t" + std::to_string(p.label) + "\t" + labels.describe(p.label) +
           "\t" + conf + "\n";
  }
  ctx.write("head.ckpt", encode_head_checkpoint(head, labels));
  ctx.write("predictions.tsv", out);
}

std::string setting_label(const PipelineConfig& c) {
  const std::string base = c.setting.empty() ? c.dataset.stem().string() : c.setting;
  return base + "-seed" + std::to_string(c.seed);
}

EvaluationReport stage_evaluate(StageContext& ctx, std::ostream& log) {
  const auto& c = ctx.config;
  const Corpus corpus = load_run_corpus(ctx);
  const SplitManifest split = load_run_split(ctx);
  const LabelSpace labels = decode_head_checkpoint(ctx.read("head.ckpt")).second;
  std::map<Uid, std::size_t> predictions;
  std::istringstream in(ctx.read("predictions.tsv"));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string uid, label;
    if (!std::getline(fields, uid, '\t') || !std::getline(fields, label, '\t')) {
      throw Error("malformed prediction line: " + line);
    }
    predictions[static_cast<Uid>(std::stoul(uid))] = std::stoul(label);
  }
  std::map<Uid, std::string> gold;
  for (const auto& inst : corpus) {
    if (inst.gold_class) gold[inst.uid] = *inst.gold_class;
  }
  ScoreOptions sopts;
  sopts.exclude_negative = c.exclude_negative;
  const EvaluationReport report = map_and_score(predictions, gold, labels, split, sopts);
  const std::string setting = setting_label(c);
  ctx.write("report.json", report_to_json(report, setting));
  ctx.write("report.csv", report_csv_header() + report_csv_row(report, setting));
  log << table_header() << table_row(report, setting);
  return report;
}

json defaults_annotation(const PipelineConfig& c) {
  const PipelineConfig defaults;
  json out = json::object();
  for (const auto& key : config_keys()) {
    if (!key.source) continue;
    out[key.name] = {{"value", key.get(c)}, {"default", key.get(defaults)}, {"source", key.source}};
  }
  return out;
}

EvaluationReport run_stage_impl(Stage stage, const PipelineConfig& config, std::ostream& log,
                                StageResult& result) {
  std::set<Stage> checked;
  for (Stage up : direct_upstream(stage)) verify_fresh(config, stage, up, checked);

  const auto start = std::chrono::steady_clock::now();
  StageContext ctx{config, stage, {}, {}};
  EvaluationReport report;
  try {
    switch (stage) {
      case Stage::split: stage_split(ctx); break;
      case Stage::resolve_types: stage_resolve_types(ctx, log); break;
      case Stage::train_prompt: stage_train_prompt(ctx, log); break;
      case Stage::represent: stage_represent(ctx); break;
      case Stage::cluster: stage_cluster(ctx, log); break;
      case Stage::classify: stage_classify(ctx, log); break;
      case Stage::evaluate: report = stage_evaluate(ctx, log); break;
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }

  json outputs = json::object();
  for (const auto& [file, bytes] : ctx.outputs) {
    atomic_write(config.run_dir() / file, bytes);
    outputs[file] = checksum_hex(bytes);
    result.outputs.push_back(config.run_dir() / file);
  }
  result.stage = stage;
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const json manifest = {{"stage", stage_name(stage)},
                         {"config_hash", stage_config_hash(stage, config)},
                         {"inputs", ctx.inputs},
                         {"outputs", outputs},
                         {"wall_seconds", result.wall_seconds},
                         {"defaults", defaults_annotation(config)}};
  atomic_write(manifest_path(config, stage), manifest.dump(2) + "\n");
  return report;
}

}  // namespace

PipelineConfig parse_config(const std::string& text, const fs::path& base_dir) {
  PipelineConfig c;
  std::map<std::string, const ConfigKey*> by_name;
  for (const auto& k : config_keys()) by_name[k.name] = &k;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "output_dir") {
      c.output_dir = fs::path(value).is_absolute() ? fs::path(value) : base_dir / value;
      continue;
    }
    auto it = by_name.find(key);
    if (it == by_name.end()) {
      throw Error("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    it->second->set(c, value, base_dir);
  }
  validate(c);
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  return parse_config(read_file(path), path.parent_path());
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages = {Stage::split,     Stage::resolve_types,
                                            Stage::train_prompt, Stage::represent,
                                            Stage::cluster,   Stage::classify,
                                            Stage::evaluate};
  return stages;
}

std::string stage_name(Stage stage) {
  switch (stage) {
    case Stage::split: return "split";
    case Stage::resolve_types: return "resolve_types";
    case Stage::train_prompt: return "train_prompt";
    case Stage::represent: return "represent";
    case Stage::cluster: return "cluster";
    case Stage::classify: return "classify";
    case Stage::evaluate: return "evaluate";
  }
  return "?";
}

Stage parse_stage(const std::string& name) {
  for (Stage s : all_stages()) {
    if (stage_name(s) == name) return s;
  }
  throw Error("unknown stage '" + name + "'");
}

std::string stage_config_hash(Stage stage, const PipelineConfig& config) {
  std::set<Stage> stages;
  collect_ancestors(stage, stages);
  std::string canonical;
  for (const auto& key : config_keys()) {
    if (!stages.contains(key.stage)) continue;
    canonical += key.name;
    canonical += '=';
    canonical += key.get(config);
    canonical += '\n';
  }
  return checksum_hex(canonical);
}

StageResult run_stage(Stage stage, const PipelineConfig& config, std::ostream& log) {
  StageResult result;
  run_stage_impl(stage, config, log, result);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", result.wall_seconds);
  log << "[" << stage_name(stage) << "] done in " << buf << " s\n";
  return result;
}

EvaluationReport run_all(const PipelineConfig& config, std::ostream& out) {
  EvaluationReport report;
  for (Stage s : all_stages()) {
    StageResult result;
    report = run_stage_impl(s, config, out, result);
  }
  return report;
}

std::string table_header() {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-32s %9s %9s %9s\n", "setting", "F1(all)", "F1(known)",
                "F1(novel)");
  return buf;
}

std::string table_row(const EvaluationReport& r, const std::string& setting) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-32s %9.3f %9.3f %9.3f\n", setting.c_str(), r.f1_all,
                r.f1_known, r.f1_novel);
  return buf;
}

}  // namespace knord
