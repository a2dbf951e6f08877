#pragma once

#include "knord/corpus.hpp"
#include "knord/evaluation.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace knord {

struct PipelineConfig {
  std::filesystem::path dataset;
  CorpusFormat format = CorpusFormat::generic_jsonl;
  std::optional<std::filesystem::path> hard_negatives;  // extra negatives merged at split time
  std::optional<std::filesystem::path> frequencies;
  std::optional<std::string> negative_class;

  std::string ontology = "none";  // none | fixture | wikidata
  std::optional<std::filesystem::path> ontology_fixture;
  std::string wikidata_url = "https://www.wikidata.org";
  std::optional<std::filesystem::path> metatype_cache;

  std::uint64_t seed = 41;
  double labeled_fraction = 0.85;
  double mask_rate = 0.15;
  std::size_t n_top_tokens = 3;
  double top_fraction = 0.30;
  double weak_label_percent = 15.0;
  std::size_t k_multiplier = 3;

  std::string mlm_backend = "stub";      // stub | tiny
  std::string encoder_backend = "stub";  // stub | tiny
  std::size_t embedding_dim = 64;
  std::size_t hidden_dim = 64;
  std::size_t heldout_relations = 5;
  std::size_t mlm_epochs = 30;
  double mlm_learning_rate = 1e-2;

  std::size_t gmm_restarts = 5;
  std::size_t gmm_max_iter = 200;
  double gmm_tol = 1e-4;
  std::string adjust_metric = "posterior";  // posterior | euclidean

  std::size_t classifier_epochs = 5;
  double classifier_learning_rate = 1e-3;
  std::size_t classifier_batch = 128;
  double classifier_dropout = 0.2;
  double classifier_max_grad_norm = 1.0;

  bool exclude_negative = false;
  std::string setting;  // report row label; defaults to the dataset file stem
  std::filesystem::path output_dir = "runs";

  // Artifacts of one run live here: output_dir/seed-<seed>.
  std::filesystem::path run_dir() const;
};

// Flat "key = value" text; '#' starts a comment. Relative paths resolve
// against base_dir.
PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);

enum class Stage { split, resolve_types, train_prompt, represent, cluster, classify, evaluate };

const std::vector<Stage>& all_stages();
std::string stage_name(Stage stage);
Stage parse_stage(const std::string& name);

// Errors raised inside a stage carry its name: "[cluster] ...".
class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& what)
      : Error("[" + stage_name(stage) + "] " + what), stage_(stage) {}
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

// Hash over the configuration keys a stage and its upstream stages read.
std::string stage_config_hash(Stage stage, const PipelineConfig& config);

struct StageResult {
  Stage stage = Stage::split;
  std::vector<std::filesystem::path> outputs;
  double wall_seconds = 0.0;
};

// Checks upstream manifests, runs the stage, writes its artifacts atomically
// and then <stage>.manifest.json.
StageResult run_stage(Stage stage, const PipelineConfig& config, std::ostream& log);

// Every stage in order; prints the report row to out.
EvaluationReport run_all(const PipelineConfig& config, std::ostream& out);

std::string table_header();
std::string table_row(const EvaluationReport& report, const std::string& setting);

}  // namespace knord
