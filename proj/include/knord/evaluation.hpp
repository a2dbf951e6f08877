#pragma once

#include "knord/classifier.hpp"
#include "knord/corpus.hpp"
#include "knord/representation.hpp"
#include "knord/types.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace knord {

enum class AssignmentMode { minimize_cost, maximize_overlap };

struct Assignment {
  std::vector<std::optional<std::size_t>> row_to_col;  // nullopt: unmatched row
  double total = 0.0;  // sum of matched entries of the input matrix
};

// Optimal one-to-one assignment (Kuhn-Munkres with potentials, O(n^3)).
// Rectangular inputs are zero-padded to square; rows matched to padding
// come back unmatched.
Assignment hungarian_assign(const Matrix& matrix, AssignmentMode mode);

struct ScoreOptions {
  // Drop instances whose gold class is the hard-negative class from every subset.
  bool exclude_negative = false;
};

struct EvaluationReport {
  double f1_all = 0.0;
  double f1_known = 0.0;
  double f1_novel = 0.0;
  std::size_t n_all = 0, n_known = 0, n_novel = 0;
  std::size_t correct_all = 0, correct_known = 0, correct_novel = 0;
  std::map<std::size_t, std::string> mapping;  // label id -> class name or "unmatched"
  std::vector<std::string> classes;            // contingency columns: known then novel
  std::vector<std::vector<std::size_t>> contingency;  // label id x class
};

inline constexpr const char* kUnmatched = "unmatched";

// Known ids map to their own classes; novel slots map to novel classes by
// maximum-overlap assignment. Micro-F1 over single-label predictions equals
// accuracy, reported over all unlabeled instances and the known/novel subsets.
EvaluationReport map_and_score(const std::map<Uid, std::size_t>& predictions,
                               const std::map<Uid, std::string>& gold, const LabelSpace& labels,
                               const SplitManifest& split, const ScoreOptions& options = {});

std::string report_to_json(const EvaluationReport& report, const std::string& setting);
std::string report_csv_header();
std::string report_csv_row(const EvaluationReport& report, const std::string& setting);

enum class Bifurcation { known, novel };

// Threshold at the mean labeled confidence; strictly below it is novel.
std::map<Uid, Bifurcation> confidence_bifurcate(const std::vector<double>& labeled_confidences,
                                                const std::map<Uid, double>& unlabeled);

struct FreeformMapping {
  std::size_t class_index = 0;
  std::string class_name;
  double similarity = 0.0;
};

// Maps free-form predicted names to the ground-truth class whose embedding
// has the highest cosine similarity; the denominator is floored at epsilon.
std::vector<FreeformMapping> map_freeform_labels(const std::vector<std::string>& predicted,
                                                 const std::vector<std::string>& ground_truth,
                                                 const PhraseEmbedder& embedder,
                                                 double epsilon = 1e-8);

}  // namespace knord
