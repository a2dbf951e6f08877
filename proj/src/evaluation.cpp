#include "knord/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace knord {

using nlohmann::json;

Assignment hungarian_assign(const Matrix& matrix, AssignmentMode mode) {
  const std::size_t rows = matrix.rows(), cols = matrix.cols();
  if (rows == 0 || cols == 0) throw Error("assignment matrix is empty");
  for (double v : matrix.data()) {
    if (!std::isfinite(v)) throw Error("assignment matrix has a non-finite entry");
  }
  const std::size_t n = std::max(rows, cols);
  const double sign = mode == AssignmentMode::maximize_overlap ? -1.0 : 1.0;
  auto cost = [&](std::size_t i, std::size_t j) {
    return (i < rows && j < cols) ? sign * matrix(i, j) : 0.0;
  };

  // 1-based potentials; p[j] is the row matched to column j.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment a;
  a.row_to_col.assign(rows, std::nullopt);
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j] - 1;
    if (i < rows && j - 1 < cols) a.row_to_col[i] = j - 1;
  }
  for (std::size_t i = 0; i < rows; ++i) {
    if (a.row_to_col[i]) a.total += matrix(i, *a.row_to_col[i]);
  }
  return a;
}

EvaluationReport map_and_score(const std::map<Uid, std::size_t>& predictions,
                               const std::map<Uid, std::string>& gold, const LabelSpace& labels,
                               const SplitManifest& split, const ScoreOptions& options) {
  std::vector<Uid> universe;
  std::vector<Uid> missing;
  for (Uid uid : split.unlabeled_uids) {
    auto g = gold.find(uid);
    if (g == gold.end()) throw Error("no gold class for unlabeled uid " + std::to_string(uid));
    if (options.exclude_negative && split.negative_class && g->second == *split.negative_class) {
      continue;
    }
    if (!predictions.contains(uid)) {
      missing.push_back(uid);
      continue;
    }
    universe.push_back(uid);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) {
      list += (i ? "," : "") + std::to_string(missing[i]);
    }
    if (missing.size() > 20) list += ",...";
    throw Error("missing predictions for " + std::to_string(missing.size()) + " uids: " + list);
  }

  EvaluationReport rep;
  rep.classes = split.known_classes;
  rep.classes.insert(rep.classes.end(), split.novel_classes.begin(), split.novel_classes.end());
  std::map<std::string, std::size_t> class_index;
  for (std::size_t i = 0; i < rep.classes.size(); ++i) class_index[rep.classes[i]] = i;
  const std::size_t n_labels = labels.size();
  rep.contingency.assign(n_labels, std::vector<std::size_t>(rep.classes.size(), 0));
  for (Uid uid : universe) {
    const std::size_t label = predictions.at(uid);
    if (label >= n_labels) throw Error("prediction for uid " + std::to_string(uid) + " out of range");
    auto ci = class_index.find(gold.at(uid));
    if (ci == class_index.end()) {
      throw Error("gold class '" + gold.at(uid) + "' is neither known nor novel");
    }
    ++rep.contingency[label][ci->second];
  }

  for (std::size_t id = 0; id < labels.known_count(); ++id) rep.mapping[id] = labels.known_class(id);
  const std::size_t k = labels.known_count();
  const std::size_t n_slots = n_labels - k;
  const std::size_t n_novel = split.novel_classes.size();
  for (std::size_t s = 0; s < n_slots; ++s) rep.mapping[k + s] = kUnmatched;
  if (n_slots > 0 && n_novel > 0) {
    Matrix overlap(n_slots, n_novel);
    for (std::size_t s = 0; s < n_slots; ++s)
      for (std::size_t c = 0; c < n_novel; ++c)
        overlap(s, c) = static_cast<double>(rep.contingency[k + s][split.known_classes.size() + c]);
    const auto a = hungarian_assign(overlap, AssignmentMode::maximize_overlap);
    for (std::size_t s = 0; s < n_slots; ++s) {
      if (a.row_to_col[s]) rep.mapping[k + s] = split.novel_classes[*a.row_to_col[s]];
    }
  }

  for (Uid uid : universe) {
    const std::string& g = gold.at(uid);
    const bool correct = rep.mapping.at(predictions.at(uid)) == g;
    ++rep.n_all;
    rep.correct_all += correct;
    if (split.is_known(g)) {
      ++rep.n_known;
      rep.correct_known += correct;
    } else {
      ++rep.n_novel;
      rep.correct_novel += correct;
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  rep.f1_all = ratio(rep.correct_all, rep.n_all);
  rep.f1_known = ratio(rep.correct_known, rep.n_known);
  rep.f1_novel = ratio(rep.correct_novel, rep.n_novel);
  return rep;
}

std::string report_to_json(const EvaluationReport& r, const std::string& setting) {
  json mapping = json::object();
  for (const auto& [id, cls] : r.mapping) mapping[std::to_string(id)] = cls;
  const json doc = {
      {"setting", setting},
      {"f1_all", r.f1_all},
      {"f1_known", r.f1_known},
      {"f1_novel", r.f1_novel},
      {"n_all", r.n_all},
      {"n_known", r.n_known},
      {"n_novel", r.n_novel},
      {"correct_all", r.correct_all},
      {"correct_known", r.correct_known},
      {"correct_novel", r.correct_novel},
      {"mapping", mapping},
      {"classes", r.classes},
      {"contingency", r.contingency},
  };
  return doc.dump(2) + "\n";
}

std::string report_csv_header() { return "setting,f1_all,f1_known,f1_novel\n"; }

std::string report_csv_row(const EvaluationReport& r, const std::string& setting) {
  char buf[128];
  std::snprintf(buf, sizeof buf, ",%.3f,%.3f,%.3f\n", r.f1_all, r.f1_known, r.f1_novel);
  return setting + buf;
}

std::map<Uid, Bifurcation> confidence_bifurcate(const std::vector<double>& labeled_confidences,
                                                const std::map<Uid, double>& unlabeled) {
  if (labeled_confidences.empty()) throw Error("need labeled confidences for the threshold");
  const double tau = std::accumulate(labeled_confidences.begin(), labeled_confidences.end(), 0.0) /
                     static_cast<double>(labeled_confidences.size());
  std::map<Uid, Bifurcation> out;
  for (const auto& [uid, conf] : unlabeled) {
    out[uid] = conf < tau ? Bifurcation::novel : Bifurcation::known;
  }
  return out;
}

std::vector<FreeformMapping> map_freeform_labels(const std::vector<std::string>& predicted,
                                                 const std::vector<std::string>& ground_truth,
                                                 const PhraseEmbedder& embedder, double epsilon) {
  if (ground_truth.empty()) throw Error("ground-truth class list is empty");
  auto norm = [](const std::vector<double>& v) {
    return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  };
  std::vector<std::vector<double>> gt;
  std::vector<double> gt_norm;
  for (const auto& name : ground_truth) {
    gt.push_back(embedder.embed(name));
    gt_norm.push_back(norm(gt.back()));
  }
  std::vector<FreeformMapping> out;
  for (const auto& name : predicted) {
    const auto z = embedder.embed(name);
    const double zn = norm(z);
    FreeformMapping best{0, ground_truth[0], -std::numeric_limits<double>::infinity()};
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const double sim = std::inner_product(z.begin(), z.end(), gt[j].begin(), 0.0) /
                         std::max(zn * gt_norm[j], epsilon);
      if (sim > best.similarity) best = {j, ground_truth[j], sim};
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace knord
