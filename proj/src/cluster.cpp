#include "knord/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace knord {

using nlohmann::json;

std::size_t ClusterState::row_of(Uid uid) const {
  auto it = std::lower_bound(uids.begin(), uids.end(), uid);
  if (it == uids.end() || *it != uid) {
    throw Error("uid " + std::to_string(uid) + " is not in the cluster state");
  }
  return static_cast<std::size_t>(it - uids.begin());
}

std::vector<std::size_t> ClusterState::sizes() const {
  std::vector<std::size_t> out(components, 0);
  for (auto c : assignments) ++out[c];
  return out;
}

ClusterState make_cluster_state(const EmbeddedMatrix& data, const GmmFit& fit) {
  ClusterState s;
  s.components = fit.model.components();
  s.uids = data.uids;
  s.assignments = fit.assignments;
  s.posteriors = fit.posteriors;
  s.votes.assign(s.components, 0);
  return s;
}

namespace {

// Rows of a cluster's members, best posterior first (ties by uid).
std::vector<std::size_t> members_by_quality(const ClusterState& s, std::size_t cluster) {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < s.uids.size(); ++r) {
    if (s.assignments[r] == cluster) rows.push_back(r);
  }
  std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
    return s.posteriors(a, cluster) > s.posteriors(b, cluster);
  });
  return rows;
}

}  // namespace

ClusterState adjust_by_metatype(const ClusterState& state, const GaussianMixture& mixture,
                                const Matrix& rows, const std::map<Uid, MetaTypePair>& meta,
                                double top_fraction, AdjustMetric metric) {
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) {
    throw Error("top_fraction must be in (0, 1]");
  }
  std::vector<const MetaTypePair*> pair_of(state.uids.size());
  for (std::size_t r = 0; r < state.uids.size(); ++r) {
    auto it = meta.find(state.uids[r]);
    if (it == meta.end()) {
      throw Error("uid " + std::to_string(state.uids[r]) + " has no meta-type pair");
    }
    pair_of[r] = &it->second;
  }

  ClusterState out = state;
  out.cluster_meta.clear();
  for (std::size_t c = 0; c < state.components; ++c) {
    const auto members = members_by_quality(state, c);
    if (members.empty()) continue;
    const std::size_t top = std::max<std::size_t>(1, ceil_fraction(top_fraction, members.size()));
    std::map<MetaTypePair, std::size_t> counts;
    for (std::size_t i = 0; i < top; ++i) ++counts[*pair_of[members[i]]];
    // std::map iterates pairs in ascending order, so the first maximum wins ties.
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    out.cluster_meta[c] = best->first;
  }

  for (std::size_t r = 0; r < state.uids.size(); ++r) {
    std::optional<std::size_t> target;
    double best_score = -std::numeric_limits<double>::infinity();
    for (const auto& [c, pair] : out.cluster_meta) {
      if (pair != *pair_of[r]) continue;
      double score;
      if (metric == AdjustMetric::posterior) {
        score = state.posteriors(r, c);
      } else {
        double d = 0.0;
        for (std::size_t j = 0; j < rows.cols(); ++j) {
          const double diff = rows(r, j) - mixture.means(c, j);
          d += diff * diff;
        }
        score = -d;
      }
      if (score > best_score) {
        best_score = score;
        target = c;
      }
    }
    if (target) out.assignments[r] = *target;
  }
  return out;
}

ClusterState bifurcate_majority_vote(const ClusterState& state, const std::set<Uid>& labeled,
                                     std::size_t n_known) {
  ClusterState out = state;
  out.votes.assign(state.components, 0);
  std::size_t total_labeled = 0;
  for (std::size_t r = 0; r < state.uids.size(); ++r) {
    if (labeled.contains(state.uids[r])) {
      ++out.votes[state.assignments[r]];
      ++total_labeled;
    }
  }
  const auto sizes = state.sizes();
  const double global = state.uids.empty()
                            ? 0.0
                            : static_cast<double>(total_labeled) /
                                  static_cast<double>(state.uids.size());
  out.known_clusters.clear();
  out.novel_clusters.clear();
  for (std::size_t c = 0; c < state.components; ++c) {
    const bool known = sizes[c] > 0 && static_cast<double>(out.votes[c]) /
                                                static_cast<double>(sizes[c]) >
                                            global;
    (known ? out.known_clusters : out.novel_clusters).insert(c);
  }

  if (state.components >= 2 && (out.known_clusters.empty() || out.novel_clusters.empty())) {
    std::vector<std::size_t> order(state.components);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return out.votes[a] > out.votes[b]; });
    const std::size_t take = std::clamp<std::size_t>(n_known, 1, state.components - 1);
    out.known_clusters.clear();
    out.novel_clusters.clear();
    for (std::size_t i = 0; i < order.size(); ++i) {
      (i < take ? out.known_clusters : out.novel_clusters).insert(order[i]);
    }
  }
  return out;
}

WeakLabelSet select_weak_labels(const ClusterState& state, const std::set<Uid>& labeled,
                                double percent) {
  if (!(percent > 0.0 && percent <= 100.0)) throw Error("P must be in (0, 100]");
  WeakLabelSet out;
  out.percent = percent;
  for (std::size_t c : state.novel_clusters) {
    std::vector<std::size_t> pool;
    for (std::size_t r : members_by_quality(state, c)) {
      if (!labeled.contains(state.uids[r])) pool.push_back(r);
    }
    if (pool.empty()) continue;
    const std::size_t take =
        std::min(pool.size(), std::max<std::size_t>(1, ceil_fraction(percent / 100.0, pool.size())));
    for (std::size_t i = 0; i < take; ++i) {
      out.entries.push_back({state.uids[pool[i]], c, state.posteriors(pool[i], c)});
    }
  }
  return out;
}

std::vector<std::size_t> novel_clusters_by_unlabeled_size(const ClusterState& state,
                                                          const std::set<Uid>& labeled) {
  std::map<std::size_t, std::size_t> unlabeled_size;
  for (std::size_t c : state.novel_clusters) unlabeled_size[c] = 0;
  for (std::size_t r = 0; r < state.uids.size(); ++r) {
    auto it = unlabeled_size.find(state.assignments[r]);
    if (it != unlabeled_size.end() && !labeled.contains(state.uids[r])) ++it->second;
  }
  std::vector<std::size_t> order(state.novel_clusters.begin(), state.novel_clusters.end());
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return unlabeled_size[a] > unlabeled_size[b];
  });
  return order;
}

std::string cluster_state_to_json(const ClusterState& s, const WeakLabelSet& weak,
                                  const std::string& representation_checksum) {
  json meta = json::array();
  for (const auto& [c, pair] : s.cluster_meta) {
    meta.push_back({{"cluster", c}, {"head", pair.head}, {"tail", pair.tail}});
  }
  json posteriors = json::array();
  for (std::size_t r = 0; r < s.uids.size(); ++r) {
    const auto row = s.posteriors.row(r);
    posteriors.push_back(std::vector<double>(row.begin(), row.end()));
  }
  json weak_entries = json::array();
  for (const auto& w : weak.entries) {
    weak_entries.push_back({{"uid", w.uid}, {"cluster", w.cluster}, {"quality", w.quality}});
  }
  const json doc = {
      {"representation_checksum", representation_checksum},
      {"components", s.components},
      {"uids", s.uids},
      {"assignments", s.assignments},
      {"posteriors", posteriors},
      {"votes", s.votes},
      {"cluster_meta", meta},
      {"known_clusters", std::vector<std::size_t>(s.known_clusters.begin(), s.known_clusters.end())},
      {"novel_clusters", std::vector<std::size_t>(s.novel_clusters.begin(), s.novel_clusters.end())},
      {"weak_label_percent", weak.percent},
      {"weak_labels", weak_entries},
  };
  return doc.dump(1) + "\n";
}

PersistedClusterState cluster_state_from_json(const std::string& text) {
  PersistedClusterState p;
  try {
    const json doc = json::parse(text);
    auto& s = p.state;
    p.representation_checksum = doc.at("representation_checksum").get<std::string>();
    s.components = doc.at("components").get<std::size_t>();
    s.uids = doc.at("uids").get<std::vector<Uid>>();
    s.assignments = doc.at("assignments").get<std::vector<std::size_t>>();
    s.posteriors = Matrix(s.uids.size(), s.components);
    const auto& post = doc.at("posteriors");
    for (std::size_t r = 0; r < s.uids.size(); ++r) {
      for (std::size_t c = 0; c < s.components; ++c) s.posteriors(r, c) = post.at(r).at(c);
    }
    s.votes = doc.at("votes").get<std::vector<std::size_t>>();
    for (const auto& m : doc.at("cluster_meta")) {
      s.cluster_meta[m.at("cluster").get<std::size_t>()] = {m.at("head").get<std::string>(),
                                                            m.at("tail").get<std::string>()};
    }
    for (auto c : doc.at("known_clusters").get<std::vector<std::size_t>>()) s.known_clusters.insert(c);
    for (auto c : doc.at("novel_clusters").get<std::vector<std::size_t>>()) s.novel_clusters.insert(c);
    p.weak.percent = doc.at("weak_label_percent").get<double>();
    for (const auto& w : doc.at("weak_labels")) {
      p.weak.entries.push_back({w.at("uid").get<Uid>(), w.at("cluster").get<std::size_t>(),
                                w.at("quality").get<double>()});
    }
  } catch (const json::exception& e) {
    throw Error(std::string("malformed cluster state: ") + e.what());
  }
  return p;
}

}  // namespace knord
