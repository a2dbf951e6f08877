#pragma once

#include "knord/gmm.hpp"
#include "knord/metatype.hpp"
#include "knord/representation.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace knord {

struct ClusterState {
  std::size_t components = 0;
  std::vector<Uid> uids;                 // ascending; row order of posteriors
  std::vector<std::size_t> assignments;  // aligned with uids
  Matrix posteriors;                     // |uids| x components
  std::map<std::size_t, MetaTypePair> cluster_meta;
  std::vector<std::size_t> votes;  // labeled members per cluster
  std::set<std::size_t> known_clusters;
  std::set<std::size_t> novel_clusters;

  std::size_t row_of(Uid uid) const;
  std::size_t cluster_of(Uid uid) const { return assignments[row_of(uid)]; }
  std::vector<std::size_t> sizes() const;
};

ClusterState make_cluster_state(const EmbeddedMatrix& data, const GmmFit& fit);

enum class AdjustMetric { posterior, euclidean };

// Labels each cluster with the modal meta-type pair of its top
// ⌈top_fraction·size⌉ members by posterior (ties: smallest pair), then moves
// every instance to its nearest cluster carrying the instance's own pair.
// Instances whose pair labels no cluster stay put. Runs once.
ClusterState adjust_by_metatype(const ClusterState& state, const GaussianMixture& mixture,
                                const Matrix& rows, const std::map<Uid, MetaTypePair>& meta,
                                double top_fraction = 0.30,
                                AdjustMetric metric = AdjustMetric::posterior);

// Each labeled instance votes for its cluster. A cluster is known when its
// labeled density exceeds the global labeled fraction. If that leaves either
// side empty, the n_known clusters with the most votes are known instead.
ClusterState bifurcate_majority_vote(const ClusterState& state, const std::set<Uid>& labeled,
                                     std::size_t n_known);

struct WeakLabel {
  Uid uid = 0;
  std::size_t cluster = 0;
  double quality = 0.0;  // posterior of that cluster
};

struct WeakLabelSet {
  std::vector<WeakLabel> entries;  // grouped by cluster, quality descending
  double percent = 15.0;
};

// Per novel cluster, the top max(1, ⌈P/100·size⌉) unlabeled members by
// posterior, where size counts the cluster's unlabeled members.
WeakLabelSet select_weak_labels(const ClusterState& state, const std::set<Uid>& labeled,
                                double percent = 15.0);

// Novel clusters by unlabeled member count, largest first (ties by id), so the
// biggest keep a label slot when there are more clusters than slots.
std::vector<std::size_t> novel_clusters_by_unlabeled_size(const ClusterState& state,
                                                          const std::set<Uid>& labeled);

std::string cluster_state_to_json(const ClusterState& state, const WeakLabelSet& weak,
                                   const std::string& representation_checksum);
struct PersistedClusterState {
  ClusterState state;
  WeakLabelSet weak;
  std::string representation_checksum;
};
PersistedClusterState cluster_state_from_json(const std::string& text);

}  // namespace knord
