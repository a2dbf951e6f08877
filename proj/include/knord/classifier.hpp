#pragma once

#include "knord/cluster.hpp"
#include "knord/corpus.hpp"
#include "knord/encoder.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace knord {

inline constexpr const char* kHeadOpen = "<H>";
inline constexpr const char* kHeadClose = "</H>";
inline constexpr const char* kTailOpen = "<T>";
inline constexpr const char* kTailClose = "</T>";
inline constexpr std::size_t kTypePrefixLength = 3;  // head_type tail_type ":"

struct MarkedSequence {
  std::vector<std::string> tokens;
  Span head_range;  // entity tokens only, markers excluded
  Span tail_range;
};

// "<head_type> <tail_type> :" followed by the sentence with <H>..</H> and
// <T>..</T> around the entity spans.
MarkedSequence encode_with_markers(const RelationInstance& instance);
// Inverse of encode_with_markers on the sentence tokens.
std::vector<std::string> strip_markers(const MarkedSequence& sequence);

// ⟨mean of head hiddens, mean of tail hiddens⟩, length 2H.
std::vector<double> relation_representation(const MarkedSequence& sequence,
                                            const SequenceEncoder& encoder);
std::vector<double> relation_representation(const MarkedSequence& sequence, const Matrix& hidden);

// Known ids 0..k-1 are the known classes; ids k..3k-1 are novel slots bound
// to novel cluster ids in order. N = 3k.
class LabelSpace {
 public:
  LabelSpace() = default;
  // Clusters beyond the 2k novel slots are dropped; callers order them by priority.
  LabelSpace(std::vector<std::string> known_classes, std::vector<std::size_t> novel_clusters);

  std::size_t size() const { return 3 * known_.size(); }
  std::size_t known_count() const { return known_.size(); }
  bool is_known_id(std::size_t id) const { return id < known_.size(); }

  std::optional<std::size_t> known_id(const std::string& cls) const;
  std::optional<std::size_t> slot_of_cluster(std::size_t cluster) const;
  // Known class name, or the cluster bound to a novel slot (nullopt if unused).
  const std::string& known_class(std::size_t id) const { return known_.at(id); }
  std::optional<std::size_t> cluster_of_slot(std::size_t id) const;
  std::string describe(std::size_t id) const;

  const std::vector<std::string>& known_classes() const { return known_; }
  const std::vector<std::size_t>& novel_clusters() const { return novel_; }

 private:
  std::vector<std::string> known_;
  std::vector<std::size_t> novel_;
};

struct TrainingExample {
  Uid uid = 0;
  MarkedSequence sequence;
  std::size_t label = 0;
};

// Gold known-class instances plus weak-labeled unlabeled instances.
std::vector<TrainingExample> build_training_set(std::span<const RelationInstance> gold,
                                                const WeakLabelSet& weak,
                                                const std::map<Uid, const RelationInstance*>& by_uid,
                                                const LabelSpace& labels);

struct ClassifierHead {
  Matrix weights;             // N x 2H
  std::vector<double> bias;   // N
  std::vector<double> loss_trace;  // mean training loss per epoch

  std::vector<double> logits(std::span<const double> features) const;
  std::vector<double> probabilities(std::span<const double> features) const;
};

struct TrainOptions {
  std::size_t epochs = 5;
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  double dropout = 0.2;
  double max_grad_norm = 1.0;
  double weight_decay = 0.01;
  std::uint64_t seed = 42;
};

// Mean softmax cross-entropy over a batch and its gradients.
struct CrossEntropyGrad {
  double loss = 0.0;
  Matrix d_weights;
  std::vector<double> d_bias;
  Matrix d_features;
};
CrossEntropyGrad softmax_cross_entropy(const Matrix& features, std::span<const std::size_t> labels,
                                       const Matrix& weights, std::span<const double> bias);

std::vector<double> softmax(std::span<const double> logits);

// AdamW on the linear head (and the encoder, when trainable). Labels outside
// the space are rejected before any update.
ClassifierHead train_classifier(std::span<const TrainingExample> examples,
                                const LabelSpace& labels, SequenceEncoder& encoder,
                                const TrainOptions& options);

struct Prediction {
  std::size_t label = 0;
  double confidence = 0.0;  // max output probability
};

std::map<Uid, Prediction> predict(std::span<const RelationInstance> instances,
                                  const ClassifierHead& head, const SequenceEncoder& encoder);

// Header "KNORDHEAD 1 N=<n> F=<2H> encoding=f32le", label lines, "end", then
// N*F weights and N biases as f32le.
std::string encode_head_checkpoint(const ClassifierHead& head, const LabelSpace& labels);
std::pair<ClassifierHead, LabelSpace> decode_head_checkpoint(const std::string& bytes);

}  // namespace knord
