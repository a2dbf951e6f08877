#include "knord/classifier.hpp"

#include "knord/io.hpp"
#include "knord/optim.hpp"
#include "knord/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace knord {

MarkedSequence encode_with_markers(const RelationInstance& inst) {
  validate_spans(inst, inst.uid);
  if (inst.head.overlaps(inst.tail)) {
    throw Error("instance " + std::to_string(inst.uid) + ": head and tail spans overlap");
  }
  MarkedSequence seq;
  seq.tokens = {inst.head_type.empty() ? "unknown" : inst.head_type,
                inst.tail_type.empty() ? "unknown" : inst.tail_type, ":"};
  for (std::size_t i = 0; i <= inst.tokens.size(); ++i) {
    if (i == inst.head.end) {
      seq.head_range.end = seq.tokens.size();
      seq.tokens.emplace_back(kHeadClose);
    }
    if (i == inst.tail.end) {
      seq.tail_range.end = seq.tokens.size();
      seq.tokens.emplace_back(kTailClose);
    }
    if (i == inst.tokens.size()) break;
    if (i == inst.head.start) {
      seq.tokens.emplace_back(kHeadOpen);
      seq.head_range.start = seq.tokens.size();
    }
    if (i == inst.tail.start) {
      seq.tokens.emplace_back(kTailOpen);
      seq.tail_range.start = seq.tokens.size();
    }
    seq.tokens.push_back(inst.tokens[i]);
  }
  return seq;
}

std::vector<std::string> strip_markers(const MarkedSequence& seq) {
  std::vector<std::string> out;
  for (std::size_t i = kTypePrefixLength; i < seq.tokens.size(); ++i) {
    const auto& t = seq.tokens[i];
    if (t == kHeadOpen || t == kHeadClose || t == kTailOpen || t == kTailClose) continue;
    out.push_back(t);
  }
  return out;
}

std::vector<double> relation_representation(const MarkedSequence& seq, const Matrix& hidden) {
  if (hidden.rows() != seq.tokens.size()) throw Error("encoder output length mismatch");
  const std::size_t h = hidden.cols();
  std::vector<double> out(2 * h, 0.0);
  auto pool = [&](const Span& range, std::size_t offset) {
    if (range.size() == 0 || range.end > hidden.rows()) throw Error("empty entity range");
    for (std::size_t i = range.start; i < range.end; ++i)
      for (std::size_t k = 0; k < h; ++k) out[offset + k] += hidden(i, k);
    for (std::size_t k = 0; k < h; ++k) out[offset + k] /= static_cast<double>(range.size());
  };
  pool(seq.head_range, 0);
  pool(seq.tail_range, h);
  return out;
}

std::vector<double> relation_representation(const MarkedSequence& seq,
                                            const SequenceEncoder& encoder) {
  return relation_representation(seq, encoder.encode(seq.tokens));
}

// --- label space ---

LabelSpace::LabelSpace(std::vector<std::string> known_classes,
                       std::vector<std::size_t> novel_clusters)
    : known_(std::move(known_classes)), novel_(std::move(novel_clusters)) {
  if (known_.empty()) throw Error("label space needs at least one known class");
  if (novel_.size() > 2 * known_.size()) novel_.resize(2 * known_.size());
  std::vector<std::string> k = known_;
  std::sort(k.begin(), k.end());
  if (std::adjacent_find(k.begin(), k.end()) != k.end()) throw Error("duplicate known class");
  std::vector<std::size_t> n = novel_;
  std::sort(n.begin(), n.end());
  if (std::adjacent_find(n.begin(), n.end()) != n.end()) throw Error("duplicate novel cluster");
}

std::optional<std::size_t> LabelSpace::known_id(const std::string& cls) const {
  auto it = std::find(known_.begin(), known_.end(), cls);
  if (it == known_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - known_.begin());
}

std::optional<std::size_t> LabelSpace::slot_of_cluster(std::size_t cluster) const {
  auto it = std::find(novel_.begin(), novel_.end(), cluster);
  if (it == novel_.end()) return std::nullopt;
  return known_.size() + static_cast<std::size_t>(it - novel_.begin());
}

std::optional<std::size_t> LabelSpace::cluster_of_slot(std::size_t id) const {
  if (id < known_.size() || id - known_.size() >= novel_.size()) return std::nullopt;
  return novel_[id - known_.size()];
}

std::string LabelSpace::describe(std::size_t id) const {
  if (id < known_.size()) return known_[id];
  if (auto c = cluster_of_slot(id)) return "novel_cluster_" + std::to_string(*c);
  return "novel_slot_" + std::to_string(id);
}

std::vector<TrainingExample> build_training_set(std::span<const RelationInstance> gold,
                                                const WeakLabelSet& weak,
                                                const std::map<Uid, const RelationInstance*>& by_uid,
                                                const LabelSpace& labels) {
  std::vector<TrainingExample> out;
  for (const auto& inst : gold) {
    if (!inst.gold_class) throw Error("gold instance " + std::to_string(inst.uid) + " unlabeled");
    auto id = labels.known_id(*inst.gold_class);
    if (!id) {
      throw Error("gold label '" + *inst.gold_class + "' of uid " + std::to_string(inst.uid) +
                  " is not a known class");
    }
    out.push_back({inst.uid, encode_with_markers(inst), *id});
  }
  for (const auto& w : weak.entries) {
    auto slot = labels.slot_of_cluster(w.cluster);
    if (!slot) continue;  // cluster beyond the novel slot budget
    auto it = by_uid.find(w.uid);
    if (it == by_uid.end()) throw Error("weak label for unknown uid " + std::to_string(w.uid));
    out.push_back({w.uid, encode_with_markers(*it->second), *slot});
  }
  return out;
}

// --- head ---

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double s = 0.0;
  for (double& x : p) {
    x = std::exp(x - mx);
    s += x;
  }
  for (double& x : p) x /= s;
  return p;
}

std::vector<double> ClassifierHead::logits(std::span<const double> features) const {
  if (features.size() != weights.cols()) throw Error("feature dimension mismatch");
  std::vector<double> out(weights.rows());
  for (std::size_t c = 0; c < weights.rows(); ++c) {
    const auto w = weights.row(c);
    out[c] = bias[c] + std::inner_product(w.begin(), w.end(), features.begin(), 0.0);
  }
  return out;
}

std::vector<double> ClassifierHead::probabilities(std::span<const double> features) const {
  return softmax(logits(features));
}

CrossEntropyGrad softmax_cross_entropy(const Matrix& features, std::span<const std::size_t> labels,
                                       const Matrix& weights, std::span<const double> bias) {
  const std::size_t batch = features.rows(), n = weights.rows(), f = weights.cols();
  if (labels.size() != batch || features.cols() != f || bias.size() != n) {
    throw Error("cross-entropy shape mismatch");
  }
  CrossEntropyGrad g;
  g.d_weights = Matrix(n, f);
  g.d_bias.assign(n, 0.0);
  g.d_features = Matrix(batch, f);
  if (batch == 0) return g;
  const double inv = 1.0 / static_cast<double>(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    if (labels[r] >= n) throw Error("label outside the label space");
    std::vector<double> z(n);
    for (std::size_t c = 0; c < n; ++c) {
      const auto w = weights.row(c);
      z[c] = bias[c] + std::inner_product(w.begin(), w.end(), features.row(r).begin(), 0.0);
    }
    auto p = softmax(z);
    g.loss -= std::log(std::max(p[labels[r]], 1e-300)) * inv;
    p[labels[r]] -= 1.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = p[c] * inv;
      g.d_bias[c] += d;
      for (std::size_t j = 0; j < f; ++j) {
        g.d_weights(c, j) += d * features(r, j);
        g.d_features(r, j) += d * weights(c, j);
      }
    }
  }
  return g;
}

ClassifierHead train_classifier(std::span<const TrainingExample> examples,
                                const LabelSpace& labels, SequenceEncoder& encoder,
                                const TrainOptions& opt) {
  const std::size_t n = labels.size();
  for (const auto& ex : examples) {
    if (ex.label >= n) {
      throw Error("training label " + std::to_string(ex.label) + " of uid " +
                  std::to_string(ex.uid) + " is outside the label space");
    }
  }
  if (!(opt.dropout >= 0.0 && opt.dropout < 1.0)) throw Error("dropout must be in [0, 1)");
  if (opt.batch_size == 0) throw Error("batch size must be positive");

  const std::size_t h = encoder.hidden_dim();
  const std::size_t f = 2 * h;
  Rng rng(opt.seed);
  ClassifierHead head;
  head.weights = Matrix(n, f);
  for (double& w : head.weights.data()) w = rng.normal(0.0, 0.02);
  head.bias.assign(n, 0.0);
  if (examples.empty() || opt.epochs == 0) return head;

  const bool tune_encoder = encoder.trainable();
  std::vector<std::vector<double>> cached;
  if (!tune_encoder) {
    for (const auto& ex : examples) cached.push_back(relation_representation(ex.sequence, encoder));
  }

  AdamW opt_w(head.weights.data().size(), opt.learning_rate, opt.weight_decay);
  AdamW opt_b(n, opt.learning_rate);
  std::vector<AdamW> opt_enc;
  if (tune_encoder) {
    for (auto p : encoder.parameters()) opt_enc.emplace_back(p.size(), opt.learning_rate, 0.0);
  }

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  const double keep = 1.0 - opt.dropout;

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      const std::size_t b = end - start;
      Matrix feats(b, f);
      Matrix mask(b, f, 1.0);
      std::vector<std::size_t> batch_labels(b);
      std::vector<Matrix> hiddens;
      for (std::size_t i = 0; i < b; ++i) {
        const auto& ex = examples[order[start + i]];
        batch_labels[i] = ex.label;
        std::vector<double> r;
        if (tune_encoder) {
          hiddens.push_back(encoder.encode(ex.sequence.tokens));
          r = relation_representation(ex.sequence, hiddens.back());
        } else {
          r = cached[order[start + i]];
        }
        for (std::size_t j = 0; j < f; ++j) {
          if (opt.dropout > 0.0) mask(i, j) = rng.uniform() < keep ? 1.0 / keep : 0.0;
          feats(i, j) = r[j] * mask(i, j);
        }
      }
      auto g = softmax_cross_entropy(feats, batch_labels, head.weights, head.bias);
      epoch_loss += g.loss * static_cast<double>(b);

      std::vector<std::span<double>> grads{std::span<double>(g.d_weights.data()),
                                           std::span<double>(g.d_bias)};
      if (tune_encoder) {
        encoder.zero_grad();
        for (std::size_t i = 0; i < b; ++i) {
          const auto& seq = examples[order[start + i]].sequence;
          Matrix d_hidden(seq.tokens.size(), h);
          const double hs = 1.0 / static_cast<double>(seq.head_range.size());
          const double ts = 1.0 / static_cast<double>(seq.tail_range.size());
          for (std::size_t t = seq.head_range.start; t < seq.head_range.end; ++t)
            for (std::size_t k = 0; k < h; ++k) d_hidden(t, k) += g.d_features(i, k) * mask(i, k) * hs;
          for (std::size_t t = seq.tail_range.start; t < seq.tail_range.end; ++t)
            for (std::size_t k = 0; k < h; ++k)
              d_hidden(t, k) += g.d_features(i, h + k) * mask(i, h + k) * ts;
          encoder.backward(seq.tokens, d_hidden);
        }
        for (auto eg : encoder.gradients()) grads.push_back(eg);
      }
      clip_global_norm(grads, opt.max_grad_norm);
      opt_w.step(head.weights.data(), g.d_weights.data());
      opt_b.step(head.bias, g.d_bias);
      if (tune_encoder) {
        auto params = encoder.parameters();
        auto egrads = encoder.gradients();
        for (std::size_t p = 0; p < params.size(); ++p) opt_enc[p].step(params[p], egrads[p]);
      }
    }
    head.loss_trace.push_back(epoch_loss / static_cast<double>(examples.size()));
  }
  return head;
}

std::map<Uid, Prediction> predict(std::span<const RelationInstance> instances,
                                  const ClassifierHead& head, const SequenceEncoder& encoder) {
  std::map<Uid, Prediction> out;
  for (const auto& inst : instances) {
    const auto p = head.probabilities(relation_representation(encode_with_markers(inst), encoder));
    const auto best = std::max_element(p.begin(), p.end());
    out[inst.uid] = {static_cast<std::size_t>(best - p.begin()), *best};
  }
  return out;
}

std::string encode_head_checkpoint(const ClassifierHead& head, const LabelSpace& labels) {
  const std::size_t n = head.weights.rows(), f = head.weights.cols();
  std::string out = "KNORDHEAD 1 N=" + std::to_string(n) + " F=" + std::to_string(f) +
                    " encoding=f32le\n";
  for (std::size_t i = 0; i < labels.known_count(); ++i) {
    out += "known\t" + std::to_string(i) + "\t" + labels.known_class(i) + "\n";
  }
  for (std::size_t i = labels.known_count(); i < labels.size(); ++i) {
    if (auto c = labels.cluster_of_slot(i)) {
      out += "novel\t" + std::to_string(i) + "\t" + std::to_string(*c) + "\n";
    }
  }
  out += "end\n";
  for (double w : head.weights.data()) append_f32le(out, w);
  for (double b : head.bias) append_f32le(out, b);
  return out;
}

std::pair<ClassifierHead, LabelSpace> decode_head_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw Error("head checkpoint: truncated header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  std::istringstream header(next_line());
  std::string magic, version, n_s, f_s, enc;
  header >> magic >> version >> n_s >> f_s >> enc;
  if (magic != "KNORDHEAD" || version != "1" || enc != "encoding=f32le" ||
      n_s.rfind("N=", 0) != 0 || f_s.rfind("F=", 0) != 0) {
    throw Error("head checkpoint: unsupported header");
  }
  const std::size_t n = std::stoull(n_s.substr(2)), f = std::stoull(f_s.substr(2));
  std::vector<std::string> known;
  std::vector<std::size_t> novel;
  for (std::string line = next_line(); line != "end"; line = next_line()) {
    std::istringstream in(line);
    std::string kind, id, value;
    std::getline(in, kind, '\t');
    std::getline(in, id, '\t');
    std::getline(in, value);
    if (kind == "known") {
      known.push_back(value);
    } else if (kind == "novel") {
      novel.push_back(std::stoull(value));
    } else {
      throw Error("head checkpoint: bad label line '" + line + "'");
    }
  }
  if (bytes.size() != pos + 4 * (n * f + n)) throw Error("head checkpoint: size mismatch");
  ClassifierHead head;
  head.weights = Matrix(n, f);
  for (double& w : head.weights.data()) {
    w = read_f32le(bytes, pos);
    pos += 4;
  }
  head.bias.resize(n);
  for (double& b : head.bias) {
    b = read_f32le(bytes, pos);
    pos += 4;
  }
  LabelSpace labels(std::move(known), std::move(novel));
  if (labels.size() != n) throw Error("head checkpoint: label space does not match N");
  return {std::move(head), std::move(labels)};
}

}  // namespace knord
