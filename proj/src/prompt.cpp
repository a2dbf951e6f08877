#include "knord/prompt.hpp"

#include "knord/optim.hpp"
#include "knord/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <regex>
#include <set>

namespace knord {

PromptText build_prompt_text(const RelationInstance& inst, std::size_t n_masks) {
  if (n_masks == 0) throw Error("prompt needs at least one mask slot");
  PromptText p;
  p.tokens = inst.tokens;
  const auto head = inst.head_tokens();
  p.tokens.insert(p.tokens.end(), head.begin(), head.end());
  for (std::size_t i = 0; i < n_masks; ++i) {
    p.mask_positions.push_back(p.tokens.size());
    p.tokens.emplace_back(kMaskToken);
  }
  const auto tail = inst.tail_tokens();
  p.tokens.insert(p.tokens.end(), tail.begin(), tail.end());
  return p;
}

std::vector<std::string> normalize_relation_name(const std::string& name) {
  std::string body = name;
  if (auto colon = body.rfind(':'); colon != std::string::npos) body = body.substr(colon + 1);
  static const std::regex kPCode("^P[0-9]+([_\\- ]+|$)");
  std::smatch m;
  if (std::regex_search(body, m, kPCode) && m.length(0) < static_cast<long>(body.size())) {
    body = m.suffix();
  }

  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) words.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < body.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(body[i]);
    if (c == '_' || c == '-' || c == '/' || std::isspace(c)) {
      flush();
      continue;
    }
    if (std::isupper(c) && i > 0 && std::islower(static_cast<unsigned char>(body[i - 1]))) {
      flush();
    }
    cur.push_back(static_cast<char>(std::tolower(c)));
  }
  flush();
  if (words.empty()) {
    std::string lowered;
    for (unsigned char c : name) lowered.push_back(static_cast<char>(std::tolower(c)));
    words.push_back(lowered);
  }
  return words;
}

std::size_t MaskedExample::relation_mask_count() const {
  return static_cast<std::size_t>(
      std::count(origins.begin(), origins.end(), MaskOrigin::relation_mask));
}

std::vector<MaskedExample> make_training_batch(std::span<const RelationInstance> instances,
                                               double mask_rate, std::uint64_t seed) {
  if (instances.empty()) throw Error("training batch needs at least one instance");
  if (mask_rate < 0.0 || mask_rate >= 1.0) throw Error("mask_rate must be in [0, 1)");

  std::vector<MaskedExample> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) {
    if (!inst.gold_class) {
      throw Error("instance " + std::to_string(inst.uid) + " has no relation label");
    }
    const auto relation_words = normalize_relation_name(*inst.gold_class);
    const PromptText prompt = build_prompt_text(inst, relation_words.size());

    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < inst.tokens.size(); ++i) {
      const bool in_entity = (i >= inst.head.start && i < inst.head.end) ||
                             (i >= inst.tail.start && i < inst.tail.end);
      if (!in_entity) eligible.push_back(i);
    }
    const std::size_t n_random =
        std::min(floor_fraction(mask_rate, inst.tokens.size()), eligible.size());
    Rng rng(hash_combine(seed, inst.uid));
    rng.shuffle(eligible);
    eligible.resize(n_random);
    std::sort(eligible.begin(), eligible.end());

    MaskedExample ex;
    ex.uid = inst.uid;
    ex.tokens = prompt.tokens;
    for (std::size_t pos : eligible) {
      ex.mask_positions.push_back(pos);
      ex.mask_targets.push_back(ex.tokens[pos]);
      ex.origins.push_back(MaskOrigin::random_mask);
      ex.tokens[pos] = kMaskToken;
    }
    for (std::size_t i = 0; i < prompt.mask_positions.size(); ++i) {
      ex.mask_positions.push_back(prompt.mask_positions[i]);
      ex.mask_targets.push_back(relation_words[i]);
      ex.origins.push_back(MaskOrigin::relation_mask);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

// --- vocabulary ---

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  for (auto& t : tokens) add(t);
}

std::size_t Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.try_emplace(token, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::optional<std::size_t> Vocabulary::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Vocabulary build_vocabulary(std::span<const RelationInstance> corpus,
                            std::span<const std::string> relation_classes) {
  std::vector<const RelationInstance*> ordered;
  for (const auto& inst : corpus) ordered.push_back(&inst);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto* a, const auto* b) { return a->uid < b->uid; });
  Vocabulary v;
  for (const auto* inst : ordered) {
    for (const auto& t : inst->tokens) {
      if (t != kMaskToken) v.add(t);
    }
  }
  for (const auto& cls : relation_classes) {
    for (const auto& w : normalize_relation_name(cls)) v.add(w);
  }
  return v;
}

MlmTrainReport MlmBackend::train(std::span<const MaskedExample>, std::span<const MaskedExample>) {
  return {};
}

// --- stub backend ---

StubMlm::StubMlm(Vocabulary vocabulary, std::uint64_t seed) : vocab_(std::move(vocabulary)) {
  scores_.reserve(vocab_.size());
  for (const auto& t : vocab_.tokens()) {
    const auto h = hash_combine(seed, fnv1a(t));
    scores_.push_back(static_cast<double>(h >> 11) * 0x1.0p-53);
  }
}

void StubMlm::set_score(const std::string& token, double score) {
  if (auto id = vocab_.find(token)) {
    scores_[*id] = score;
    return;
  }
  vocab_.add(token);
  scores_.push_back(score);
}

std::vector<std::vector<double>> StubMlm::score_masks(
    std::span<const std::string>, std::span<const std::size_t> mask_positions) const {
  return std::vector<std::vector<double>>(mask_positions.size(), scores_);
}

// --- tiny trainable backend ---

namespace {

void softmax_inplace(std::vector<double>& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}


}  // namespace

TinyMlm::TinyMlm(Vocabulary vocabulary, TinyMlmOptions options)
    : vocab_(std::move(vocabulary)), options_(options) {
  if (vocab_.size() == 0) throw Error("tiny MLM needs a non-empty vocabulary");
  const std::size_t n = vocab_.size() * options_.dim;
  Rng rng(options_.seed);
  params_.input.resize(n);
  params_.output.resize(n);
  for (double& x : params_.input) x = rng.normal(0.0, 0.1);
  for (double& x : params_.output) x = rng.normal(0.0, 0.1);
  params_.bias.assign(vocab_.size(), 0.0);
}

std::vector<double> TinyMlm::context(std::span<const std::string> tokens,
                                     std::span<const std::size_t> mask_positions,
                                     std::size_t slot,
                                     std::vector<std::pair<std::size_t, double>>* weights) const {
  const std::size_t d = options_.dim;
  std::vector<std::size_t> global, local;
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    if (tokens[j] == kMaskToken) continue;
    if (std::find(mask_positions.begin(), mask_positions.end(), j) != mask_positions.end()) {
      continue;
    }
    auto id = vocab_.find(tokens[j]);
    if (!id) continue;
    global.push_back(j);
    const std::size_t dist = j > slot ? j - slot : slot - j;
    if (dist <= options_.window) local.push_back(j);
  }
  std::vector<double> ctx(d, 0.0);
  if (global.empty()) return ctx;
  const double g_share = local.empty() ? 1.0 : 0.5;
  std::vector<std::pair<std::size_t, double>> w;
  for (std::size_t j : global) w.emplace_back(*vocab_.find(tokens[j]), g_share / global.size());
  for (std::size_t j : local) w.emplace_back(*vocab_.find(tokens[j]), 0.5 / local.size());
  for (const auto& [id, wt] : w) {
    const double* e = params_.input.data() + id * d;
    for (std::size_t k = 0; k < d; ++k) ctx[k] += wt * e[k];
  }
  if (weights != nullptr) *weights = std::move(w);
  return ctx;
}

std::vector<double> TinyMlm::logits(const std::vector<double>& ctx) const {
  const std::size_t d = options_.dim;
  std::vector<double> out(vocab_.size());
  for (std::size_t v = 0; v < vocab_.size(); ++v) {
    const double* u = params_.output.data() + v * d;
    double s = params_.bias[v];
    for (std::size_t k = 0; k < d; ++k) s += u[k] * ctx[k];
    out[v] = s;
  }
  return out;
}

std::vector<std::vector<double>> TinyMlm::score_masks(
    std::span<const std::string> tokens, std::span<const std::size_t> mask_positions) const {
  std::vector<std::vector<double>> out;
  out.reserve(mask_positions.size());
  for (std::size_t slot : mask_positions) {
    auto scores = logits(context(tokens, mask_positions, slot, nullptr));
    softmax_inplace(scores);
    out.push_back(std::move(scores));
  }
  return out;
}

double TinyMlm::mean_nll(std::span<const MaskedExample> examples) const {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& ex : examples) {
    const auto scores = score_masks(ex.tokens, ex.mask_positions);
    for (std::size_t i = 0; i < ex.mask_positions.size(); ++i) {
      auto target = vocab_.find(ex.mask_targets[i]);
      if (!target) continue;
      total -= std::log(std::max(scores[i][*target], 1e-300));
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

MlmTrainReport TinyMlm::train(std::span<const MaskedExample> examples,
                              std::span<const MaskedExample> heldout) {
  MlmTrainReport report;
  if (examples.empty()) return report;
  const std::size_t d = options_.dim;
  const std::size_t V = vocab_.size();

  AdamW adam_in(params_.input.size(), options_.learning_rate);
  AdamW adam_out(params_.output.size(), options_.learning_rate);
  AdamW adam_bias(V, options_.learning_rate);
  std::vector<double> g_in(params_.input.size()), g_out(params_.output.size()), g_bias(V);
  Params best = params_;
  double best_ppl = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(hash_combine(options_.seed, 0x6d6c6dULL));

  for (std::size_t epoch = 1; epoch <= options_.max_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t epoch_count = 0;
    for (std::size_t b = 0; b < order.size(); b += options_.batch_size) {
      std::fill(g_in.begin(), g_in.end(), 0.0);
      std::fill(g_out.begin(), g_out.end(), 0.0);
      std::fill(g_bias.begin(), g_bias.end(), 0.0);
      std::size_t slots = 0;
      const std::size_t end = std::min(order.size(), b + options_.batch_size);
      for (std::size_t oi = b; oi < end; ++oi) {
        const auto& ex = examples[order[oi]];
        for (std::size_t i = 0; i < ex.mask_positions.size(); ++i) {
          auto target = vocab_.find(ex.mask_targets[i]);
          if (!target) continue;
          std::vector<std::pair<std::size_t, double>> weights;
          const auto ctx = context(ex.tokens, ex.mask_positions, ex.mask_positions[i], &weights);
          auto p = logits(ctx);
          softmax_inplace(p);
          epoch_loss -= std::log(std::max(p[*target], 1e-300));
          ++epoch_count;
          ++slots;
          p[*target] -= 1.0;  // dL/dlogits
          std::vector<double> d_ctx(d, 0.0);
          for (std::size_t v = 0; v < V; ++v) {
            const double gl = p[v];
            g_bias[v] += gl;
            double* go = g_out.data() + v * d;
            const double* u = params_.output.data() + v * d;
            for (std::size_t k = 0; k < d; ++k) {
              go[k] += gl * ctx[k];
              d_ctx[k] += gl * u[k];
            }
          }
          for (const auto& [id, wt] : weights) {
            double* gi = g_in.data() + id * d;
            for (std::size_t k = 0; k < d; ++k) gi[k] += wt * d_ctx[k];
          }
        }
      }
      if (slots == 0) continue;
      const double scale = 1.0 / static_cast<double>(slots);
      for (double& g : g_in) g *= scale;
      for (double& g : g_out) g *= scale;
      for (double& g : g_bias) g *= scale;
      adam_in.step(params_.input, g_in);
      adam_out.step(params_.output, g_out);
      adam_bias.step(params_.bias, g_bias);
    }
    report.epochs_run = epoch;
    report.train_loss.push_back(epoch_count ? epoch_loss / epoch_count : 0.0);

    if (heldout.empty()) {
      best = params_;
      report.best_epoch = epoch;
      continue;
    }
    const double ppl = std::exp(mean_nll(heldout));
    report.heldout_perplexity.push_back(ppl);
    if (ppl < best_ppl) {
      best_ppl = ppl;
      best = params_;
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= options_.patience) {
      break;
    }
  }
  params_ = std::move(best);
  return report;
}

std::pair<std::vector<RelationInstance>, std::vector<RelationInstance>> split_heldout_relations(
    std::span<const RelationInstance> labeled, std::size_t count,
    const std::optional<std::string>& negative_class, std::uint64_t seed) {
  std::set<std::string> relations;
  for (const auto& inst : labeled) {
    if (inst.gold_class && inst.gold_class != negative_class) relations.insert(*inst.gold_class);
  }
  std::vector<std::string> pool(relations.begin(), relations.end());
  Rng rng(hash_combine(seed, 0x686f6c64ULL));
  rng.shuffle(pool);
  // Keep at least one relation for training.
  const std::size_t n = pool.empty() ? 0 : std::min(count, pool.size() - 1);
  const std::set<std::string> held(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));

  std::pair<std::vector<RelationInstance>, std::vector<RelationInstance>> out;
  for (const auto& inst : labeled) {
    const bool is_held = inst.gold_class && held.contains(*inst.gold_class);
    (is_held ? out.second : out.first).push_back(inst);
  }
  return out;
}

// --- ranking ---

namespace {

TokenRanking rank_indices(std::vector<std::size_t> candidates, const std::vector<double>& scores,
                          const Vocabulary& vocab, RankingMode mode, std::size_t top_k) {
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  const std::size_t keep = top_k == 0 ? candidates.size() : std::min(top_k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                    candidates.end(), better);
  TokenRanking r;
  r.mode = mode;
  for (std::size_t i = 0; i < keep; ++i) {
    r.entries.push_back({vocab.at(candidates[i]), scores[candidates[i]]});
  }
  return r;
}

std::vector<double> single_mask_scores(const RelationInstance& inst, const MlmBackend& backend) {
  const PromptText prompt = build_prompt_text(inst, 1);
  auto scores = backend.score_masks(prompt.tokens, prompt.mask_positions);
  if (scores.size() != 1 || scores[0].size() != backend.vocabulary().size()) {
    throw Error("backend returned a malformed score vector");
  }
  return std::move(scores[0]);
}

}  // namespace

TokenRanking rank_tokens_constrained(const RelationInstance& inst, const MlmBackend& backend,
                                     std::size_t top_k) {
  const auto scores = single_mask_scores(inst, backend);
  std::set<std::size_t> seen;
  std::vector<std::size_t> candidates;
  for (const auto& t : inst.tokens) {
    if (auto id = backend.vocabulary().find(t); id && seen.insert(*id).second) {
      candidates.push_back(*id);
    }
  }
  if (candidates.empty()) {
    throw Error("instance " + std::to_string(inst.uid) + ": no in-vocabulary sentence tokens");
  }
  return rank_indices(std::move(candidates), scores, backend.vocabulary(),
                      RankingMode::constrained, top_k);
}

TokenRanking rank_tokens_unconstrained(const RelationInstance& inst, const MlmBackend& backend,
                                       std::size_t top_k) {
  const auto scores = single_mask_scores(inst, backend);
  std::vector<std::size_t> candidates(scores.size());
  std::iota(candidates.begin(), candidates.end(), 0);
  return rank_indices(std::move(candidates), scores, backend.vocabulary(),
                      RankingMode::unconstrained, top_k);
}

std::string ranking_mode_name(RankingMode mode) {
  return mode == RankingMode::constrained ? "constrained" : "unconstrained";
}

}  // namespace knord
