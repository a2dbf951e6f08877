// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include "knord/classifier.hpp"
#include "knord/cluster.hpp"
#include "knord/corpus.hpp"
#include "knord/evaluation.hpp"
#include "knord/io.hpp"
#include "knord/metatype.hpp"
#include "knord/pipeline.hpp"
#include "knord/prompt.hpp"
#include "knord/rng.hpp"
#include "knord/synthetic.hpp"
#include "oracles.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>

using namespace knord;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome fail(const std::string& why) { return {false, why}; }

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// --- Hungarian vs brute force ---
Outcome hungarian_oracle() {
  Rng rng(2024);
  for (int t = 0; t < 200; ++t) {
    Matrix m(1 + rng.index(7), 1 + rng.index(7));
    for (auto& v : m.data()) v = static_cast<double>(rng.index(50)) - 10.0;
    const bool maximize = t % 2 == 1;
    const auto a =
        hungarian_assign(m, maximize ? AssignmentMode::maximize_overlap : AssignmentMode::minimize_cost);
    const double best = oracle::brute_force_assignment(m, maximize);
    if (a.total != best) {
      return fail(fmt("matrix %.0f: hungarian %.1f vs brute force %.1f", t, a.total, best));
    }
  }
  return {true, "200 matrices up to 7x7 match exactly"};
}

// --- EM monotonicity ---
Outcome em_monotonicity() {
  Rng rng(55);
  double worst_drop = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 50 + rng.index(451), d = 1 + rng.index(16), k = 1 + rng.index(6);
    Matrix centers(k, d);
    for (auto& v : centers.data()) v = rng.normal(0.0, 4.0);
    Matrix x(n, d);
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t c = rng.index(k);
      for (std::size_t j = 0; j < d; ++j) x(r, j) = centers(c, j) + rng.normal(0.0, rng.uniform(0.2, 2.0));
    }
    GmmOptions opt;
    opt.components = k;
    opt.seed = static_cast<std::uint64_t>(t);
    const auto fit = fit_gmm(x, opt);
    const auto& tr = fit.model.log_likelihood_trace;
    for (std::size_t i = 1; i < tr.size(); ++i) worst_drop = std::max(worst_drop, tr[i - 1] - tr[i]);
  }
  if (worst_drop > 1e-8) return fail(fmt("log-likelihood dropped by %.3g", worst_drop));
  return {true, fmt("50 datasets, largest decrease %.2g", worst_drop)};
}

// --- planted recovery ---
struct PlantedResult {
  std::size_t components = 0;
  double purity = 0.0;
  bool exact = false;
  EvaluationReport report;
};

// Cluster + bifurcate on planted Gaussian representations, then classify and
// evaluate on the sentences. Clustering uses the pipeline defaults.
PlantedResult planted_run(std::uint64_t seed, bool trainable, std::size_t epochs, double lr) {
  SyntheticOptions sopts;
  sopts.classes = planted_classes(6, 6, 120, 60);
  sopts.seed = seed;
  sopts.with_kb_ids = true;
  const Corpus corpus = generate_synthetic_corpus(sopts);
  std::vector<std::string> class_names;
  for (const auto& pc : sopts.classes) class_names.push_back(pc.name);

  SplitOptions split_opts;
  split_opts.seed = seed;
  const SplitManifest split = build_grd_split(corpus, split_opts);

  // centers separation * sqrt(2) = 11.3 sigma apart
  const auto reps = planted_representations(corpus, class_names, 16, 8.0, 1.0, seed);
  const EmbeddedMatrix data = embed_matrix(reps);

  MetaTypeResolver resolver(std::make_shared<FixtureOntology>(synthetic_ontology(corpus)));
  std::map<Uid, MetaTypePair> meta;
  std::map<Uid, std::string> gold;
  for (const auto& inst : corpus) {
    meta[inst.uid] = meta_type_of_pair(inst, &resolver);
    gold[inst.uid] = *inst.gold_class;
  }

  const PipelineConfig defaults;
  GmmOptions gopts;
  gopts.components = defaults.k_multiplier * split.known_classes.size();
  gopts.seed = seed;
  gopts.max_iter = defaults.gmm_max_iter;
  gopts.tol = defaults.gmm_tol;
  gopts.n_init = defaults.gmm_restarts;
  const GmmFit fit = fit_gmm(data.rows, gopts);
  ClusterState state = make_cluster_state(data, fit);
  state = adjust_by_metatype(state, fit.model, data.rows, meta, defaults.top_fraction);
  state = bifurcate_majority_vote(state, split.labeled_uids, split.known_classes.size());

  PlantedResult out;
  out.components = gopts.components;
  std::vector<std::map<std::string, std::size_t>> members(state.components);
  for (std::size_t r = 0; r < state.uids.size(); ++r) ++members[state.assignments[r]][gold[state.uids[r]]];
  std::size_t majority_total = 0;
  out.exact = true;
  for (std::size_t c = 0; c < state.components; ++c) {
    if (members[c].empty()) continue;
    auto best = members[c].begin();
    for (auto it = members[c].begin(); it != members[c].end(); ++it)
      if (it->second > best->second) best = it;
    majority_total += best->second;
    if (split.is_known(best->first) != state.known_clusters.contains(c)) out.exact = false;
  }
  out.purity = static_cast<double>(majority_total) / static_cast<double>(corpus.size());

  const WeakLabelSet weak = select_weak_labels(state, split.labeled_uids, defaults.weak_label_percent);
  const LabelSpace labels(split.known_classes,
                          novel_clusters_by_unlabeled_size(state, split.labeled_uids));
  std::vector<RelationInstance> labeled, unlabeled;
  for (const auto& inst : corpus) {
    (split.labeled_uids.contains(inst.uid) ? labeled : unlabeled).push_back(inst);
  }
  std::map<Uid, const RelationInstance*> by_uid;
  for (const auto& inst : corpus) by_uid[inst.uid] = &inst;
  const auto examples = build_training_set(labeled, weak, by_uid, labels);

  std::unique_ptr<SequenceEncoder> encoder;
  if (trainable) {
    Vocabulary vocab;
    for (const auto& inst : corpus)
      for (const auto& t : encode_with_markers(inst).tokens) vocab.add(t);
    encoder = std::make_unique<TinyEncoder>(std::move(vocab), defaults.hidden_dim, seed);
  } else {
    encoder = std::make_unique<StubEncoder>(defaults.hidden_dim, seed);
  }
  TrainOptions topts;
  topts.epochs = epochs;
  topts.learning_rate = lr;
  topts.batch_size = defaults.classifier_batch;
  topts.dropout = defaults.classifier_dropout;
  topts.max_grad_norm = defaults.classifier_max_grad_norm;
  topts.seed = seed;
  const ClassifierHead head = train_classifier(examples, labels, *encoder, topts);
  std::map<Uid, std::size_t> predicted;
  for (const auto& [uid, p] : predict(unlabeled, head, *encoder)) predicted[uid] = p.label;
  out.report = map_and_score(predicted, gold, labels, split, {});
  return out;
}

// Judged on the default seed with the trainable encoder at 100 epochs, lr 1e-2.
// The other default seeds and the 5-epoch budget are reported alongside.
Outcome planted_recovery() {
  const PipelineConfig defaults;
  const auto r = planted_run(defaults.seed, true, 100, 1e-2);
  std::string detail = "seed " + std::to_string(defaults.seed) + ", K=" + std::to_string(r.components) +
                       fmt(": purity %.3f, F1 all %.3f (known %.3f", r.purity, r.report.f1_all,
                           r.report.f1_known) +
                       fmt(", novel %.3f)", r.report.f1_novel) +
                       (r.exact ? ", bifurcation exact" : ", bifurcation wrong");
  detail += " | other seeds:";
  for (std::uint64_t s = defaults.seed + 1; s <= defaults.seed + 4; ++s) {
    const auto o = planted_run(s, true, 100, 1e-2);
    detail += " " + std::to_string(s) + fmt("=%.3f", o.report.f1_all) + (o.exact ? "" : "(bifurcation wrong)");
  }
  const auto short_budget = planted_run(defaults.seed, false, defaults.classifier_epochs,
                                        defaults.classifier_learning_rate);
  detail += fmt(" | 5-epoch stub budget F1 all %.3f", short_budget.report.f1_all);
  return {r.purity >= 0.95 && r.exact && r.report.f1_all >= 0.90, detail};
}

// --- split builder on a Zipf corpus ---
Outcome split_contract() {
  std::vector<PlantedClass> classes;
  const auto templates = planted_classes(10, 0, 400, 0);
  for (std::size_t i = 0; i < 10; ++i) {
    PlantedClass pc = templates[i];
    pc.count = static_cast<std::size_t>(std::floor(400.0 / static_cast<double>(i + 1)));
    classes.push_back(pc);
  }
  SyntheticOptions sopts;
  sopts.classes = classes;
  sopts.seed = 9;
  const Corpus corpus = generate_synthetic_corpus(sopts);
  SplitOptions opts;
  opts.seed = 9;
  const SplitManifest split = build_grd_split(corpus, opts);

  std::map<std::string, std::size_t> freq;
  for (const auto& inst : corpus) ++freq[*inst.gold_class];
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::set<std::string> expect_known, got_known(split.known_classes.begin(), split.known_classes.end());
  for (std::size_t i = 0; i < 5; ++i) expect_known.insert(ranked[i].first);
  if (got_known != expect_known) return fail("known classes are not the top 5 by frequency");
  for (const auto& cls : split.novel_classes) {
    if (got_known.contains(cls)) return fail("class " + cls + " is both known and novel");
  }
  if (split.novel_classes.size() != 5) return fail("expected 5 novel classes");

  std::map<std::string, std::size_t> labeled_count;
  for (const auto& inst : corpus) {
    if (split.labeled_uids.contains(inst.uid)) {
      if (!got_known.contains(*inst.gold_class)) return fail("labeled instance of a novel class");
      ++labeled_count[*inst.gold_class];
    }
  }
  for (const auto& cls : expect_known) {
    const auto want = static_cast<std::size_t>(std::floor(0.85 * static_cast<double>(freq[cls]) + 1e-9));
    if (labeled_count[cls] != want) {
      return fail(cls + ": " + std::to_string(labeled_count[cls]) + " labeled, want " +
                  std::to_string(want));
    }
  }
  for (Uid u : split.labeled_uids)
    if (split.unlabeled_uids.contains(u)) return fail("uid both labeled and unlabeled");
  if (split.labeled_uids.size() + split.unlabeled_uids.size() != corpus.size()) {
    return fail("labeled and unlabeled do not cover the corpus");
  }
  return {true, "top 5 known, floor(0.85 m_c) labeled per class, disjoint"};
}

// --- weak-label counts ---
Outcome weak_label_counts() {
  ClusterState s;
  s.components = 3;
  const std::vector<std::size_t> sizes = {100, 3, 20};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < sizes[c]; ++i) s.assignments.push_back(c);
  s.posteriors = Matrix(s.assignments.size(), 3);
  Rng rng(3);
  for (std::size_t r = 0; r < s.assignments.size(); ++r) {
    s.uids.push_back(static_cast<Uid>(r + 1));
    s.posteriors(r, s.assignments[r]) = rng.uniform(0.5, 1.0);
  }
  s.novel_clusters = {0, 1, 2};
  const auto weak = select_weak_labels(s, {}, 15);
  std::vector<std::size_t> got(3, 0);
  for (const auto& w : weak.entries) ++got[w.cluster];
  const std::string detail = "{" + std::to_string(got[0]) + ", " + std::to_string(got[1]) + ", " +
                             std::to_string(got[2]) + "}";
  return {got == std::vector<std::size_t>{15, 1, 3}, "selected " + detail};
}

// --- micro-F1 identity on the hand fixture ---
Outcome micro_f1_identity() {
  SplitManifest split;
  split.known_classes = {"K1", "K2"};
  split.novel_classes = {"N1", "N2"};
  const LabelSpace labels({"K1", "K2"}, {0, 1, 2, 3});
  const std::vector<std::pair<std::string, std::size_t>> rows = {
      {"K1", 0}, {"K1", 1}, {"K2", 1}, {"K2", 3}, {"N1", 3},
      {"N1", 3}, {"N1", 4}, {"N2", 4}, {"N2", 4}, {"N2", 0}};
  std::map<Uid, std::size_t> pred;
  std::map<Uid, std::string> gold;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Uid u = static_cast<Uid>(i + 1);
    split.unlabeled_uids.insert(u);
    gold[u] = rows[i].first;
    pred[u] = rows[i].second;
  }
  const auto r = map_and_score(pred, gold, labels, split, {});

  // brute force over every injective novel-class -> slot map
  std::vector<std::size_t> perm = {0, 1, 2, 3};
  std::size_t best = 0, best_known = 0, best_novel = 0;
  std::map<std::size_t, std::string> best_map;
  do {
    std::size_t ok = 0, ok_known = 0, ok_novel = 0;
    std::map<std::size_t, std::string> m = {{0, "K1"}, {1, "K2"}};
    m[2 + perm[0]] = "N1";
    m[2 + perm[1]] = "N2";
    for (const auto& [u, p] : pred) {
      auto it = m.find(p);
      const bool hit = it != m.end() && it->second == gold[u];
      ok += hit;
      (gold[u][0] == 'K' ? ok_known : ok_novel) += hit;
    }
    if (ok > best) {
      best = ok;
      best_known = ok_known;
      best_novel = ok_novel;
      best_map = m;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  if (r.correct_all != best || r.correct_known != best_known || r.correct_novel != best_novel) {
    return fail("scores differ from brute force");
  }
  for (const auto& [slot, cls] : best_map) {
    if (r.mapping.at(slot) != cls) return fail("mapping differs from brute force");
  }
  if (r.f1_all != static_cast<double>(best) / 10.0) return fail("f1_all is not correct/total");
  const double weighted = (static_cast<double>(r.n_known) * r.f1_known +
                           static_cast<double>(r.n_novel) * r.f1_novel) /
                          static_cast<double>(r.n_all);
  if (std::abs(weighted - r.f1_all) > 1e-12) return fail("weighted identity violated");
  return {true, fmt("f1 all %.3f known %.3f novel %.3f", r.f1_all, r.f1_known, r.f1_novel)};
}

// --- gradient check ---
Outcome gradient_check() {
  Rng rng(7);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t b = 1 + rng.index(8), f = 2 + rng.index(8), n = 2 + rng.index(8);
    Matrix x(b, f), w(n, f);
    std::vector<double> bias(n);
    std::vector<std::size_t> y(b);
    for (auto& v : x.data()) v = rng.normal();
    for (auto& v : w.data()) v = rng.normal(0.0, 0.5);
    for (auto& v : bias) v = rng.normal(0.0, 0.1);
    for (auto& v : y) v = rng.index(n);
    worst = std::max(worst, oracle::max_gradient_error(x, y, w, bias));
  }
  return {worst < 1e-4, fmt("20 batches, max relative error %.2g", worst)};
}

// --- meta-type resolver special cases ---
Outcome resolver_cases() {
  const auto graph = load_ontology_fixture(fs::path(KNORD_TEST_DATA_DIR) / "ontology_cases.json");
  const fs::path dir = fs::temp_directory_path() / "knord_acceptance_resolver";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    MetaTypeResolver r(std::make_shared<FixtureOntology>(graph), dir / "cache.tsv");
    for (const auto& [id, want] : graph.expected) {
      const auto got = r.resolve(id);
      if (got != want) return fail(id + " resolved to " + got + ", expected " + want);
    }
    r.flush();
  }
  auto source = std::make_shared<FixtureOntology>(graph);
  MetaTypeResolver cached(source, dir / "cache.tsv");
  for (const auto& [id, want] : graph.expected) {
    if (cached.resolve(id) != want) return fail("cached resolution of " + id + " differs");
  }
  const auto calls = source->calls();
  fs::remove_all(dir);
  if (calls != 0) return fail("cache hit made " + std::to_string(calls) + " service calls");
  return {true, std::to_string(graph.expected.size()) + " declared expectations, 0 calls on cache hit"};
}

// --- constrained vs unconstrained dominance ---
Outcome dominance() {
  SyntheticOptions o;
  o.classes = planted_classes(8, 8, 90, 40, 100);
  o.seed = 13;
  const Corpus corpus = generate_synthetic_corpus(o);
  if (corpus.size() < 1000) return fail("corpus too small");
  const StubMlm stub(build_vocabulary(corpus, {}), 5);
  std::size_t checked = 0;
  for (const auto& inst : corpus) {
    if (checked == 1000) break;
    const auto con = rank_tokens_constrained(inst, stub, 1);
    const auto unc = rank_tokens_unconstrained(inst, stub, 1);
    if (con.entries.front().score > unc.entries.front().score) {
      return fail("instance " + std::to_string(inst.uid) + " violates dominance");
    }
    ++checked;
  }
  return {true, std::to_string(checked) + " instances"};
}

// --- end-to-end smoke on the bundled fixture ---
Outcome end_to_end() {
  PipelineConfig c = load_config(fs::path(KNORD_SOURCE_DIR) / "data" / "fixture.conf");
  c.output_dir = fs::temp_directory_path() / "knord_acceptance_e2e";
  fs::remove_all(c.output_dir);
  std::ostringstream out;
  run_all(c, out);
  const auto report = nlohmann::json::parse(read_file(c.run_dir() / "report.json"));
  fs::remove_all(c.output_dir);
  for (const char* key : {"f1_all", "f1_known", "f1_novel"}) {
    if (!report.contains(key)) return fail(std::string("report lacks ") + key);
  }
  const std::string text = out.str();
  const auto row_at = text.find("fixture-seed41");
  if (text.find(table_header()) == std::string::npos || row_at == std::string::npos) {
    return fail("no report row printed");
  }
  std::string row = text.substr(row_at, text.find('\n', row_at) - row_at);
  while (!row.empty() && row.back() == ' ') row.pop_back();
  return {true, "row: " + row};
}

}  // namespace

int main() {
  struct Criterion {
    std::string name;
    double limit_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"hungarian-oracle", 5, hungarian_oracle},
      {"em-monotonicity", 30, em_monotonicity},
      {"planted-pipeline-recovery", 120, planted_recovery},
      {"split-builder-contract", 1, split_contract},
      {"weak-label-counts", 1, weak_label_counts},
      {"micro-f1-identity", 1, micro_f1_identity},
      {"gradient-check", 10, gradient_check},
      {"metatype-resolver", 1, resolver_cases},
      {"ranking-dominance", 5, dominance},
      {"end-to-end-smoke", 300, end_to_end},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = fail(std::string("error: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs >= c.limit_seconds) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s limit", c.limit_seconds);
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << " (" << fmt("%.3f s", secs) << ") "
              << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
