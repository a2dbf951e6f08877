#include "knord/prompt.hpp"
#include "knord/rng.hpp"
#include "knord/synthetic.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace knord;

namespace {

RelationInstance john_founded_acme(std::vector<std::string> tail = {"Acme"}) {
  RelationInstance inst;
  inst.uid = 1;
  inst.tokens = {"John", "founded"};
  inst.head = {0, 1};
  inst.tail = {2, 2 + tail.size()};
  inst.tokens.insert(inst.tokens.end(), tail.begin(), tail.end());
  inst.head_type = "PERSON";
  inst.tail_type = "ORG";
  inst.gold_class = "org:founded_by";
  return inst;
}

RelationInstance sentence_of(std::size_t len, Uid uid, const std::string& cls) {
  RelationInstance inst;
  inst.uid = uid;
  for (std::size_t i = 0; i < len; ++i) inst.tokens.push_back("w" + std::to_string(i));
  inst.head = {0, 1};
  inst.tail = {len - 1, len};
  inst.head_type = "A";
  inst.tail_type = "B";
  inst.gold_class = cls;
  return inst;
}

StubMlm scored_stub() {
  StubMlm stub(Vocabulary({"John", "founded", "Acme", "created"}), 0);
  stub.set_score("founded", 0.9);
  stub.set_score("created", 0.8);
  stub.set_score("Acme", 0.2);
  stub.set_score("John", 0.1);
  return stub;
}

std::vector<std::string> tokens_of(const TokenRanking& r) {
  std::vector<std::string> out;
  for (const auto& e : r.entries) out.push_back(e.token);
  return out;
}

}  // namespace

TEST_CASE("prompt appends head, masks and tail") {
  const PromptText p = build_prompt_text(john_founded_acme(), 1);
  CHECK(p.tokens == std::vector<std::string>{"John", "founded", "Acme", "John", "[MASK]", "Acme"});
  CHECK(p.mask_positions == std::vector<std::size_t>{4});

  const PromptText two = build_prompt_text(john_founded_acme(), 2);
  CHECK(two.mask_positions == std::vector<std::size_t>{4, 5});

  const auto multi = john_founded_acme({"Acme", "Corp"});
  const PromptText p3 = build_prompt_text(multi, 3);
  CHECK(p3.tokens.size() == multi.tokens.size() + 1 + 3 + 2);
  CHECK(p3.tokens[p3.tokens.size() - 2] == "Acme");
  CHECK(p3.tokens.back() == "Corp");
  CHECK_THROWS_AS(build_prompt_text(multi, 0), Error);
}

TEST_CASE("relation names normalize to lowercase words") {
  using V = std::vector<std::string>;
  CHECK(normalize_relation_name("per:city_of_birth") == V{"city", "of", "birth"});
  CHECK(normalize_relation_name("org:founded_by") == V{"founded", "by"});
  CHECK(normalize_relation_name("P361:partOf") == V{"part", "of"});
  CHECK(normalize_relation_name("P17_country") == V{"country"});
  CHECK(normalize_relation_name("member-of/team") == V{"member", "of", "team"});
  CHECK(normalize_relation_name("no_relation") == V{"no", "relation"});
  CHECK(normalize_relation_name("P31") == V{"p31"});
}

TEST_CASE("training batch masks relation words and a floor share of the sentence") {
  const std::vector<RelationInstance> one{sentence_of(20, 7, "per:city_of_birth")};
  const auto batch = make_training_batch(one, 0.15, 3);
  REQUIRE(batch.size() == 1);
  const auto& ex = batch[0];
  CHECK(ex.uid == 7);
  CHECK(ex.relation_mask_count() == 3);
  CHECK(ex.mask_positions.size() == 3 + 3);
  CHECK(ex.mask_positions.size() == ex.mask_targets.size());
  CHECK(ex.origins.size() == ex.mask_positions.size());
  CHECK(std::is_sorted(ex.mask_positions.begin(), ex.mask_positions.end()));
  CHECK(std::adjacent_find(ex.mask_positions.begin(), ex.mask_positions.end()) == ex.mask_positions.end());
  for (std::size_t i = 0; i < ex.mask_positions.size(); ++i) {
    CHECK(ex.tokens[ex.mask_positions[i]] == kMaskToken);
    if (ex.origins[i] == MaskOrigin::random_mask) {
      CHECK(ex.mask_positions[i] > 0);
      CHECK(ex.mask_positions[i] < 19);
      CHECK(ex.mask_targets[i] == "w" + std::to_string(ex.mask_positions[i]));
    }
  }
  std::vector<std::string> relation_targets;
  for (std::size_t i = 0; i < ex.origins.size(); ++i) {
    if (ex.origins[i] == MaskOrigin::relation_mask) relation_targets.push_back(ex.mask_targets[i]);
  }
  CHECK(relation_targets == std::vector<std::string>{"city", "of", "birth"});
}

TEST_CASE("zero mask rate leaves only relation masks") {
  const std::vector<RelationInstance> one{sentence_of(20, 1, "org:founded_by")};
  const auto batch = make_training_batch(one, 0.0, 3);
  CHECK(batch[0].mask_positions.size() == 2);
  CHECK(batch[0].relation_mask_count() == 2);
}

TEST_CASE("random masks never cover entity tokens and stop when none are left") {
  RelationInstance inst = sentence_of(4, 1, "r");
  inst.head = {0, 2};
  inst.tail = {2, 4};
  const std::vector<RelationInstance> one{inst};
  const auto batch = make_training_batch(one, 0.9, 1);
  CHECK(batch[0].mask_positions.size() == 1);
}

TEST_CASE("training batch is seeded and validates its input") {
  std::vector<RelationInstance> many;
  for (Uid u = 1; u <= 20; ++u) many.push_back(sentence_of(30, u, "per:title"));
  const auto a = make_training_batch(many, 0.15, 9);
  const auto b = make_training_batch(many, 0.15, 9);
  const auto c = make_training_batch(many, 0.15, 10);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].mask_positions == b[i].mask_positions);
    any_diff = any_diff || a[i].mask_positions != c[i].mask_positions;
  }
  CHECK(any_diff);
  CHECK_THROWS_AS(make_training_batch(std::vector<RelationInstance>{}, 0.15, 1), Error);
  CHECK_THROWS_AS(make_training_batch(many, 1.0, 1), Error);
  many[3].gold_class.reset();
  CHECK_THROWS_AS(make_training_batch(many, 0.15, 1), Error);
}

TEST_CASE("vocabulary keeps first-seen order") {
  Vocabulary v;
  CHECK(v.add("b") == 0);
  CHECK(v.add("a") == 1);
  CHECK(v.add("b") == 0);
  CHECK(v.size() == 2);
  CHECK(v.find("a") == std::optional<std::size_t>(1));
  CHECK_FALSE(v.find("z").has_value());

  std::vector<RelationInstance> corpus{sentence_of(3, 2, "x"), john_founded_acme()};
  const std::vector<std::string> classes{"per:city_of_birth"};
  const Vocabulary built = build_vocabulary(corpus, classes);
  CHECK(built.at(0) == "John");
  CHECK(built.find("city").has_value());
  CHECK_FALSE(built.find(kMaskToken).has_value());
}

TEST_CASE("constrained ranking filters to sentence tokens") {
  const StubMlm stub = scored_stub();
  const auto inst = john_founded_acme();
  const auto con = rank_tokens_constrained(inst, stub);
  CHECK(con.mode == RankingMode::constrained);
  CHECK(tokens_of(con) == std::vector<std::string>{"founded", "Acme", "John"});
  CHECK(con.entries[0].score == doctest::Approx(0.9));
  CHECK(tokens_of(rank_tokens_constrained(inst, stub, 1)) == std::vector<std::string>{"founded"});

  auto repeated = inst;
  repeated.tokens.push_back("founded");
  CHECK(rank_tokens_constrained(repeated, stub).entries.size() == 3);

  const auto unc = rank_tokens_unconstrained(inst, stub, 2);
  CHECK(unc.mode == RankingMode::unconstrained);
  CHECK(tokens_of(unc) == std::vector<std::string>{"founded", "created"});
}

TEST_CASE("out-of-vocabulary sentence tokens are skipped") {
  StubMlm stub(Vocabulary({"Acme", "other"}), 0);
  auto inst = john_founded_acme();
  CHECK(tokens_of(rank_tokens_constrained(inst, stub)) == std::vector<std::string>{"Acme"});
  StubMlm empty(Vocabulary({"other"}), 0);
  CHECK_THROWS_WITH_AS(rank_tokens_constrained(inst, empty),
                       doctest::Contains("no in-vocabulary sentence tokens"), Error);
}

TEST_CASE("uniform scores keep vocabulary order") {
  StubMlm stub(Vocabulary({"d", "c", "b", "a"}), 0);
  for (const char* t : {"a", "b", "c", "d"}) stub.set_score(t, 0.5);
  RelationInstance inst;
  inst.tokens = {"a", "b", "c", "d"};
  inst.head = {0, 1};
  inst.tail = {1, 2};
  CHECK(tokens_of(rank_tokens_unconstrained(inst, stub)) == std::vector<std::string>{"d", "c", "b", "a"});
  CHECK(tokens_of(rank_tokens_constrained(inst, stub)) == std::vector<std::string>{"d", "c", "b", "a"});
}

TEST_CASE("stub scores are deterministic and in range") {
  const Vocabulary v({"x", "y", "z"});
  StubMlm a(v, 5), b(v, 5), c(v, 6);
  const std::vector<std::string> toks{"x", kMaskToken};
  const std::vector<std::size_t> pos{1};
  const auto sa = a.score_masks(toks, pos);
  CHECK(sa == b.score_masks(toks, pos));
  CHECK(sa != c.score_masks(toks, pos));
  REQUIRE(sa.size() == 1);
  CHECK(sa[0].size() == 3);
  for (double s : sa[0]) {
    CHECK(s >= 0.0);
    CHECK(s < 1.0);
  }
  a.set_score("new_token", 2.0);
  CHECK(a.vocabulary().size() == 4);
  CHECK(a.score_masks(toks, pos)[0][3] == 2.0);
}

TEST_CASE("rankings are subsets with dominated top scores") {
  SyntheticOptions o;
  o.classes = planted_classes(4, 4, 30, 20);
  o.seed = 3;
  const Corpus corpus = generate_synthetic_corpus(o);
  const StubMlm stub(build_vocabulary(corpus, {}), 8);
  for (const auto& inst : corpus) {
    const auto con = rank_tokens_constrained(inst, stub);
    const auto unc = rank_tokens_unconstrained(inst, stub);
    CHECK(con.entries.front().score <= unc.entries.front().score);
    std::set<std::string> sentence(inst.tokens.begin(), inst.tokens.end());
    for (const auto& e : con.entries) CHECK(sentence.contains(e.token));
    for (std::size_t i = 1; i < con.entries.size(); ++i) {
      CHECK(con.entries[i - 1].score >= con.entries[i].score);
    }
    CHECK(unc.entries.size() == stub.vocabulary().size());
  }
}

TEST_CASE("tiny model learns cue words and early stopping restores the best epoch") {
  SyntheticOptions o;
  o.classes = planted_classes(5, 0, 40, 0);
  o.seed = 2;
  const Corpus corpus = generate_synthetic_corpus(o);
  std::vector<std::string> classes;
  for (const auto& c : o.classes) classes.push_back(c.name);
  const Vocabulary vocab = build_vocabulary(corpus, classes);

  auto [train, held] = split_heldout_relations(corpus, 1, std::nullopt, 4);
  CHECK_FALSE(held.empty());
  std::set<std::string> held_classes;
  for (const auto& inst : held) held_classes.insert(*inst.gold_class);
  CHECK(held_classes.size() == 1);
  for (const auto& inst : train) CHECK_FALSE(held_classes.contains(*inst.gold_class));

  TinyMlmOptions topts;
  topts.seed = 1;
  topts.max_epochs = 8;
  TinyMlm model(vocab, topts);
  const auto train_ex = make_training_batch(train, 0.15, 1);
  const auto held_ex = make_training_batch(held, 0.15, 1);
  const double before = model.mean_nll(train_ex);
  const MlmTrainReport report = model.train(train_ex, held_ex);
  CHECK(report.epochs_run >= 1);
  CHECK(report.train_loss.size() == report.epochs_run);
  CHECK(report.heldout_perplexity.size() == report.epochs_run);
  CHECK(model.mean_nll(train_ex) < before);
  const double best = *std::min_element(report.heldout_perplexity.begin(), report.heldout_perplexity.end());
  CHECK(std::exp(model.mean_nll(held_ex)) == doctest::Approx(best).epsilon(1e-9));

  const auto scores = model.score_masks(build_prompt_text(train[0], 1).tokens,
                                        build_prompt_text(train[0], 1).mask_positions);
  REQUIRE(scores.size() == 1);
  CHECK(scores[0].size() == vocab.size());
  double total = 0.0;
  for (double s : scores[0]) total += s;
  CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("held-out selection never takes every relation or the negative class") {
  std::vector<RelationInstance> labeled{sentence_of(5, 1, "a"), sentence_of(5, 2, "b"),
                                        sentence_of(5, 3, "no_relation")};
  auto [train, held] = split_heldout_relations(labeled, 5, std::string("no_relation"), 1);
  CHECK(held.size() == 1);
  CHECK(train.size() == 2);
  for (const auto& inst : held) CHECK(*inst.gold_class != "no_relation");
}
