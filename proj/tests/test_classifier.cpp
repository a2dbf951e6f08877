#include "knord/classifier.hpp"
#include "knord/rng.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace knord;

namespace {

RelationInstance make_instance(Uid uid, std::vector<std::string> tokens, Span head, Span tail,
                               std::string head_type = "PERSON", std::string tail_type = "ORG") {
  RelationInstance inst;
  inst.uid = uid;
  inst.tokens = std::move(tokens);
  inst.head = head;
  inst.tail = tail;
  inst.head_type = std::move(head_type);
  inst.tail_type = std::move(tail_type);
  return inst;
}

std::string joined(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) out += (out.empty() ? "" : " ") + t;
  return out;
}

// Encoder with fixed hidden rows, for arithmetic checks.
class TableEncoder : public SequenceEncoder {
 public:
  explicit TableEncoder(Matrix rows) : rows_(std::move(rows)) {}
  std::size_t hidden_dim() const override { return rows_.cols(); }
  Matrix encode(std::span<const std::string> tokens) const override {
    Matrix out(tokens.size(), rows_.cols());
    for (std::size_t i = 0; i < tokens.size(); ++i)
      for (std::size_t k = 0; k < rows_.cols(); ++k) out(i, k) = rows_(i % rows_.rows(), k);
    return out;
  }
  std::string name() const override { return "table"; }

 private:
  Matrix rows_;
};

// Two classes told apart by the head word.
std::vector<RelationInstance> separable_set(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  const std::vector<std::string> filler = {"the", "a", "of", "in", "near", "with", "said", "then"};
  std::vector<RelationInstance> out;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const bool first = i % 2 == 0;
    std::vector<std::string> toks = {first ? "alpha" : "omega", "met"};
    for (int j = 0; j < 3; ++j) toks.push_back(filler[rng.index(filler.size())]);
    toks.push_back("entity" + std::to_string(rng.index(6)));
    auto inst = make_instance(static_cast<Uid>(i + 1), toks, {0, 1}, {5, 6});
    inst.gold_class = first ? "class_a" : "class_b";
    out.push_back(inst);
  }
  return out;
}

// Binary logistic regression by full-batch gradient descent.
double logistic_training_accuracy(const std::vector<std::vector<double>>& x,
                                  const std::vector<int>& y) {
  const std::size_t d = x[0].size();
  std::vector<double> w(d, 0.0);
  double b = 0.0;
  for (int it = 0; it < 2000; ++it) {
    std::vector<double> gw(d, 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double z = b;
      for (std::size_t j = 0; j < d; ++j) z += w[j] * x[i][j];
      const double err = 1.0 / (1.0 + std::exp(-z)) - y[i];
      for (std::size_t j = 0; j < d; ++j) gw[j] += err * x[i][j];
      gb += err;
    }
    for (std::size_t j = 0; j < d; ++j) w[j] -= 0.5 * gw[j] / static_cast<double>(x.size());
    b -= 0.5 * gb / static_cast<double>(x.size());
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double z = b;
    for (std::size_t j = 0; j < d; ++j) z += w[j] * x[i][j];
    correct += (z > 0) == (y[i] == 1);
  }
  return static_cast<double>(correct) / static_cast<double>(x.size());
}

}  // namespace

TEST_CASE("marker template") {
  const auto seq =
      encode_with_markers(make_instance(1, {"John", "founded", "Acme"}, {0, 1}, {2, 3}));
  CHECK(joined(seq.tokens) == "PERSON ORG : <H> John </H> founded <T> Acme </T>");
  CHECK(seq.head_range == Span{4, 5});
  CHECK(seq.tail_range == Span{8, 9});
  CHECK(strip_markers(seq) == std::vector<std::string>{"John", "founded", "Acme"});
}

TEST_CASE("tail before head keeps head-first types") {
  const auto seq = encode_with_markers(
      make_instance(2, {"Acme", "Corp", "hired", "John"}, {3, 4}, {0, 2}, "PERSON", "ORG"));
  CHECK(joined(seq.tokens) == "PERSON ORG : <T> Acme Corp </T> hired <H> John </H>");
  CHECK(seq.tokens[seq.head_range.start] == "John");
  CHECK(seq.tail_range.size() == 2);
}

TEST_CASE("adjacent spans get both marker pairs") {
  const auto seq = encode_with_markers(make_instance(3, {"Acme", "CEO", "John"}, {2, 3}, {0, 2}));
  CHECK(joined(seq.tokens) == "PERSON ORG : <T> Acme CEO </T> <H> John </H>");
  const auto seq2 = encode_with_markers(make_instance(3, {"John", "Acme"}, {0, 1}, {1, 2}));
  CHECK(joined(seq2.tokens) == "PERSON ORG : <H> John </H> <T> Acme </T>");
  CHECK(strip_markers(seq2) == std::vector<std::string>{"John", "Acme"});
}

TEST_CASE("overlapping spans are rejected") {
  CHECK_THROWS_WITH_AS(encode_with_markers(make_instance(9, {"a", "b", "c"}, {0, 2}, {1, 3})),
                       doctest::Contains("overlap"), Error);
}

TEST_CASE("markers are reversible on random instances") {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.index(10);
    std::vector<std::string> toks;
    for (std::size_t i = 0; i < n; ++i) toks.push_back("w" + std::to_string(rng.index(5)));
    const std::size_t cut = 1 + rng.index(n - 1);
    Span a{rng.index(cut), 0}, b{cut + rng.index(n - cut), 0};
    a.end = a.start + 1 + rng.index(cut - a.start);
    b.end = b.start + 1 + rng.index(n - b.start);
    const bool swap = rng.index(2) == 1;
    const auto inst = make_instance(1, toks, swap ? b : a, swap ? a : b);
    const auto seq = encode_with_markers(inst);
    CHECK(strip_markers(seq) == toks);
    CHECK(seq.tokens.size() == toks.size() + 7);
    for (std::size_t i = 0; i < inst.head.size(); ++i)
      CHECK(seq.tokens[seq.head_range.start + i] == toks[inst.head.start + i]);
    CHECK(seq.tokens[seq.head_range.start - 1] == kHeadOpen);
    CHECK(seq.tokens[seq.tail_range.end] == kTailClose);
  }
}

TEST_CASE("entity pooling arithmetic") {
  Matrix hidden(6, 2);
  for (std::size_t i = 0; i < 6; ++i) {
    hidden(i, 0) = static_cast<double>(i);
    hidden(i, 1) = static_cast<double>(10 * i);
  }
  MarkedSequence seq;
  seq.tokens.assign(6, "x");
  seq.head_range = {1, 3};
  seq.tail_range = {4, 5};
  const auto r = relation_representation(seq, hidden);
  CHECK(r == std::vector<double>{(1.0 + 2.0) / 2, (10.0 + 20.0) / 2, 4.0, 40.0});

  TableEncoder constant(Matrix(1, 3, 0.25));
  const auto inst = make_instance(1, {"John", "Smith", "founded", "Acme"}, {0, 2}, {3, 4});
  CHECK(relation_representation(encode_with_markers(inst), constant) ==
        std::vector<double>(6, 0.25));

  seq.head_range = {2, 2};
  CHECK_THROWS_WITH_AS(relation_representation(seq, hidden), doctest::Contains("empty"), Error);
}

TEST_CASE("label space layout") {
  const LabelSpace ls({"a", "b"}, {7, 3, 9, 11, 12});
  CHECK(ls.size() == 6);
  CHECK(ls.known_id("b") == 1u);
  CHECK_FALSE(ls.known_id("z"));
  CHECK(ls.slot_of_cluster(7) == 2u);
  CHECK(ls.slot_of_cluster(11) == 5u);
  CHECK_FALSE(ls.slot_of_cluster(12));  // beyond 2k slots
  CHECK(ls.cluster_of_slot(3) == 3u);
  CHECK_FALSE(ls.cluster_of_slot(0));
  CHECK(ls.describe(0) == "a");
  CHECK(ls.describe(4) == "novel_cluster_9");
  const LabelSpace sparse({"a", "b"}, {5});
  CHECK(sparse.describe(5) == "novel_slot_5");
  CHECK_THROWS_AS(LabelSpace({}, {}), Error);
  CHECK_THROWS_AS(LabelSpace({"a", "a"}, {}), Error);
  CHECK_THROWS_AS(LabelSpace({"a"}, {1, 1}), Error);
}

TEST_CASE("training set merges gold and weak labels") {
  auto gold = separable_set(2, 1);
  auto extra = make_instance(50, {"x", "met", "y"}, {0, 1}, {2, 3});
  std::map<Uid, const RelationInstance*> by_uid = {{50, &extra}};
  const LabelSpace ls({"class_a", "class_b"}, {4});
  WeakLabelSet weak;
  weak.entries = {{50, 4, 0.9}, {50, 4, 0.9}, {50, 8, 0.5}};
  const auto set = build_training_set(gold, weak, by_uid, ls);
  REQUIRE(set.size() == 6);
  CHECK(set[0].label == 0);
  CHECK(set[1].label == 1);
  CHECK(set[4].label == 2);
  CHECK(set[5].uid == 50);  // duplicated weak entries are kept

  weak.entries = {{51, 4, 0.9}};
  CHECK_THROWS_AS(build_training_set(gold, weak, by_uid, ls), Error);
  gold[0].gold_class = "class_z";
  CHECK_THROWS_WITH_AS(build_training_set(gold, {}, by_uid, ls), doctest::Contains("class_z"),
                       Error);
}

TEST_CASE("cross-entropy gradients match central differences") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 1 + rng.index(5), f = 2 + rng.index(6), n = 2 + rng.index(6);
    Matrix x(b, f), w(n, f);
    std::vector<double> bias(n);
    std::vector<std::size_t> y(b);
    for (auto& v : x.data()) v = rng.normal();
    for (auto& v : w.data()) v = rng.normal(0.0, 0.5);
    for (auto& v : bias) v = rng.normal(0.0, 0.1);
    for (auto& v : y) v = rng.index(n);
    CHECK(oracle::max_gradient_error(x, y, w, bias) < 1e-4);
    const auto g = softmax_cross_entropy(x, y, w, bias);
    CHECK(g.loss == doctest::Approx(oracle::cross_entropy(x, y, w, bias)).epsilon(1e-12));
  }
}

TEST_CASE("trainable encoder gradients match central differences") {
  const auto inst = make_instance(1, {"John", "Smith", "founded", "big", "Acme"}, {0, 2}, {4, 5});
  const auto seq = encode_with_markers(inst);
  Vocabulary vocab(std::vector<std::string>(seq.tokens.begin(), seq.tokens.end() - 2));
  TinyEncoder enc(vocab, 4, 2);
  Rng rng(3);
  Matrix w(3, 8);
  for (auto& v : w.data()) v = rng.normal();
  const std::vector<double> bias = {0.1, -0.2, 0.0};
  const std::vector<std::size_t> y = {2};

  auto loss = [&] {
    const auto r = relation_representation(seq, enc);
    Matrix x(1, 8);
    std::copy(r.begin(), r.end(), x.row(0).begin());
    return oracle::cross_entropy(x, y, w, bias);
  };

  const auto r = relation_representation(seq, enc);
  Matrix x(1, 8);
  std::copy(r.begin(), r.end(), x.row(0).begin());
  const auto g = softmax_cross_entropy(x, y, w, bias);
  Matrix d_hidden(seq.tokens.size(), 4);
  for (std::size_t t = seq.head_range.start; t < seq.head_range.end; ++t)
    for (std::size_t k = 0; k < 4; ++k) d_hidden(t, k) += g.d_features(0, k) / 2.0;
  for (std::size_t t = seq.tail_range.start; t < seq.tail_range.end; ++t)
    for (std::size_t k = 0; k < 4; ++k) d_hidden(t, k) += g.d_features(0, 4 + k);
  enc.zero_grad();
  enc.backward(seq.tokens, d_hidden);

  auto params = enc.parameters();
  auto grads = enc.gradients();
  double worst = 0.0;
  std::size_t probed = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      if (grads[p][i] == 0.0 && i % 7 != 0) continue;
      const double keep = params[p][i];
      params[p][i] = keep + 1e-5;
      const double up = loss();
      params[p][i] = keep - 1e-5;
      const double down = loss();
      params[p][i] = keep;
      const double numeric = (up - down) / 2e-5;
      if (std::abs(numeric) < 1e-7 && std::abs(grads[p][i]) < 1e-7) continue;
      worst = std::max(worst, oracle::relative_error(grads[p][i], numeric));
      ++probed;
    }
  }
  CHECK(probed > 20);
  CHECK(worst < 1e-4);
}

TEST_CASE("separable toy set reaches perfect training accuracy") {
  const auto data = separable_set(20, 5);
  StubEncoder enc(16, 1);
  std::vector<std::vector<double>> feats;
  std::vector<int> y;
  for (const auto& inst : data) {
    feats.push_back(relation_representation(encode_with_markers(inst), enc));
    y.push_back(*inst.gold_class == "class_a" ? 1 : 0);
  }
  REQUIRE(logistic_training_accuracy(feats, y) == 1.0);

  const LabelSpace ls({"class_a", "class_b"}, {});
  const auto examples = build_training_set(data, {}, {}, ls);
  TrainOptions opt;
  opt.epochs = 200;
  opt.learning_rate = 1e-2;
  opt.dropout = 0.0;
  opt.batch_size = 8;
  const auto head = train_classifier(examples, ls, enc, opt);
  CHECK(head.loss_trace.size() == 200);
  CHECK(head.loss_trace.back() < head.loss_trace.front());
  const auto preds = predict(data, head, enc);
  std::size_t correct = 0;
  for (const auto& inst : data) correct += ls.known_id(*inst.gold_class) == preds.at(inst.uid).label;
  CHECK(correct == data.size());

  const auto again = train_classifier(examples, ls, enc, opt);
  CHECK(again.weights == head.weights);
}

TEST_CASE("zero epochs leaves the head at initialization") {
  const auto data = separable_set(5, 2);
  const LabelSpace ls({"class_a", "class_b"}, {});
  StubEncoder enc(8, 0);
  TrainOptions opt;
  opt.epochs = 0;
  const auto head = train_classifier(build_training_set(data, {}, {}, ls), ls, enc, opt);
  CHECK(head.loss_trace.empty());
  CHECK(head.bias == std::vector<double>(6, 0.0));
  for (const auto& [uid, p] : predict(data, head, enc)) {
    CHECK(p.confidence < 0.5);
    CHECK(p.confidence > 1.0 / 6.0);
  }
}

TEST_CASE("labels outside the space fail before training") {
  const LabelSpace ls({"a"}, {});
  StubEncoder enc(4, 0);
  auto inst = make_instance(1, {"x", "y"}, {0, 1}, {1, 2});
  std::vector<TrainingExample> ex = {{1, encode_with_markers(inst), 3}};
  CHECK_THROWS_WITH_AS(train_classifier(ex, ls, enc, {}), doctest::Contains("outside"), Error);
  ex[0].label = 0;
  TrainOptions bad;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(train_classifier(ex, ls, enc, bad), Error);
}

TEST_CASE("softmax sums to one and ignores shifts") {
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> z(2 + rng.index(10));
    for (auto& v : z) v = rng.normal(0.0, 20.0);
    const auto p = softmax(z);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    const double c = rng.normal(0.0, 100.0);
    for (auto& v : z) v += c;
    const auto q = softmax(z);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(q[i] == doctest::Approx(p[i]).epsilon(1e-9));
  }
}

TEST_CASE("predict on nothing is empty") {
  ClassifierHead head;
  head.weights = Matrix(3, 8);
  head.bias.assign(3, 0.0);
  StubEncoder enc(4, 0);
  CHECK(predict({}, head, enc).empty());
}

TEST_CASE("head checkpoint round trip") {
  const LabelSpace ls({"a", "b"}, {5, 2});
  ClassifierHead head;
  head.weights = Matrix(6, 4);
  Rng rng(1);
  for (auto& v : head.weights.data()) v = static_cast<float>(rng.normal());
  head.bias = {0.5, -0.25, 0, 1, 2, 3};
  const auto bytes = encode_head_checkpoint(head, ls);
  const auto [back, labels] = decode_head_checkpoint(bytes);
  CHECK(back.weights == head.weights);
  CHECK(back.bias == head.bias);
  CHECK(labels.known_classes() == ls.known_classes());
  CHECK(labels.novel_clusters() == ls.novel_clusters());
  CHECK_THROWS_AS(decode_head_checkpoint(bytes.substr(0, bytes.size() - 2)), Error);
}
