// Writes the bundled synthetic corpus and its ontology.
#include "knord/io.hpp"
#include "knord/synthetic.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"generate a synthetic relation corpus"};
  std::string out_dir = "data";
  std::uint64_t seed = 7;
  std::size_t n_known = 4, n_novel = 4, known_count = 28, novel_count = 18, negatives = 28;
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "generator seed");
  app.add_option("--known", n_known, "number of frequent classes");
  app.add_option("--novel", n_novel, "number of rare classes");
  app.add_option("--known-count", known_count, "instances of the most frequent class");
  app.add_option("--novel-count", novel_count, "instances of the most frequent rare class");
  app.add_option("--negatives", negatives, "hard-negative instances");
  CLI11_PARSE(app, argc, argv);
  try {
    knord::SyntheticOptions opts;
    opts.classes = knord::planted_classes(n_known, n_novel, known_count, novel_count, negatives);
    opts.seed = seed;
    opts.with_kb_ids = true;
    const auto corpus = knord::generate_synthetic_corpus(opts);
    knord::atomic_write(std::filesystem::path(out_dir) / "fixture.jsonl", knord::to_jsonl(corpus));
    knord::atomic_write(std::filesystem::path(out_dir) / "ontology.json",
                        knord::ontology_to_fixture_json(knord::synthetic_ontology(corpus)));
    std::cout << corpus.size() << " instances written to " << out_dir << "\n";
  } catch (const std::exception& e) {
    std::cerr << "make_fixture: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
