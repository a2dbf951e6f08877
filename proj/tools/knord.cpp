#include "knord/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

int main(int argc, char** argv) {
  CLI::App app{"knord: generalized relation discovery pipeline"};
  std::string stage;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  app.add_option("stage", stage,
                 "split | resolve_types | train_prompt | represent | cluster | classify | "
                 "evaluate | all")
      ->required()
      ->check(CLI::IsMember({"split", "resolve_types", "train_prompt", "represent", "cluster",
                             "classify", "evaluate", "all"}));
  app.add_option("--config", config_path, "flat key = value config file")->required();
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out", out_dir, "override the output directory");
  CLI11_PARSE(app, argc, argv);

  std::string tag = "config";
  try {
    knord::PipelineConfig config = knord::load_config(config_path);
    if (seed) config.seed = *seed;
    if (out_dir) config.output_dir = *out_dir;
    tag = stage;
    if (stage == "all") {
      knord::run_all(config, std::cout);
    } else {
      knord::run_stage(knord::parse_stage(stage), config, std::cout);
    }
  } catch (const knord::StageError& e) {
    std::cerr << "knord: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "knord: [" << tag << "] " << e.what() << "\n";
    return 1;
  }
  return 0;
}
