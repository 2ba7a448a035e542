#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "stgan/data.hpp"
#include "stgan/eval.hpp"
#include "stgan/models.hpp"
#include "stgan/training.hpp"

namespace stgan::cli {

struct DataSection {
  std::filesystem::path root = "data";
  std::int64_t count = 131;
  double train_fraction = kDefaultTrainFraction;
  std::uint64_t seed = 0;
  PhantomConfig phantom;
};

// Channel counts are fixed by the task (grayscale image, one mask plane) and
// not configurable.
struct ModelSection {
  GeneratorConfig generator;
  DiscriminatorKind discriminator;
};

struct EvalSection {
  double threshold = 0.5;
  PostprocessOptions postprocess;
  std::filesystem::path output_dir = "eval";
  bool overlays = false;
};

struct RunConfig {
  DataSection data;
  ModelSection model;
  TrainConfig train;
  EvalSection eval;

  RunConfig() { train.checkpoint_dir = "run"; }

  // Throws ConfigError naming the first invalid field.
  void validate() const;
};

// Missing keys keep their defaults; unknown keys and wrongly typed values
// raise ConfigError with the dotted key path.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig parse_run_config_text(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

// Every field, including defaulted ones.
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace stgan::cli
