#pragma once

#include "demix/corpus/synth.hpp"
#include "demix/inference/evaluate.hpp"
#include "demix/model/config.hpp"
#include "demix/trainer/schedule.hpp"

#include <json.hpp>
#include <string>

namespace demix {

struct DataSettings {
  std::string corpus;
  std::string format = "jsonl";
  std::size_t shards = 1;
  double dev_fraction = 0.05;
  double test_fraction = 0.05;
  /// Apply the default anonymization rules to every document on load.
  bool anonymize = false;
};

struct PriorSettings {
  PriorStrategy strategy = PriorStrategy::cached;
  double lambda = 0.3;
  std::size_t cache_blocks = 100;
  MixtureLevel level = MixtureLevel::probability;
};

struct EvalSettings {
  /// naive | best_single | simple_average | weighted | all
  std::string mode = "all";
  /// Optional fixed conditioning for naive mode.
  std::string domain;
  /// 0 = every block of the split.
  std::size_t max_blocks = 0;
  /// dev | test
  std::string split = "test";
  std::size_t posterior_blocks = 100;
};

struct AdaptSettings {
  std::string target;
  std::string init_from;
  std::size_t heldout_blocks = 100;
  double lr_divisor = 10.0;
  std::size_t steps = 100;
  std::size_t patience = 3;
  std::size_t eval_interval = 10;
};

struct PathSettings {
  std::string checkpoint;
  std::string out;
  std::string reports;
};

/// Everything one CLI invocation needs. `seed` is copied into the model,
/// training and synthetic-data seeds.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  DataSettings data;
  PriorSettings prior;
  EvalSettings eval;
  AdaptSettings adapt;
  SynthSpec synth;
  PathSettings paths;

  /// Propagates the seed and checks every section; throws ConfigError.
  void resolve();
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Unknown keys are rejected with ConfigError naming the key.
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig load_experiment_config(const std::string& path);

/// FNV-1a of the canonical (sorted-key) JSON serialization, output paths
/// excluded: where artifacts land does not change what they contain.
std::string config_hash(const ExperimentConfig& c);

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);

}  // namespace demix
