#pragma once

#include "demix/corpus/blocks.hpp"
#include "demix/error.hpp"
#include "demix/model/model.hpp"
#include "demix/trainer/batching.hpp"
#include "demix/trainer/optimizer.hpp"
#include "demix/trainer/schedule.hpp"
#include "demix/trainer/sync_plan.hpp"

#include <filesystem>
#include <functional>
#include <optional>

namespace demix {

struct TrainData {
  std::vector<DomainBlocks> train;
  std::vector<DomainBlocks> dev;
  std::vector<DomainBlocks> test;
};

/// build_blocks + split_blocks.
TrainData make_train_data(const Corpus& corpus, std::size_t block_length, std::size_t shards, double dev_fraction,
                          double test_fraction);

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  std::size_t tokens = 0;
};

struct EvalRecord {
  std::size_t step = 0;
  std::vector<std::string> domains;
  std::vector<double> perplexity;
  double mean = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  bool early_stopped = false;
  std::optional<std::size_t> best_step;

  std::string to_jsonl() const;
  void write(const std::filesystem::path& path) const;
};

/// Raised when a step produces a non-finite loss or gradient. The model has
/// already been restored to the last parameters that gave a finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, double lr)
      : Error("training diverged at step " + std::to_string(step)), step_(step), lr_(lr) {}
  std::size_t step() const { return step_; }
  double lr() const { return lr_; }

 private:
  std::size_t step_;
  double lr_;
};

struct TrainOptions {
  /// Parameters outside this predicate get no gradient and are never updated.
  std::function<bool(const std::string&)> trainable;
  /// Called after every optimizer step.
  std::function<void(const StepRecord&)> on_step;
};

/// Simulated expert-parallel training. Workers run in id order; worker w of
/// domain group g reads shard (w mod group size) of domain g. Expert
/// gradients are averaged over the contributions routed to that expert,
/// shared gradients over all workers and accumulation steps.
TrainLog train_run(DemixModel& model, const TrainData& data, const TrainConfig& config, const TrainOptions& options = {});

struct SweepResult {
  std::vector<double> lrs;
  std::vector<bool> diverged;
  std::vector<double> final_loss;
  std::optional<double> chosen;
};

/// {1e-3, 3e-3, 5e-3}: small models tolerate rates ten times the large-model grid.
std::vector<double> default_lr_grid();

/// Trains a fresh model per learning rate and chooses the largest one that
/// does not diverge.
SweepResult sweep_lr(const ModelConfig& model_config, const TrainData& data, const TrainConfig& base,
                     const std::vector<double>& grid);

void to_json(nlohmann::json& j, const SweepResult& r);

}  // namespace demix
