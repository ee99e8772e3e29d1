#pragma once

#include "demix/corpus/corpus.hpp"
#include "demix/inference/evaluate.hpp"
#include "demix/model/model.hpp"
#include "demix/trainer/trainer.hpp"

#include <set>
#include <span>
#include <string>

namespace demix {

struct AdaptConfig {
  std::string target;
  /// Held-out target blocks used to pick the initial expert.
  std::size_t heldout_blocks = 100;
  double base_lr = 3e-3;
  double lr_divisor = 10.0;
  /// Training budget and early stopping; peak_lr is overwritten with base_lr / lr_divisor.
  TrainConfig train;
  double lambda = 0.3;

  double lr() const { return base_lr / lr_divisor; }
  void validate() const;
};

void to_json(nlohmann::json& j, const AdaptConfig& c);
void from_json(const nlohmann::json& j, AdaptConfig& c);

/// Exactly the parameter names that may change.
struct FreezeMask {
  std::set<std::string> trainable;
  bool allows(const std::string& name) const { return trainable.contains(name); }
};

/// Every parameter of `expert` in every DEMix layer.
FreezeMask expert_freeze_mask(const DemixModel& model, std::size_t expert);

/// argmax of the cached prior over active experts; ties go to the lowest index.
DomainLabel select_init_expert(const DemixModel& model, std::span<const SequenceBlock> heldout,
                               std::size_t cache_blocks = 100, double lambda = 0.3);

/// Appends an expert copied from `init_from` and records the lineage.
DomainLabel add_expert(DemixModel& model, const std::string& domain, const DomainLabel& init_from);

struct DaptResult {
  TrainLog log;
  double ppl_before = 0.0;
  double ppl_after = 0.0;
};

/// Trains only the target expert (hard-routed) on `target.train`, tracking
/// naive perplexity on `target.dev`. Verifies afterwards that every
/// parameter outside the mask is bit-identical; throws otherwise.
DaptResult dapt_run(DemixModel& model, const TrainData& target, const AdaptConfig& config);

/// Marks the expert inactive. Throws when it is the last active one.
void remove_expert(DemixModel& model, const DomainLabel& domain);
void restore_expert(DemixModel& model, const DomainLabel& domain);

/// Corpus with `excluded` swapped for `replacement` at the same position.
Corpus replace_domain(const Corpus& corpus, const std::string& excluded, const std::string& replacement);

/// Fresh DEMix model trained on replace_domain(corpus, excluded, replacement).
struct MinusDomainResult {
  DemixModel model;
  TrainLog log;
};
MinusDomainResult minus_domain_baseline(const Corpus& corpus, ModelConfig model_config, const TrainConfig& train,
                                        const std::string& excluded, const std::string& replacement,
                                        std::size_t shards, double dev_fraction, double test_fraction);

}  // namespace demix
