#pragma once

#include "demix/corpus/blocks.hpp"
#include "demix/inference/posterior.hpp"
#include "demix/model/model.hpp"

#include <optional>
#include <span>
#include <vector>

namespace demix {

/// The conditionings a model can be evaluated under: the active experts of a
/// demix model, the domain tokens of a domain_token model, or the single
/// dense conditioning ({"dense", 0}).
std::vector<DomainLabel> eval_conditions(const DemixModel& model);

struct BlockLoglik {
  double loglik = 0.0;  // nats
  std::size_t count = 0;
};

/// Sum of log-softmax(logits)[t, target_t] over unmasked rows, in double.
BlockLoglik sequence_loglik(const TensorF& logits, const BlockTargets& targets);

/// log p(block | D = j) under hard routing to expert j (demix), domain token j
/// (domain_token) or the plain forward (dense, j = 0). Throws DataError
/// "expert disabled" for an inactive expert.
BlockLoglik block_loglik(const DemixModel& model, const SequenceBlock& block, std::size_t expert);

enum class MixtureLevel { probability, hidden };

std::string to_string(MixtureLevel l);
MixtureLevel parse_mixture_level(const std::string& name);

struct MixtureResult {
  /// Mixture next-token log-distribution, L x V, double.
  TensorD log_probs;
  double loglik = 0.0;
  std::size_t count = 0;
  /// Bayes update of `prior` from the per-condition block evidence.
  DomainPosterior posterior;
};

/// probability: log sum_j w_j p(. | D = j) over the expert-conditioned
/// forwards; hidden: one forward with mixture routing w at every DEMix layer.
MixtureResult mixture_step(const DemixModel& model, const SequenceBlock& block, const DomainPrior& prior,
                           MixtureLevel level = MixtureLevel::probability);

/// Runs the updating recursion over the first min(cache_blocks, |heldout|)
/// blocks and freezes the mean of their block posteriors. `cached_from`
/// records how many blocks were used.
DomainPrior cache_prior(const DemixModel& model, std::span<const SequenceBlock> heldout, std::size_t cache_blocks = 100,
                        double lambda = 0.3);

enum class EvalKind { naive, best_single, simple_average, weighted };

std::string to_string(EvalKind k);
EvalKind parse_eval_kind(const std::string& name);

struct EvalMode {
  EvalKind kind = EvalKind::naive;
  /// naive only.
  std::optional<DomainLabel> domain;
  /// weighted only: the starting prior. Updating priors evolve block by
  /// block; uniform and cached priors stay frozen.
  DomainPrior prior;
  MixtureLevel level = MixtureLevel::probability;

  static EvalMode naive(DomainLabel d);
  static EvalMode best_single();
  static EvalMode simple_average(MixtureLevel level = MixtureLevel::probability);
  static EvalMode weighted(DomainPrior prior, MixtureLevel level = MixtureLevel::probability);
};

struct BlockLog {
  double nll = 0.0;
  std::size_t count = 0;
  /// Mixture weights applied to the block (empty for single-condition modes).
  std::vector<double> weights;
  std::vector<double> posterior;
};

struct PerplexityResult {
  double perplexity = 0.0;
  double mean_nll = 0.0;
  std::size_t tokens = 0;
  std::vector<BlockLog> blocks;
  /// best_single: perplexity of every condition and the index of the best.
  std::vector<double> per_condition;
  std::optional<std::size_t> best;
};

/// exp(mean NLL over unmasked tokens). Throws DataError on an empty set.
PerplexityResult evaluate_perplexity(const DemixModel& model, std::span<const SequenceBlock> blocks,
                                     const EvalMode& mode);

}  // namespace demix
