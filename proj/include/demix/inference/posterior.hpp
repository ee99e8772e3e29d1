#pragma once

#include <json.hpp>
#include <span>
#include <string>
#include <vector>

namespace demix {

enum class PriorStrategy { uniform, updating, cached };

std::string to_string(PriorStrategy s);
PriorStrategy parse_prior_strategy(const std::string& name);

/// Probability vector over the active experts, in active order.
struct DomainPrior {
  std::vector<double> weights;
  PriorStrategy strategy = PriorStrategy::uniform;
  double lambda = 0.3;
  /// Per-block posteriors seen so far (updating only).
  std::vector<std::vector<double>> history;
  std::size_t cache_blocks = 100;
  /// Blocks actually used when a cached prior was built.
  std::size_t cached_from = 0;

  static DomainPrior uniform(std::size_t n);
  static DomainPrior updating(std::size_t n, double lambda);
  static DomainPrior fixed(std::vector<double> weights);

  std::size_t size() const { return weights.size(); }
  /// Sum to 1 within 1e-9, non-negative, lambda in (0, 1].
  void validate() const;
};

struct DomainPosterior {
  std::vector<double> weights;
  std::vector<double> evidence;
};

/// weights_j = exp(evidence_j + log prior_j - logsumexp_k(evidence_k + log prior_k)).
DomainPosterior domain_posterior(std::span<const double> evidence, const DomainPrior& prior);

/// prior proportional to sum_{t'} lambda^(t - t') posterior_{t'}, t = |history| + 1;
/// uniform over n when the history is empty.
DomainPrior ewma_prior(const std::vector<std::vector<double>>& history, double lambda, std::size_t n);

/// Appends a block posterior and recomputes the weights (updating only;
/// other strategies are left unchanged).
void observe(DomainPrior& prior, const DomainPosterior& posterior);

void to_json(nlohmann::json& j, const DomainPrior& p);

}  // namespace demix
