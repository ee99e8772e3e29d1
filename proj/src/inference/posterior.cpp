#include "demix/inference/posterior.hpp"

#include "demix/error.hpp"
#include "demix/numerics/softmax.hpp"

#include <cmath>
#include <limits>

namespace demix {

std::string to_string(PriorStrategy s) {
  switch (s) {
    case PriorStrategy::uniform:
      return "uniform";
    case PriorStrategy::updating:
      return "updating";
    case PriorStrategy::cached:
      return "cached";
  }
  return "unknown";
}

PriorStrategy parse_prior_strategy(const std::string& name) {
  if (name == "uniform") return PriorStrategy::uniform;
  if (name == "updating") return PriorStrategy::updating;
  if (name == "cached") return PriorStrategy::cached;
  throw ConfigError("prior", "unknown prior strategy '" + name + "'");
}

DomainPrior DomainPrior::uniform(std::size_t n) {
  if (n == 0) throw std::invalid_argument("prior over zero experts");
  DomainPrior p;
  p.weights.assign(n, 1.0 / static_cast<double>(n));
  return p;
}

DomainPrior DomainPrior::updating(std::size_t n, double lambda) {
  DomainPrior p = uniform(n);
  p.strategy = PriorStrategy::updating;
  p.lambda = lambda;
  p.validate();
  return p;
}

DomainPrior DomainPrior::fixed(std::vector<double> weights) {
  DomainPrior p;
  p.weights = std::move(weights);
  p.strategy = PriorStrategy::cached;
  p.validate();
  return p;
}

void DomainPrior::validate() const {
  if (weights.empty()) throw std::invalid_argument("prior over zero experts");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("prior weights must be finite and non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("prior weights must sum to 1");
  if (!(lambda > 0.0 && lambda <= 1.0)) throw ConfigError("lambda", "must lie in (0, 1]");
}

DomainPosterior domain_posterior(std::span<const double> evidence, const DomainPrior& prior) {
  if (evidence.size() != prior.size()) {
    throw std::invalid_argument("evidence has " + std::to_string(evidence.size()) + " entries, prior has " +
                                std::to_string(prior.size()));
  }
  std::vector<double> joint(evidence.size());
  bool any_mass = false;
  for (std::size_t j = 0; j < evidence.size(); ++j) {
    if (!std::isfinite(evidence[j])) throw std::invalid_argument("evidence must be finite");
    const double w = prior.weights[j];
    joint[j] = w > 0.0 ? evidence[j] + std::log(w) : -std::numeric_limits<double>::infinity();
    any_mass = any_mass || w > 0.0;
  }
  if (!any_mass) throw DataError("prior places no mass on any active expert");
  std::vector<double> logp = stable_log_softmax(std::span<const double>(joint));
  DomainPosterior post;
  post.evidence.assign(evidence.begin(), evidence.end());
  post.weights.resize(logp.size());
  for (std::size_t j = 0; j < logp.size(); ++j) post.weights[j] = std::exp(logp[j]);
  return post;
}

DomainPrior ewma_prior(const std::vector<std::vector<double>>& history, double lambda, std::size_t n) {
  if (!(lambda > 0.0 && lambda <= 1.0)) throw ConfigError("lambda", "must lie in (0, 1]");
  DomainPrior p = DomainPrior::updating(n, lambda);
  if (history.empty()) return p;
  // acc_t = lambda * (acc_{t-1} + post_{t-1}) unrolls to the weighted sum.
  std::vector<double> acc(n, 0.0);
  for (const auto& post : history) {
    if (post.size() != n) throw std::invalid_argument("posterior history has inconsistent length");
    for (std::size_t j = 0; j < n; ++j) acc[j] = lambda * (acc[j] + post[j]);
  }
  double sum = 0.0;
  for (double a : acc) sum += a;
  if (!(sum > 0.0)) throw DataError("posterior history has no mass");
  for (std::size_t j = 0; j < n; ++j) p.weights[j] = acc[j] / sum;
  p.history = history;
  return p;
}

void observe(DomainPrior& prior, const DomainPosterior& posterior) {
  if (prior.strategy != PriorStrategy::updating) return;
  prior.history.push_back(posterior.weights);
  DomainPrior next = ewma_prior(prior.history, prior.lambda, prior.size());
  prior.weights = std::move(next.weights);
}

void to_json(nlohmann::json& j, const DomainPrior& p) {
  j = nlohmann::json{{"strategy", to_string(p.strategy)},
                     {"weights", p.weights},
                     {"lambda", p.lambda},
                     {"cache_blocks", p.cache_blocks},
                     {"cached_from", p.cached_from}};
}

}  // namespace demix
