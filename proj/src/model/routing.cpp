#include "demix/model/routing.hpp"

#include "demix/error.hpp"
#include "demix/model/model.hpp"

#include <cmath>
#include <stdexcept>

namespace demix {

RoutingWeights RoutingWeights::hard(std::size_t n_experts, std::size_t expert) {
  if (expert >= n_experts) throw std::out_of_range("expert index out of range");
  RoutingWeights r;
  r.mode = RoutingMode::hard;
  r.gates.assign(n_experts, 0.0);
  r.gates[expert] = 1.0;
  return r;
}

std::vector<std::size_t> RoutingWeights::selected() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < gates.size(); ++j) {
    if (gates[j] != 0.0) out.push_back(j);
  }
  return out;
}

RoutingWeights route_weights(const DemixModel& model, const std::optional<DomainLabel>& domain,
                             std::optional<std::span<const double>> posterior, RoutingMode mode) {
  const ModelConfig& config = model.config();
  if (config.variant != FfnVariant::demix || mode == RoutingMode::dense) return RoutingWeights::dense();

  if (mode == RoutingMode::hard) {
    if (!domain) throw std::invalid_argument("hard routing requires a domain");
    DomainSet domains = model.domains();
    if (domain->index >= domains.size() || domains.label(domain->index).name != domain->name) {
      throw DataError("unknown domain '" + domain->name + "'");
    }
    if (!model.is_active(domain->index)) throw DataError("expert disabled: '" + domain->name + "'");
    return RoutingWeights::hard(model.n_experts(), domain->index);
  }

  if (!posterior) throw std::invalid_argument("mixture routing requires a posterior");
  std::vector<std::size_t> active = model.active_experts();
  if (posterior->size() != active.size()) {
    throw DataError("posterior has " + std::to_string(posterior->size()) + " entries for " +
                    std::to_string(active.size()) + " active experts");
  }
  double sum = 0.0;
  for (double w : *posterior) {
    if (!(w >= 0.0)) throw DataError("mixture weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DataError("mixture weights must sum to 1");
  RoutingWeights r;
  r.mode = RoutingMode::mixture;
  r.gates.assign(model.n_experts(), 0.0);
  for (std::size_t i = 0; i < active.size(); ++i) r.gates[active[i]] = (*posterior)[i];
  return r;
}

}  // namespace demix
