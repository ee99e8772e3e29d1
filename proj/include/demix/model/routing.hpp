#pragma once

#include "demix/corpus/domain.hpp"

#include <optional>
#include <span>
#include <vector>

namespace demix {

class DemixModel;

enum class RoutingMode { hard, mixture, dense };

/// The g weights of one forward pass. `gates` has one entry per expert in the
/// bank (inactive experts are 0); the same weights apply at every DEMix layer.
struct RoutingWeights {
  RoutingMode mode = RoutingMode::dense;
  std::vector<double> gates;

  static RoutingWeights dense() { return {}; }
  /// One-hot at `expert` over a bank of `n_experts`.
  static RoutingWeights hard(std::size_t n_experts, std::size_t expert);
  /// Indices of experts with a non-zero gate.
  std::vector<std::size_t> selected() const;
};

/// hard: one-hot at domain.index; mixture: `posterior` over the active
/// experts (in active order), expanded to the full bank; dense: no routing.
/// Throws "expert disabled" for inactive domains and rejects vectors that are
/// not on the simplex (tolerance 1e-9).
RoutingWeights route_weights(const DemixModel& model, const std::optional<DomainLabel>& domain,
                             std::optional<std::span<const double>> posterior, RoutingMode mode);

}  // namespace demix
