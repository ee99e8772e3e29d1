#pragma once

#include "demix/corpus/domain.hpp"
#include "demix/model/model.hpp"

#include <json.hpp>
#include <vector>

namespace demix {

/// Expert-parallel synchronization structure: workers are partitioned into
/// one group per domain; expert parameters are averaged inside a group and
/// shared parameters across all workers.
struct SyncPlan {
  std::size_t n_workers = 0;
  std::vector<std::string> domains;
  /// groups[g] holds the worker ids assigned to domain g (contiguous ranges).
  std::vector<std::vector<std::size_t>> groups;
  std::size_t group_size = 0;
  /// Parameters synchronized within one group (one expert per DEMix layer).
  std::size_t group_sync_params = 0;
  /// Parameters synchronized across every worker.
  std::size_t global_sync_params = 0;
  /// Pairwise exchanges per group for one expert all-reduce (group_size - 1).
  std::size_t group_exchanges = 0;

  std::size_t group_of(std::size_t worker) const { return worker / group_size; }
};

/// Throws ConfigError("workers") unless n_workers is a positive multiple of |domains|.
SyncPlan plan_sync_groups(std::size_t n_workers, const DomainSet& domains, const ParamCounts& counts = {});

void to_json(nlohmann::json& j, const SyncPlan& plan);

}  // namespace demix
