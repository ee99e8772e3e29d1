#include "demix/trainer/sync_plan.hpp"

#include "demix/error.hpp"

namespace demix {

SyncPlan plan_sync_groups(std::size_t n_workers, const DomainSet& domains, const ParamCounts& counts) {
  if (domains.empty()) throw ConfigError("domains", "at least one domain is required");
  if (n_workers == 0 || n_workers % domains.size() != 0) {
    throw ConfigError("workers", std::to_string(n_workers) + " workers cannot be split evenly over " +
                                     std::to_string(domains.size()) + " domains");
  }
  SyncPlan plan;
  plan.n_workers = n_workers;
  plan.domains = domains.names();
  plan.group_size = n_workers / domains.size();
  for (std::size_t g = 0; g < domains.size(); ++g) {
    std::vector<std::size_t> members;
    for (std::size_t k = 0; k < plan.group_size; ++k) members.push_back(g * plan.group_size + k);
    plan.groups.push_back(std::move(members));
  }
  plan.group_sync_params = counts.per_expert;
  plan.global_sync_params = counts.shared;
  plan.group_exchanges = plan.group_size - 1;
  return plan;
}

void to_json(nlohmann::json& j, const SyncPlan& plan) {
  j = nlohmann::json{{"n_workers", plan.n_workers},
                     {"domains", plan.domains},
                     {"groups", plan.groups},
                     {"group_size", plan.group_size},
                     {"group_sync_params", plan.group_sync_params},
                     {"global_sync_params", plan.global_sync_params},
                     {"group_exchanges", plan.group_exchanges}};
}

}  // namespace demix
