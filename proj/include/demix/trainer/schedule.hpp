#pragma once

#include "demix/model/config.hpp"

#include <cstdint>
#include <json.hpp>
#include <string>

namespace demix {

/// automatic = balanced for demix and domain_token, proportional for dense.
enum class BatchMode { automatic, balanced, proportional };

std::string to_string(BatchMode m);
BatchMode parse_batch_mode(const std::string& name);

struct TrainConfig {
  std::size_t total_steps = 200;
  double warmup_fraction = 0.08;
  double peak_lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;
  double clip_norm = 0.1;
  std::size_t batch_per_worker = 2;
  std::size_t grad_accum = 8;
  /// 0 means one worker per domain.
  std::size_t workers = 0;
  BatchMode batching = BatchMode::automatic;
  std::uint64_t seed = 0;
  /// Validation every `eval_interval` steps on at most `eval_blocks` dev
  /// blocks per domain; 0 disables.
  std::size_t eval_interval = 0;
  std::size_t eval_blocks = 32;
  /// Early stopping after this many evaluations without improvement; 0 disables.
  std::size_t patience = 0;
  std::size_t checkpoint_interval = 0;
  std::string checkpoint_dir;

  std::size_t effective_workers(std::size_t n_domains) const { return workers ? workers : n_domains; }
  void validate(FfnVariant variant, std::size_t n_domains) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

std::size_t warmup_steps(const TrainConfig& config);

/// Linear warmup 0 -> peak over warmup_steps, then linear decay to 0 at
/// total_steps. Throws for step > total_steps.
double lr_schedule(std::size_t step, const TrainConfig& config);

}  // namespace demix
