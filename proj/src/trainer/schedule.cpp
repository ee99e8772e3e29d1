#include "demix/trainer/schedule.hpp"

#include "demix/error.hpp"

#include <algorithm>
#include <cmath>

namespace demix {

std::string to_string(BatchMode m) {
  switch (m) {
    case BatchMode::automatic:
      return "auto";
    case BatchMode::balanced:
      return "balanced";
    case BatchMode::proportional:
      return "proportional";
  }
  return "unknown";
}

BatchMode parse_batch_mode(const std::string& name) {
  if (name == "auto") return BatchMode::automatic;
  if (name == "balanced") return BatchMode::balanced;
  if (name == "proportional") return BatchMode::proportional;
  throw ConfigError("batching", "unknown batching mode '" + name + "'");
}

void TrainConfig::validate(FfnVariant variant, std::size_t n_domains) const {
  if (total_steps == 0) throw ConfigError("total_steps", "must be positive");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction", "must lie in (0, 1)");
  if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) throw ConfigError("peak_lr", "must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2", "must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps", "must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be non-negative");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm", "must be positive");
  if (batch_per_worker == 0) throw ConfigError("batch_per_worker", "must be positive");
  if (grad_accum == 0) throw ConfigError("grad_accum", "must be positive");
  if (n_domains == 0) throw ConfigError("domains", "at least one domain is required");
  const std::size_t w = effective_workers(n_domains);
  const bool balanced = batching == BatchMode::balanced ||
                        (batching == BatchMode::automatic && variant != FfnVariant::dense);
  if (variant == FfnVariant::demix && !balanced) {
    throw ConfigError("batching", "demix training requires balanced per-domain batches");
  }
  if (balanced && w % n_domains != 0) {
    throw ConfigError("workers", std::to_string(w) + " workers cannot be split evenly over " +
                                     std::to_string(n_domains) + " domains");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"total_steps", c.total_steps},
                     {"warmup_fraction", c.warmup_fraction},
                     {"peak_lr", c.peak_lr},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps},
                     {"weight_decay", c.weight_decay},
                     {"clip_norm", c.clip_norm},
                     {"batch_per_worker", c.batch_per_worker},
                     {"grad_accum", c.grad_accum},
                     {"workers", c.workers},
                     {"batching", to_string(c.batching)},
                     {"seed", c.seed},
                     {"eval_interval", c.eval_interval},
                     {"eval_blocks", c.eval_blocks},
                     {"patience", c.patience},
                     {"checkpoint_interval", c.checkpoint_interval},
                     {"checkpoint_dir", c.checkpoint_dir}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  auto get = [&j](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(key, "has the wrong type");
    }
  };
  get("total_steps", d.total_steps);
  get("warmup_fraction", d.warmup_fraction);
  get("peak_lr", d.peak_lr);
  get("beta1", d.beta1);
  get("beta2", d.beta2);
  get("adam_eps", d.adam_eps);
  get("weight_decay", d.weight_decay);
  get("clip_norm", d.clip_norm);
  get("batch_per_worker", d.batch_per_worker);
  get("grad_accum", d.grad_accum);
  get("workers", d.workers);
  if (j.contains("batching")) {
    if (!j["batching"].is_string()) throw ConfigError("batching", "has the wrong type");
    d.batching = parse_batch_mode(j["batching"].get<std::string>());
  }
  get("seed", d.seed);
  get("eval_interval", d.eval_interval);
  get("eval_blocks", d.eval_blocks);
  get("patience", d.patience);
  get("checkpoint_interval", d.checkpoint_interval);
  get("checkpoint_dir", d.checkpoint_dir);
  c = d;
}

std::size_t warmup_steps(const TrainConfig& config) {
  auto w = static_cast<std::size_t>(std::llround(config.warmup_fraction * static_cast<double>(config.total_steps)));
  return std::clamp<std::size_t>(w, 1, std::max<std::size_t>(config.total_steps - 1, 1));
}

double lr_schedule(std::size_t step, const TrainConfig& config) {
  const std::size_t total = config.total_steps;
  if (step > total) throw std::out_of_range("step " + std::to_string(step) + " beyond total " + std::to_string(total));
  const std::size_t warm = warmup_steps(config);
  if (step <= warm) return config.peak_lr * static_cast<double>(step) / static_cast<double>(warm);
  if (warm == total) return 0.0;
  return config.peak_lr * static_cast<double>(total - step) / static_cast<double>(total - warm);
}

}  // namespace demix
