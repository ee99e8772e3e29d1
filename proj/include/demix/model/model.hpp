#pragma once

#include "demix/corpus/blocks.hpp"
#include "demix/corpus/domain.hpp"
#include "demix/corpus/vocabulary.hpp"
#include "demix/model/config.hpp"
#include "demix/model/routing.hpp"
#include "demix/numerics/checkpoint.hpp"
#include "demix/numerics/parameters.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>

namespace demix {

std::string expert_param_name(std::size_t layer, std::size_t expert, const std::string& leaf);

struct ParamCounts {
  std::size_t shared = 0;
  std::size_t per_expert = 0;
  std::size_t total = 0;
};

/// Counts from shapes alone; total = shared + n_experts * per_expert.
ParamCounts count_params(const ModelConfig& config);

/// Shared transformer parameters plus per-layer expert banks. Removal only
/// toggles an expert's active flag; its parameters stay in the set.
class DemixModel {
 public:
  static DemixModel init(ModelConfig config);
  static DemixModel from_checkpoint(const Checkpoint& ck);
  static DemixModel load(const std::filesystem::path& path);

  const ModelConfig& config() const { return config_; }
  DomainSet domains() const { return DomainSet(config_.domains); }
  Vocabulary vocabulary() const { return Vocabulary{config_.domains.size()}; }
  std::size_t vocab_size() const { return config_.effective_vocab_size(); }

  const ParameterSet<float>& parameters() const { return params_; }
  ParameterSet<float>& parameters() { return params_; }

  std::size_t n_experts() const { return config_.n_experts(); }
  bool is_active(std::size_t expert) const { return active_.at(expert); }
  std::vector<std::size_t> active_experts() const;
  void set_active(std::size_t expert, bool active);

  /// Expert index owning `name`, or nullopt for shared parameters (including
  /// the single FFN of dense or interleaved shared layers).
  std::optional<std::size_t> expert_of(const std::string& name) const;

  /// Appends an expert to every expert layer as a copy of `source` and
  /// extends the domain list. Existing parameters are untouched.
  void append_expert(const std::string& domain, std::size_t source);

  /// Parameter counts of the active model (inactive experts excluded).
  ParamCounts active_param_counts() const;

  nlohmann::json& lineage() { return lineage_; }
  const nlohmann::json& lineage() const { return lineage_; }

  nlohmann::json header() const;
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
  /// Hex FNV-1a of the serialized checkpoint bytes.
  std::string checkpoint_id() const;

 private:
  DemixModel() = default;

  ModelConfig config_;
  ParameterSet<float> params_;
  std::vector<bool> active_;
  nlohmann::json lineage_ = nlohmann::json::object();
};

/// Logits (L x V) of one block.
TensorF forward(const DemixModel& model, const SequenceBlock& block, const RoutingWeights& routing);
/// Logits ((B * L) x V) of blocks sharing one routing decision.
TensorF forward(const DemixModel& model, std::span<const SequenceBlock* const> blocks, const RoutingWeights& routing);

/// Output of one FFN position for hidden states h (T x d_model).
TensorF demix_ffn(const DemixModel& model, std::size_t layer, const TensorF& hidden, const RoutingWeights& routing);

/// Inserts the domain token at position 0 and drops the last token; neither
/// the domain token nor the original first position is scored.
SequenceBlock prepend_domain_token(const DemixModel& model, const SequenceBlock& block, const DomainLabel& domain);

}  // namespace demix
