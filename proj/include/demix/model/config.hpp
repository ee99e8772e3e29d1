#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

namespace demix {

enum class FfnVariant { dense, demix, domain_token };

std::string to_string(FfnVariant v);
FfnVariant parse_ffn_variant(const std::string& name);

/// Decoder-only transformer shape plus the ordered domain list that indexes
/// experts (demix) or domain tokens (domain_token).
struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;
  std::size_t block_length = 128;
  /// 0 means 258 + |domains|.
  std::size_t vocab_size = 0;
  FfnVariant variant = FfnVariant::demix;
  std::vector<std::string> domains;
  double dropout = 0.0;
  double init_std = 0.02;
  /// When set, only odd layers carry an expert bank; even layers keep one
  /// shared FFN.
  bool interleave = false;
  std::uint64_t seed = 0;

  std::size_t n_experts() const { return variant == FfnVariant::demix ? domains.size() : 1; }
  std::size_t effective_vocab_size() const { return vocab_size ? vocab_size : 258 + domains.size(); }
  bool is_expert_layer(std::size_t layer) const {
    return variant == FfnVariant::demix && (!interleave || layer % 2 == 1);
  }

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace demix
