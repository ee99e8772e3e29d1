#include "demix/model/config.hpp"

#include "demix/error.hpp"

#include <set>

namespace demix {

std::string to_string(FfnVariant v) {
  switch (v) {
    case FfnVariant::dense:
      return "dense";
    case FfnVariant::demix:
      return "demix";
    case FfnVariant::domain_token:
      return "domain_token";
  }
  return "unknown";
}

FfnVariant parse_ffn_variant(const std::string& name) {
  if (name == "dense") return FfnVariant::dense;
  if (name == "demix") return FfnVariant::demix;
  if (name == "domain_token" || name == "domain-token") return FfnVariant::domain_token;
  throw ConfigError("variant", "unknown FFN variant '" + name + "'");
}

void ModelConfig::validate() const {
  if (n_layers == 0) throw ConfigError("n_layers", "must be positive");
  if (n_heads == 0) throw ConfigError("n_heads", "must be positive");
  if (d_model == 0 || d_model % n_heads != 0) throw ConfigError("d_model", "must be a positive multiple of n_heads");
  if (d_ff == 0) throw ConfigError("d_ff", "must be positive");
  if (block_length < 2) throw ConfigError("block_length", "must be at least 2");
  if (domains.empty()) throw ConfigError("domains", "at least one domain is required");
  std::set<std::string> unique(domains.begin(), domains.end());
  if (unique.size() != domains.size()) throw ConfigError("domains", "domain names must be unique");
  if (vocab_size != 0 && vocab_size < 258) throw ConfigError("vocab_size", "must cover bytes, BOS and PAD");
  if (variant == FfnVariant::domain_token && effective_vocab_size() < 258 + domains.size()) {
    throw ConfigError("vocab_size", "domain_token variant needs one token per domain");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout", "must lie in [0, 1)");
  if (!(init_std > 0.0)) throw ConfigError("init_std", "must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},   {"n_heads", c.n_heads},
                     {"d_model", c.d_model},     {"d_ff", c.d_ff},
                     {"block_length", c.block_length}, {"vocab_size", c.effective_vocab_size()},
                     {"variant", to_string(c.variant)}, {"domains", c.domains},
                     {"dropout", c.dropout},     {"init_std", c.init_std},
                     {"interleave", c.interleave}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  auto get = [&j](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(key, "has the wrong type");
    }
  };
  get("n_layers", d.n_layers);
  get("n_heads", d.n_heads);
  get("d_model", d.d_model);
  get("d_ff", d.d_ff);
  get("block_length", d.block_length);
  get("vocab_size", d.vocab_size);
  if (j.contains("variant")) {
    if (!j["variant"].is_string()) throw ConfigError("variant", "has the wrong type");
    d.variant = parse_ffn_variant(j["variant"].get<std::string>());
  }
  get("domains", d.domains);
  get("dropout", d.dropout);
  get("init_std", d.init_std);
  get("interleave", d.interleave);
  get("seed", d.seed);
  c = d;
}

}  // namespace demix
