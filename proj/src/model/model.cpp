#include "demix/model/model.hpp"

#include "demix/error.hpp"
#include "demix/model/transformer.hpp"
#include "demix/numerics/hash.hpp"
#include "demix/numerics/softmax.hpp"

#include <cmath>

namespace demix {

namespace {

constexpr const char* kFormatName = "demix-model";

struct ParamSpec {
  std::string name;
  Shape shape;
  InitSpec init;
};

std::vector<ParamSpec> expert_specs(const ModelConfig& c, std::size_t layer, std::size_t expert) {
  const double out_std = c.init_std / std::sqrt(2.0 * static_cast<double>(c.n_layers));
  return {
      {expert_param_name(layer, expert, "w1"), {c.d_model, c.d_ff}, {InitScheme::normal, c.init_std}},
      {expert_param_name(layer, expert, "b1"), {c.d_ff}, {InitScheme::zeros}},
      {expert_param_name(layer, expert, "w2"), {c.d_ff, c.d_model}, {InitScheme::normal, out_std}},
      {expert_param_name(layer, expert, "b2"), {c.d_model}, {InitScheme::zeros}},
  };
}

/// Every parameter of the model in canonical order.
std::vector<ParamSpec> param_specs(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  const double out_std = c.init_std / std::sqrt(2.0 * static_cast<double>(c.n_layers));
  std::vector<ParamSpec> specs{
      {"wte", {c.effective_vocab_size(), d}, {InitScheme::normal, c.init_std}},
      {"wpe", {c.block_length, d}, {InitScheme::normal, c.init_std}},
  };
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    specs.push_back({p + "ln1.g", {d}, {InitScheme::ones}});
    specs.push_back({p + "ln1.b", {d}, {InitScheme::zeros}});
    specs.push_back({p + "attn.wqkv", {d, 3 * d}, {InitScheme::normal, c.init_std}});
    specs.push_back({p + "attn.bqkv", {3 * d}, {InitScheme::zeros}});
    specs.push_back({p + "attn.wo", {d, d}, {InitScheme::normal, out_std}});
    specs.push_back({p + "attn.bo", {d}, {InitScheme::zeros}});
    specs.push_back({p + "ln2.g", {d}, {InitScheme::ones}});
    specs.push_back({p + "ln2.b", {d}, {InitScheme::zeros}});
    const std::size_t bank = c.is_expert_layer(l) ? c.n_experts() : 1;
    for (std::size_t j = 0; j < bank; ++j) {
      for (auto& s : expert_specs(c, l, j)) specs.push_back(std::move(s));
    }
  }
  specs.push_back({"ln_f.g", {d}, {InitScheme::ones}});
  specs.push_back({"ln_f.b", {d}, {InitScheme::zeros}});
  return specs;
}

std::size_t expert_size(const ModelConfig& c) {
  return c.d_model * c.d_ff + c.d_ff + c.d_ff * c.d_model + c.d_model;
}

}  // namespace

std::string expert_param_name(std::size_t layer, std::size_t expert, const std::string& leaf) {
  return "layer" + std::to_string(layer) + ".expert" + std::to_string(expert) + "." + leaf;
}

ParamCounts count_params(const ModelConfig& config) {
  config.validate();
  ParamCounts counts;
  counts.per_expert = 0;
  std::size_t expert_layers = 0;
  for (std::size_t l = 0; l < config.n_layers; ++l) expert_layers += config.is_expert_layer(l) ? 1 : 0;
  // Dense and interleaved shared FFNs count as shared parameters.
  const bool has_experts = expert_layers > 0;
  counts.per_expert = has_experts ? expert_layers * expert_size(config) : (config.n_layers * expert_size(config));
  std::size_t all = 0;
  for (const auto& s : param_specs(config)) all += shape_size(s.shape);
  const std::size_t n = has_experts ? config.n_experts() : 1;
  counts.shared = all - n * counts.per_expert;
  counts.total = all;
  return counts;
}

DemixModel DemixModel::init(ModelConfig config) {
  config.validate();
  config.vocab_size = config.effective_vocab_size();
  DemixModel m;
  m.config_ = std::move(config);
  for (const auto& s : param_specs(m.config_)) {
    RngStream stream(m.config_.seed, "init/" + s.name);
    m.params_.add(s.name, param_init<float>(s.shape, s.init, stream));
  }
  m.active_.assign(m.n_experts(), true);
  return m;
}

std::vector<std::size_t> DemixModel::active_experts() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < active_.size(); ++j) {
    if (active_[j]) out.push_back(j);
  }
  return out;
}

void DemixModel::set_active(std::size_t expert, bool active) {
  if (expert >= active_.size()) throw std::out_of_range("expert index out of range");
  active_[expert] = active;
}

std::optional<std::size_t> DemixModel::expert_of(const std::string& name) const {
  if (name.rfind("layer", 0) != 0) return std::nullopt;
  std::size_t dot = name.find('.');
  if (dot == std::string::npos || name.compare(dot + 1, 6, "expert") != 0) return std::nullopt;
  std::size_t layer = std::stoul(name.substr(5, dot - 5));
  if (!config_.is_expert_layer(layer)) return std::nullopt;
  std::size_t start = dot + 7;
  std::size_t end = name.find('.', start);
  return std::stoul(name.substr(start, end - start));
}

void DemixModel::append_expert(const std::string& domain, std::size_t source) {
  if (config_.variant != FfnVariant::demix) throw ConfigError("variant", "experts can only be added to a demix model");
  if (source >= n_experts()) throw std::out_of_range("source expert index out of range");
  DomainSet set(config_.domains);
  set.append(domain);
  const std::size_t fresh = n_experts();
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    if (!config_.is_expert_layer(l)) continue;
    for (const char* leaf : {"w1", "b1", "w2", "b2"}) {
      Tensor<float> copy = params_.get(expert_param_name(l, source, leaf));
      params_.add(expert_param_name(l, fresh, leaf), std::move(copy));
    }
  }
  config_.domains = set.names();
  active_.push_back(true);
}

ParamCounts DemixModel::active_param_counts() const {
  ParamCounts full = count_params(config_);
  if (config_.variant != FfnVariant::demix) return full;
  ParamCounts c = full;
  c.total = full.shared + active_experts().size() * full.per_expert;
  return c;
}

nlohmann::json DemixModel::header() const {
  nlohmann::json h;
  h["format"] = kFormatName;
  h["config"] = config_;
  h["active"] = active_;
  h["lineage"] = lineage_;
  return h;
}

std::string DemixModel::serialize() const { return serialize_checkpoint(header(), params_); }

void DemixModel::save(const std::filesystem::path& path) const { write_checkpoint(path, header(), params_); }

std::string DemixModel::checkpoint_id() const { return hex64(fnv1a64(serialize())); }

DemixModel DemixModel::from_checkpoint(const Checkpoint& ck) {
  const nlohmann::json& h = ck.header;
  if (!h.is_object() || h.value("format", "") != kFormatName) throw DataError("checkpoint is not a demix model");
  DemixModel m;
  try {
    m.config_ = h.at("config").get<ModelConfig>();
    m.active_ = h.at("active").get<std::vector<bool>>();
    m.lineage_ = h.value("lineage", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint header: ") + e.what());
  }
  m.config_.validate();
  if (m.active_.size() != m.n_experts()) throw DataError("checkpoint active flags do not match the expert count");
  std::vector<ParamSpec> specs = param_specs(m.config_);
  if (specs.size() != ck.parameters.size()) {
    throw DataError("checkpoint holds " + std::to_string(ck.parameters.size()) + " parameters, config expects " +
                    std::to_string(specs.size()));
  }
  for (const auto& s : specs) {
    const TensorF* t = ck.parameters.find(s.name);
    if (!t) throw DataError("checkpoint is missing parameter '" + s.name + "'");
    if (t->shape() != s.shape) {
      throw DataError("parameter '" + s.name + "' has shape " + shape_string(t->shape()) + ", expected " +
                      shape_string(s.shape));
    }
  }
  m.params_ = ck.parameters;
  return m;
}

DemixModel DemixModel::load(const std::filesystem::path& path) { return from_checkpoint(read_checkpoint(path)); }

TensorF forward(const DemixModel& model, const SequenceBlock& block, const RoutingWeights& routing) {
  const SequenceBlock* one[] = {&block};
  return forward(model, std::span<const SequenceBlock* const>(one), routing);
}

TensorF forward(const DemixModel& model, std::span<const SequenceBlock* const> blocks, const RoutingWeights& routing) {
  if (blocks.empty()) throw std::invalid_argument("forward needs at least one block");
  const std::size_t L = model.config().block_length;
  std::vector<int> tokens;
  tokens.reserve(blocks.size() * L);
  for (const SequenceBlock* b : blocks) {
    if (b->length() != L) {
      throw std::invalid_argument("block length " + std::to_string(b->length()) + " != model block length " +
                                  std::to_string(L));
    }
    tokens.insert(tokens.end(), b->tokens.begin(), b->tokens.end());
  }
  Tape<float> tape(false);
  Var logits = transformer_logits(tape, model.parameters(), model.config(), std::span<const int>(tokens), L, routing);
  const TensorF& out = tape.value(logits);
  if (!all_finite(out)) throw std::runtime_error("non-finite logits");
  return out;
}

TensorF demix_ffn(const DemixModel& model, std::size_t layer, const TensorF& hidden, const RoutingWeights& routing) {
  const ModelConfig& c = model.config();
  if (layer >= c.n_layers) throw std::out_of_range("layer index out of range");
  if (hidden.cols() != c.d_model) {
    throw std::invalid_argument("hidden width " + std::to_string(hidden.cols()) + " != d_model " +
                                std::to_string(c.d_model));
  }
  Tape<float> tape(false);
  Var h = tape.constant(hidden);
  Var out = ffn_layer(tape, model.parameters(), c, layer, h, routing);
  return tape.value(out);
}

SequenceBlock prepend_domain_token(const DemixModel& model, const SequenceBlock& block, const DomainLabel& domain) {
  if (model.config().variant != FfnVariant::domain_token) {
    throw ConfigError("variant", "domain tokens require the domain_token variant");
  }
  DomainSet domains = model.domains();
  if (domain.index >= domains.size() || domains.name(domain.index) != domain.name) {
    throw DataError("unknown domain '" + domain.name + "'");
  }
  if (block.tokens.empty()) throw std::invalid_argument("empty block");
  SequenceBlock out = block;
  out.tokens.insert(out.tokens.begin(), model.vocabulary().domain_token(domain.index));
  out.tokens.pop_back();
  out.score_from = block.score_from + 1;
  return out;
}

}  // namespace demix
