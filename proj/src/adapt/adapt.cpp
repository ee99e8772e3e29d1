#include "demix/adapt/adapt.hpp"

#include "demix/error.hpp"

#include <cmath>

namespace demix {

void AdaptConfig::validate() const {
  if (target.empty()) throw ConfigError("target", "must name the new domain");
  if (heldout_blocks == 0) throw ConfigError("heldout_blocks", "must be positive");
  if (!(base_lr > 0.0) || !(lr_divisor > 0.0) || !std::isfinite(lr())) throw ConfigError("lr", "must be positive");
  if (!(lambda > 0.0 && lambda <= 1.0)) throw ConfigError("lambda", "must lie in (0, 1]");
}

void to_json(nlohmann::json& j, const AdaptConfig& c) {
  j = nlohmann::json{{"target", c.target},   {"heldout_blocks", c.heldout_blocks}, {"base_lr", c.base_lr},
                     {"lr_divisor", c.lr_divisor}, {"lr", c.lr()},                 {"lambda", c.lambda},
                     {"train", c.train}};
}

void from_json(const nlohmann::json& j, AdaptConfig& c) {
  AdaptConfig d;
  try {
    d.target = j.value("target", d.target);
    d.heldout_blocks = j.value("heldout_blocks", d.heldout_blocks);
    d.base_lr = j.value("base_lr", d.base_lr);
    d.lr_divisor = j.value("lr_divisor", d.lr_divisor);
    d.lambda = j.value("lambda", d.lambda);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("adapt", "has a field of the wrong type");
  }
  if (j.contains("train")) d.train = j["train"].get<TrainConfig>();
  c = d;
}

FreezeMask expert_freeze_mask(const DemixModel& model, std::size_t expert) {
  FreezeMask mask;
  for (const auto& [name, _] : model.parameters()) {
    auto e = model.expert_of(name);
    if (e && *e == expert) mask.trainable.insert(name);
  }
  if (mask.trainable.empty()) throw DataError("expert " + std::to_string(expert) + " owns no parameters");
  return mask;
}

DomainLabel select_init_expert(const DemixModel& model, std::span<const SequenceBlock> heldout,
                               std::size_t cache_blocks, double lambda) {
  if (heldout.empty()) throw DataError("empty held-out data");
  if (model.config().variant != FfnVariant::demix) throw ConfigError("variant", "expert selection needs a demix model");
  const std::vector<DomainLabel> conds = eval_conditions(model);
  DomainPrior prior = cache_prior(model, heldout, cache_blocks, lambda);
  std::size_t best = 0;
  for (std::size_t j = 1; j < prior.size(); ++j) {
    if (prior.weights[j] > prior.weights[best]) best = j;
  }
  return conds[best];
}

DomainLabel add_expert(DemixModel& model, const std::string& domain, const DomainLabel& init_from) {
  if (model.domains().contains(domain)) throw ConfigError("target", "domain '" + domain + "' already exists");
  DomainLabel source = model.domains().label(init_from.name);
  const std::string parent = model.checkpoint_id();
  model.append_expert(domain, source.index);
  nlohmann::json entry{{"op", "add_expert"}, {"parent", parent}, {"domain", domain}, {"init_from", source.name}};
  if (!model.lineage().contains("history")) model.lineage()["history"] = nlohmann::json::array();
  model.lineage()["history"].push_back(entry);
  return model.domains().label(domain);
}

DaptResult dapt_run(DemixModel& model, const TrainData& target, const AdaptConfig& config) {
  config.validate();
  if (target.train.size() != 1) throw DataError("adaptation expects exactly one target domain");
  const DomainLabel label = model.domains().label(config.target);
  if (target.train[0].domain.name != config.target) throw DataError("target data does not match the target domain");
  const FreezeMask mask = expert_freeze_mask(model, label.index);

  const std::vector<SequenceBlock>& dev = target.dev.empty() ? target.train[0].blocks : target.dev[0].blocks;
  const std::size_t n_dev = config.train.eval_blocks ? std::min(config.train.eval_blocks, dev.size()) : dev.size();
  std::span<const SequenceBlock> dev_span(dev.data(), n_dev);

  DaptResult result;
  result.ppl_before = evaluate_perplexity(model, dev_span, EvalMode::naive(label)).perplexity;

  ParameterSet<float> frozen;
  for (const auto& [name, t] : model.parameters()) {
    if (!mask.allows(name)) frozen.add(name, t);
  }

  TrainConfig tc = config.train;
  tc.peak_lr = config.lr();
  tc.workers = 1;
  tc.batching = BatchMode::balanced;
  TrainData data{target.train, target.dev, {}};
  TrainOptions options;
  options.trainable = [&mask](const std::string& name) { return mask.allows(name); };
  result.log = train_run(model, data, tc, options);

  for (const auto& [name, before] : frozen) {
    if (!bitwise_equal(before, model.parameters().get(name))) throw Error("freeze mask violated by '" + name + "'");
  }
  result.ppl_after = evaluate_perplexity(model, dev_span, EvalMode::naive(label)).perplexity;

  nlohmann::json entry{{"op", "dapt"}, {"domain", config.target}, {"config", config}};
  if (!model.lineage().contains("history")) model.lineage()["history"] = nlohmann::json::array();
  model.lineage()["history"].push_back(entry);
  return result;
}

void remove_expert(DemixModel& model, const DomainLabel& domain) {
  DomainLabel l = model.domains().label(domain.name);
  if (!model.is_active(l.index)) throw DataError("expert disabled: '" + l.name + "'");
  if (model.active_experts().size() < 2) throw DataError("cannot remove the last active expert");
  model.set_active(l.index, false);
}

void restore_expert(DemixModel& model, const DomainLabel& domain) {
  model.set_active(model.domains().label(domain.name).index, true);
}

Corpus replace_domain(const Corpus& corpus, const std::string& excluded, const std::string& replacement) {
  if (excluded == replacement) throw ConfigError("replacement", "must differ from the excluded domain");
  const DomainSet& all = corpus.domains();
  if (!all.contains(excluded)) throw DataError("unknown domain '" + excluded + "'");
  if (!all.contains(replacement)) throw DataError("unknown domain '" + replacement + "'");
  std::vector<std::string> names;
  for (const auto& n : all.names()) {
    if (n == replacement) continue;
    names.push_back(n == excluded ? replacement : n);
  }
  return corpus.subset(names);
}

MinusDomainResult minus_domain_baseline(const Corpus& corpus, ModelConfig model_config, const TrainConfig& train,
                                        const std::string& excluded, const std::string& replacement,
                                        std::size_t shards, double dev_fraction, double test_fraction) {
  Corpus swapped = replace_domain(corpus, excluded, replacement);
  model_config.domains = swapped.domains().names();
  model_config.variant = FfnVariant::demix;
  model_config.vocab_size = 0;
  TrainData data = make_train_data(swapped, model_config.block_length, shards, dev_fraction, test_fraction);
  DemixModel model = DemixModel::init(model_config);
  TrainLog log = train_run(model, data, train);
  model.lineage()["minus_domain"] = {{"excluded", excluded}, {"replacement", replacement}};
  return MinusDomainResult{std::move(model), std::move(log)};
}

}  // namespace demix
