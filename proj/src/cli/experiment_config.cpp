#include "demix/cli/experiment_config.hpp"

#include "demix/error.hpp"
#include "demix/numerics/checkpoint.hpp"
#include "demix/numerics/hash.hpp"

#include <set>

namespace demix {

namespace {

void reject_unknown(const nlohmann::json& j, const std::string& section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(section, "must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError(section.empty() ? key : section + "." + key, "unknown key");
  }
}

template <typename F>
void read(const nlohmann::json& j, const std::string& section, const char* key, F& field) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(field);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(section + "." + key, "has the wrong type");
  }
}

}  // namespace

void to_json(nlohmann::json& j, const SynthSpec& s) {
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& d : s.domains) {
    nlohmann::json e{{"name", d.name},
                     {"alphabet_size", d.alphabet_size},
                     {"concentration", d.concentration},
                     {"tokens", d.tokens},
                     {"mean_doc_length", d.mean_doc_length},
                     {"table_key", d.table_key}};
    e["alphabet_offset"] = d.alphabet_offset ? nlohmann::json(*d.alphabet_offset) : nlohmann::json(nullptr);
    domains.push_back(e);
  }
  j = nlohmann::json{{"overlap", s.overlap}, {"domains", domains}, {"symbol_pool", s.symbol_pool}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  reject_unknown(j, "synth", {"overlap", "domains", "symbol_pool"});
  SynthSpec out;
  read(j, "synth", "overlap", out.overlap);
  read(j, "synth", "symbol_pool", out.symbol_pool);
  if (j.contains("domains")) {
    if (!j["domains"].is_array()) throw ConfigError("synth.domains", "must be a list");
    for (const auto& e : j["domains"]) {
      reject_unknown(e, "synth.domains",
                     {"name", "alphabet_size", "concentration", "tokens", "mean_doc_length", "table_key",
                      "alphabet_offset"});
      SynthDomainSpec d;
      read(e, "synth.domains", "name", d.name);
      read(e, "synth.domains", "alphabet_size", d.alphabet_size);
      read(e, "synth.domains", "concentration", d.concentration);
      read(e, "synth.domains", "tokens", d.tokens);
      read(e, "synth.domains", "mean_doc_length", d.mean_doc_length);
      read(e, "synth.domains", "table_key", d.table_key);
      if (e.contains("alphabet_offset") && !e["alphabet_offset"].is_null()) {
        std::size_t off = 0;
        read(e, "synth.domains", "alphabet_offset", off);
        d.alphabet_offset = off;
      }
      out.domains.push_back(std::move(d));
    }
  }
  s = std::move(out);
}

void ExperimentConfig::resolve() {
  model.seed = seed;
  train.seed = seed;
  if (!model.domains.empty()) {
    model.validate();
    train.validate(model.variant, model.domains.size());
  }
  if (data.shards == 0) throw ConfigError("data.shards", "must be positive");
  if (!(data.dev_fraction >= 0.0 && data.test_fraction >= 0.0 && data.dev_fraction + data.test_fraction < 1.0)) {
    throw ConfigError("data.dev_fraction", "dev and test fractions must be non-negative and sum below 1");
  }
  parse_corpus_format(data.format);
  if (!(prior.lambda > 0.0 && prior.lambda <= 1.0)) throw ConfigError("prior.lambda", "must lie in (0, 1]");
  if (prior.cache_blocks == 0) throw ConfigError("prior.cache_blocks", "must be positive");
  if (eval.mode != "all") parse_eval_kind(eval.mode);
  if (eval.split != "dev" && eval.split != "test") throw ConfigError("eval.split", "must be dev or test");
  if (eval.posterior_blocks == 0) throw ConfigError("eval.posterior_blocks", "must be positive");
  if (!(adapt.lr_divisor > 0.0)) throw ConfigError("adapt.lr_divisor", "must be positive");
  if (adapt.steps == 0) throw ConfigError("adapt.steps", "must be positive");
  if (!(synth.overlap >= 0.0 && synth.overlap <= 1.0)) throw ConfigError("synth.overlap", "must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json::object();
  j["seed"] = c.seed;
  j["model"] = c.model;
  j["train"] = c.train;
  j["data"] = {{"corpus", c.data.corpus},
               {"format", c.data.format},
               {"shards", c.data.shards},
               {"dev_fraction", c.data.dev_fraction},
               {"test_fraction", c.data.test_fraction},
               {"anonymize", c.data.anonymize}};
  j["prior"] = {{"strategy", to_string(c.prior.strategy)},
                {"lambda", c.prior.lambda},
                {"cache_blocks", c.prior.cache_blocks},
                {"level", to_string(c.prior.level)}};
  j["eval"] = {{"mode", c.eval.mode},
               {"domain", c.eval.domain},
               {"max_blocks", c.eval.max_blocks},
               {"split", c.eval.split},
               {"posterior_blocks", c.eval.posterior_blocks}};
  j["adapt"] = {{"target", c.adapt.target},
                {"init_from", c.adapt.init_from},
                {"heldout_blocks", c.adapt.heldout_blocks},
                {"lr_divisor", c.adapt.lr_divisor},
                {"steps", c.adapt.steps},
                {"patience", c.adapt.patience},
                {"eval_interval", c.adapt.eval_interval}};
  j["synth"] = c.synth;
  j["paths"] = {{"checkpoint", c.paths.checkpoint}, {"out", c.paths.out}, {"reports", c.paths.reports}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  reject_unknown(j, "", {"seed", "model", "train", "data", "prior", "eval", "adapt", "synth", "paths"});
  ExperimentConfig out;
  read(j, "", "seed", out.seed);
  if (j.contains("model")) {
    reject_unknown(j["model"], "model",
                   {"n_layers", "n_heads", "d_model", "d_ff", "block_length", "vocab_size", "variant", "domains",
                    "dropout", "init_std", "interleave", "seed"});
    out.model = j["model"].get<ModelConfig>();
  }
  if (j.contains("train")) {
    reject_unknown(j["train"], "train",
                   {"total_steps", "warmup_fraction", "peak_lr", "beta1", "beta2", "adam_eps", "weight_decay",
                    "clip_norm", "batch_per_worker", "grad_accum", "workers", "batching", "seed", "eval_interval",
                    "eval_blocks", "patience", "checkpoint_interval", "checkpoint_dir"});
    out.train = j["train"].get<TrainConfig>();
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    reject_unknown(d, "data", {"corpus", "format", "shards", "dev_fraction", "test_fraction", "anonymize"});
    read(d, "data", "corpus", out.data.corpus);
    read(d, "data", "format", out.data.format);
    read(d, "data", "shards", out.data.shards);
    read(d, "data", "dev_fraction", out.data.dev_fraction);
    read(d, "data", "test_fraction", out.data.test_fraction);
    read(d, "data", "anonymize", out.data.anonymize);
  }
  if (j.contains("prior")) {
    const auto& p = j["prior"];
    reject_unknown(p, "prior", {"strategy", "lambda", "cache_blocks", "level"});
    std::string strategy = to_string(out.prior.strategy), level = to_string(out.prior.level);
    read(p, "prior", "strategy", strategy);
    read(p, "prior", "lambda", out.prior.lambda);
    read(p, "prior", "cache_blocks", out.prior.cache_blocks);
    read(p, "prior", "level", level);
    out.prior.strategy = parse_prior_strategy(strategy);
    out.prior.level = parse_mixture_level(level);
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    reject_unknown(e, "eval", {"mode", "domain", "max_blocks", "split", "posterior_blocks"});
    read(e, "eval", "mode", out.eval.mode);
    read(e, "eval", "domain", out.eval.domain);
    read(e, "eval", "max_blocks", out.eval.max_blocks);
    read(e, "eval", "split", out.eval.split);
    read(e, "eval", "posterior_blocks", out.eval.posterior_blocks);
  }
  if (j.contains("adapt")) {
    const auto& a = j["adapt"];
    reject_unknown(a, "adapt", {"target", "init_from", "heldout_blocks", "lr_divisor", "steps", "patience",
                                "eval_interval"});
    read(a, "adapt", "target", out.adapt.target);
    read(a, "adapt", "init_from", out.adapt.init_from);
    read(a, "adapt", "heldout_blocks", out.adapt.heldout_blocks);
    read(a, "adapt", "lr_divisor", out.adapt.lr_divisor);
    read(a, "adapt", "steps", out.adapt.steps);
    read(a, "adapt", "patience", out.adapt.patience);
    read(a, "adapt", "eval_interval", out.adapt.eval_interval);
  }
  if (j.contains("synth")) out.synth = j["synth"].get<SynthSpec>();
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    reject_unknown(p, "paths", {"checkpoint", "out", "reports"});
    read(p, "paths", "checkpoint", out.paths.checkpoint);
    read(p, "paths", "out", out.paths.out);
    read(p, "paths", "reports", out.paths.reports);
  }
  c = std::move(out);
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("config", "cannot read '" + path + "'");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config", std::string("invalid JSON: ") + e.what());
  }
  return j.get<ExperimentConfig>();
}

std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j = c;
  j["paths"].erase("out");
  j["paths"].erase("reports");
  return hex64(fnv1a64(j.dump()));
}

}  // namespace demix
