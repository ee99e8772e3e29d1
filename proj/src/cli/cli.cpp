#include "demix/cli/cli.hpp"

#include "demix/adapt/adapt.hpp"
#include "demix/cli/experiment_config.hpp"
#include "demix/cli/report.hpp"
#include "demix/corpus/anonymize.hpp"
#include "demix/corpus/overlap.hpp"
#include "demix/error.hpp"
#include "demix/inference/diagnostics.hpp"
#include "demix/trainer/flops.hpp"
#include "demix/trainer/trainer.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <memory>

namespace demix {

namespace {

using Override = std::function<void(ExperimentConfig&)>;

/// Flags that are not part of ExperimentConfig.
struct Extras {
  std::string config_path;
  std::size_t n_workers = 32;
  std::size_t n_domains = 4;
  std::size_t synth_tokens = 100000;
  std::size_t synth_alphabet = 20;
  double synth_concentration = 0.3;
  std::size_t synth_doc_length = 400;
  std::vector<double> lrs;
  std::string remove_domain;
  std::string restore_domain;
  std::string plan_domains;
};

template <typename T, typename F>
void add_override(CLI::App* app, std::vector<Override>& ov, const std::string& name, const std::string& help, F apply) {
  auto value = std::make_shared<T>();
  CLI::Option* opt = app->add_option(name, *value, help);
  ov.push_back([opt, value, apply](ExperimentConfig& c) {
    if (opt->count()) apply(c, *value);
  });
}

void add_common(CLI::App* app, std::vector<Override>& ov, Extras& ex) {
  app->add_option("--config", ex.config_path, "experiment config (JSON)");
  add_override<std::uint64_t>(app, ov, "--seed", "random seed", [](auto& c, auto v) { c.seed = v; });
  add_override<std::string>(app, ov, "--report-dir", "report directory", [](auto& c, auto v) { c.paths.reports = v; });
}

void add_data(CLI::App* app, std::vector<Override>& ov) {
  add_override<std::string>(app, ov, "--corpus", "corpus path", [](auto& c, auto v) { c.data.corpus = v; });
  add_override<std::string>(app, ov, "--format", "corpus format: jsonl | dirs", [](auto& c, auto v) { c.data.format = v; });
  add_override<std::size_t>(app, ov, "--shards", "shards per domain", [](auto& c, auto v) { c.data.shards = v; });
  add_override<double>(app, ov, "--dev-fraction", "dev split fraction", [](auto& c, auto v) { c.data.dev_fraction = v; });
  add_override<double>(app, ov, "--test-fraction", "test split fraction",
                       [](auto& c, auto v) { c.data.test_fraction = v; });
  add_override<bool>(app, ov, "--anonymize", "apply the default anonymization rules",
                     [](auto& c, auto v) { c.data.anonymize = v; });
}

void add_checkpoint(CLI::App* app, std::vector<Override>& ov, bool out) {
  add_override<std::string>(app, ov, "--checkpoint", "input checkpoint", [](auto& c, auto v) { c.paths.checkpoint = v; });
  if (out) add_override<std::string>(app, ov, "--out", "output path", [](auto& c, auto v) { c.paths.out = v; });
}

void add_model(CLI::App* app, std::vector<Override>& ov) {
  add_override<std::string>(app, ov, "--variant", "dense | demix | domain_token",
                            [](auto& c, auto v) { c.model.variant = parse_ffn_variant(v); });
  add_override<std::size_t>(app, ov, "--layers", "transformer layers", [](auto& c, auto v) { c.model.n_layers = v; });
  add_override<std::size_t>(app, ov, "--heads", "attention heads", [](auto& c, auto v) { c.model.n_heads = v; });
  add_override<std::size_t>(app, ov, "--d-model", "model width", [](auto& c, auto v) { c.model.d_model = v; });
  add_override<std::size_t>(app, ov, "--d-ff", "FFN width", [](auto& c, auto v) { c.model.d_ff = v; });
  add_override<std::size_t>(app, ov, "--block-length", "tokens per block",
                            [](auto& c, auto v) { c.model.block_length = v; });
  add_override<double>(app, ov, "--dropout", "dropout rate", [](auto& c, auto v) { c.model.dropout = v; });
  add_override<bool>(app, ov, "--interleave", "expert banks on odd layers only",
                     [](auto& c, auto v) { c.model.interleave = v; });
  add_override<std::vector<std::string>>(app, ov, "--domains", "training domains (default: all)",
                                         [](auto& c, auto v) { c.model.domains = v; });
}

void add_train(CLI::App* app, std::vector<Override>& ov) {
  add_override<std::size_t>(app, ov, "--steps", "optimizer steps", [](auto& c, auto v) { c.train.total_steps = v; });
  add_override<double>(app, ov, "--lr", "peak learning rate", [](auto& c, auto v) { c.train.peak_lr = v; });
  add_override<double>(app, ov, "--warmup", "warmup fraction", [](auto& c, auto v) { c.train.warmup_fraction = v; });
  add_override<std::size_t>(app, ov, "--workers", "simulated workers", [](auto& c, auto v) { c.train.workers = v; });
  add_override<std::size_t>(app, ov, "--batch", "sequences per worker",
                            [](auto& c, auto v) { c.train.batch_per_worker = v; });
  add_override<std::size_t>(app, ov, "--accum", "gradient accumulation steps",
                            [](auto& c, auto v) { c.train.grad_accum = v; });
  add_override<std::string>(app, ov, "--batching", "auto | balanced | proportional",
                            [](auto& c, auto v) { c.train.batching = parse_batch_mode(v); });
  add_override<std::size_t>(app, ov, "--eval-interval", "steps between validations",
                            [](auto& c, auto v) { c.train.eval_interval = v; });
  add_override<std::size_t>(app, ov, "--patience", "early-stopping patience",
                            [](auto& c, auto v) { c.train.patience = v; });
  add_override<std::size_t>(app, ov, "--checkpoint-interval", "steps between checkpoints",
                            [](auto& c, auto v) { c.train.checkpoint_interval = v; });
}

void add_prior(CLI::App* app, std::vector<Override>& ov) {
  add_override<std::string>(app, ov, "--prior", "uniform | updating | cached",
                            [](auto& c, auto v) { c.prior.strategy = parse_prior_strategy(v); });
  add_override<double>(app, ov, "--lambda", "EWMA decay", [](auto& c, auto v) { c.prior.lambda = v; });
  add_override<std::size_t>(app, ov, "--cache-blocks", "held-out blocks for the cached prior",
                            [](auto& c, auto v) { c.prior.cache_blocks = v; });
  add_override<std::string>(app, ov, "--level", "probability | hidden",
                            [](auto& c, auto v) { c.prior.level = parse_mixture_level(v); });
}

void add_eval(CLI::App* app, std::vector<Override>& ov) {
  add_override<std::string>(app, ov, "--mode", "naive | best_single | simple_average | weighted | all",
                            [](auto& c, auto v) { c.eval.mode = v; });
  add_override<std::string>(app, ov, "--domain", "fixed conditioning for naive mode",
                            [](auto& c, auto v) { c.eval.domain = v; });
  add_override<std::size_t>(app, ov, "--max-blocks", "blocks per dataset (0 = all)",
                            [](auto& c, auto v) { c.eval.max_blocks = v; });
  add_override<std::string>(app, ov, "--split", "dev | test", [](auto& c, auto v) { c.eval.split = v; });
}

void add_adapt(CLI::App* app, std::vector<Override>& ov) {
  add_override<std::string>(app, ov, "--target", "new domain", [](auto& c, auto v) { c.adapt.target = v; });
  add_override<std::string>(app, ov, "--init-from", "expert to copy (default: nearest by cached prior)",
                            [](auto& c, auto v) { c.adapt.init_from = v; });
  add_override<std::size_t>(app, ov, "--heldout-blocks", "held-out blocks for expert selection",
                            [](auto& c, auto v) { c.adapt.heldout_blocks = v; });
}

// ---------------------------------------------------------------------------

std::filesystem::path report_dir(const ExperimentConfig& c) {
  if (!c.paths.reports.empty()) return c.paths.reports;
  if (const char* env = std::getenv("DEMIX_REPORT_DIR"); env && *env) return env;
  return "reports";
}

Corpus load_data(const ExperimentConfig& c) {
  if (c.data.corpus.empty()) throw ConfigError("data.corpus", "a corpus path is required");
  Corpus corpus = load_corpus(c.data.corpus, parse_corpus_format(c.data.format));
  if (!c.data.anonymize) return corpus;
  Anonymizer anon(default_anonymization_rules());
  std::vector<std::vector<Document>> docs;
  for (std::size_t d = 0; d < corpus.domains().size(); ++d) {
    std::vector<Document> out = corpus.documents(d);
    for (auto& doc : out) doc.text = anon.apply(doc.text);
    docs.push_back(std::move(out));
  }
  return Corpus(corpus.domains(), std::move(docs));
}

DemixModel load_model(const ExperimentConfig& c) {
  if (c.paths.checkpoint.empty()) throw ConfigError("paths.checkpoint", "a checkpoint path is required");
  return DemixModel::load(c.paths.checkpoint);
}

std::filesystem::path out_checkpoint(const ExperimentConfig& c, const std::string& fallback) {
  std::filesystem::path out = c.paths.out.empty() ? report_dir(c) / fallback : std::filesystem::path(c.paths.out);
  if (!c.paths.checkpoint.empty() && std::filesystem::weakly_canonical(out) ==
                                         std::filesystem::weakly_canonical(c.paths.checkpoint)) {
    throw ConfigError("paths.out", "must differ from the input checkpoint");
  }
  return out;
}

void save_model(const DemixModel& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  model.save(path);
}

EvalReport base_report(const std::string& command, const ExperimentConfig& c, const DemixModel* model) {
  EvalReport r;
  r.command = command;
  r.config = c;
  r.config_hash = config_hash(c);
  r.checkpoint_id = model ? model->checkpoint_id() : "";
  r.prior = nlohmann::json::object();
  return r;
}

void write_reports(const EvalReport& r, const ExperimentConfig& c, const std::string& stem) {
  const auto dir = report_dir(c);
  for (const auto& p : emit_report(r, ReportFormat::json, dir, stem)) std::cerr << "wrote " << p.string() << "\n";
  for (const auto& p : emit_report(r, ReportFormat::csv, dir, stem)) std::cerr << "wrote " << p.string() << "\n";
}

const std::vector<DomainBlocks>& split_of(const TrainData& data, const std::string& split) {
  return split == "dev" ? data.dev : data.test;
}

std::span<const SequenceBlock> head(const DomainBlocks& d, std::size_t max_blocks) {
  std::span<const SequenceBlock> all(d.blocks);
  return max_blocks && max_blocks < all.size() ? all.first(max_blocks) : all;
}

const DomainBlocks* find_blocks(const std::vector<DomainBlocks>& sets, const std::string& name) {
  for (const auto& s : sets) {
    if (s.domain.name == name) return &s;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------

int cmd_synth(ExperimentConfig& c, const Extras& ex) {
  SynthSpec spec = c.synth;
  if (spec.domains.empty()) {
    for (std::size_t k = 0; k < ex.n_domains; ++k) {
      SynthDomainSpec d;
      d.name = "d" + std::to_string(k);
      d.alphabet_size = ex.synth_alphabet;
      d.concentration = ex.synth_concentration;
      d.tokens = ex.synth_tokens;
      d.mean_doc_length = ex.synth_doc_length;
      spec.domains.push_back(d);
    }
  }
  std::filesystem::path out = c.paths.out.empty() ? report_dir(c) / "corpus.jsonl" : std::filesystem::path(c.paths.out);
  Corpus corpus = synth_corpus(spec, c.seed);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  write_corpus_jsonl(corpus, out);
  std::cerr << "wrote " << out.string() << "\n";

  c.synth = spec;
  EvalReport r = base_report("synth-data", c, nullptr);
  LabeledMatrix overlap;
  overlap.rows = overlap.cols = corpus.domains().names();
  overlap.values = bigram_overlap_matrix(corpus);
  r.tables["bigram_overlap"] = overlap;
  nlohmann::json tokens = nlohmann::json::object();
  for (std::size_t d = 0; d < corpus.domains().size(); ++d) tokens[corpus.domains().name(d)] = corpus.token_count(d);
  r.extra["tokens"] = tokens;
  write_reports(r, c, "synth");
  return kExitOk;
}

int cmd_train(ExperimentConfig& c) {
  Corpus corpus = load_data(c);
  if (c.model.domains.empty()) c.model.domains = corpus.domains().names();
  c.resolve();
  Corpus train_corpus = corpus.subset(c.model.domains);
  TrainData data = make_train_data(train_corpus, c.model.block_length, c.data.shards, c.data.dev_fraction,
                                   c.data.test_fraction);
  const auto ckpt = out_checkpoint(c, "model.ckpt");
  DemixModel model = DemixModel::init(c.model);
  model.lineage()["config_hash"] = config_hash(c);
  TrainOptions opts;
  opts.on_step = [&c](const StepRecord& s) {
    if (s.step % 10 == 0 || s.step == c.train.total_steps) {
      std::cerr << "step " << s.step << " loss " << s.loss << " lr " << s.lr << "\n";
    }
  };
  TrainLog log = train_run(model, data, c.train, opts);
  save_model(model, ckpt);
  const auto dir = report_dir(c);
  std::filesystem::create_directories(dir);
  log.write(dir / "train_log.jsonl");
  std::cerr << "wrote " << ckpt.string() << "\n";

  EvalReport r = base_report("train", c, &model);
  const std::size_t workers = c.train.effective_workers(c.model.domains.size());
  const std::size_t batch_tokens = workers * c.train.grad_accum * c.train.batch_per_worker * c.model.block_length;
  FlopsEstimate f = flops_estimate(c.model, batch_tokens);
  ParamCounts pc = count_params(c.model);
  r.extra["params"] = {{"shared", pc.shared}, {"per_expert", pc.per_expert}, {"total", pc.total}};
  r.extra["flops_per_update"] = {{"dense", f.dense}, {"demix", f.demix}, {"batch_tokens", batch_tokens}};
  if (c.model.variant == FfnVariant::demix) {
    r.extra["sync_plan"] = plan_sync_groups(workers, DomainSet(c.model.domains), pc);
  }
  r.extra["final_loss"] = log.steps.empty() ? nlohmann::json(nullptr) : nlohmann::json(log.steps.back().loss);
  r.extra["early_stopped"] = log.early_stopped;
  LabeledMatrix dev;
  dev.cols = {"naive"};
  for (const auto& d : data.dev) {
    if (d.blocks.empty()) continue;
    DomainLabel cond = c.model.variant == FfnVariant::dense ? DomainLabel{"dense", 0} : model.domains().label(d.domain.name);
    dev.rows.push_back(d.domain.name);
    dev.values.push_back({evaluate_perplexity(model, head(d, c.eval.max_blocks), EvalMode::naive(cond)).perplexity});
  }
  r.tables["dev_perplexity"] = dev;
  write_reports(r, c, "train");
  return kExitOk;
}

DomainPrior make_prior(const DemixModel& model, const ExperimentConfig& c, const TrainData& data,
                       const std::string& dataset) {
  const std::size_t n = eval_conditions(model).size();
  switch (c.prior.strategy) {
    case PriorStrategy::uniform: {
      DomainPrior p = DomainPrior::uniform(n);
      p.lambda = c.prior.lambda;
      return p;
    }
    case PriorStrategy::updating:
      return DomainPrior::updating(n, c.prior.lambda);
    case PriorStrategy::cached: {
      const DomainBlocks* dev = find_blocks(data.dev, dataset);
      if (!dev || dev->blocks.empty()) throw DataError("no dev blocks to cache a prior for '" + dataset + "'");
      return cache_prior(model, dev->blocks, c.prior.cache_blocks, c.prior.lambda);
    }
  }
  throw std::logic_error("unreachable");
}

int cmd_eval(ExperimentConfig& c) {
  c.resolve();
  DemixModel model = load_model(c);
  Corpus corpus = load_data(c);
  TrainData data = make_train_data(corpus, model.config().block_length, c.data.shards, c.data.dev_fraction,
                                   c.data.test_fraction);
  std::vector<std::string> modes =
      c.eval.mode == "all" ? std::vector<std::string>{"naive", "best_single", "simple_average", "weighted"}
                           : std::vector<std::string>{to_string(parse_eval_kind(c.eval.mode))};
  const DomainSet domains = model.domains();
  EvalReport r = base_report("eval", c, &model);
  r.mode = c.eval.mode;
  LabeledMatrix table;
  table.cols = modes;
  nlohmann::json priors = nlohmann::json::object();
  for (const auto& set : split_of(data, c.eval.split)) {
    if (set.blocks.empty()) continue;
    auto blocks = head(set, c.eval.max_blocks);
    std::vector<double> row;
    for (const auto& m : modes) {
      EvalKind kind = parse_eval_kind(m);
      if (kind == EvalKind::naive) {
        std::string cond = c.eval.domain.empty() ? set.domain.name : c.eval.domain;
        if (model.config().variant == FfnVariant::dense) {
          row.push_back(evaluate_perplexity(model, blocks, EvalMode::naive({"dense", 0})).perplexity);
        } else if (domains.contains(cond) &&
                   (model.config().variant != FfnVariant::demix || model.is_active(domains.label(cond).index))) {
          row.push_back(evaluate_perplexity(model, blocks, EvalMode::naive(domains.label(cond))).perplexity);
        } else {
          row.push_back(std::nan(""));
        }
      } else if (kind == EvalKind::weighted) {
        DomainPrior prior = make_prior(model, c, data, set.domain.name);
        priors[set.domain.name] = prior;
        row.push_back(evaluate_perplexity(model, blocks, EvalMode::weighted(prior, c.prior.level)).perplexity);
      } else if (kind == EvalKind::simple_average) {
        row.push_back(evaluate_perplexity(model, blocks, EvalMode::simple_average(c.prior.level)).perplexity);
      } else {
        row.push_back(evaluate_perplexity(model, blocks, EvalMode::best_single()).perplexity);
      }
    }
    table.rows.push_back(set.domain.name);
    table.values.push_back(std::move(row));
  }
  r.tables["perplexity"] = table;
  r.prior = {{"strategy", to_string(c.prior.strategy)},
             {"lambda", c.prior.lambda},
             {"cache_blocks", c.prior.cache_blocks},
             {"level", to_string(c.prior.level)},
             {"per_dataset", priors}};
  r.extra["split"] = c.eval.split;
  write_reports(r, c, "eval");
  return kExitOk;
}

int cmd_posteriors(ExperimentConfig& c, CLI::App* sub) {
  if (!sub->get_option("--split")->count() && c.eval.split == "test") c.eval.split = "dev";
  c.resolve();
  DemixModel model = load_model(c);
  Corpus corpus = load_data(c);
  TrainData data = make_train_data(corpus, model.config().block_length, c.data.shards, c.data.dev_fraction,
                                   c.data.test_fraction);
  std::vector<DomainBlocks> sets;
  for (const auto& s : split_of(data, c.eval.split)) {
    if (!s.blocks.empty()) sets.push_back(s);
  }
  EvalReport r = base_report("posteriors", c, &model);
  r.mode = "updating";
  r.tables["posteriors"] = posterior_matrix(model, sets, c.eval.posterior_blocks, c.prior.lambda);
  r.prior = {{"strategy", "updating"}, {"lambda", c.prior.lambda}, {"blocks", c.eval.posterior_blocks}};
  write_reports(r, c, "posteriors");
  return kExitOk;
}

int cmd_affinity(ExperimentConfig& c) {
  c.resolve();
  DemixModel model = load_model(c);
  Corpus corpus = load_data(c);
  TrainData data = make_train_data(corpus, model.config().block_length, c.data.shards, c.data.dev_fraction,
                                   c.data.test_fraction);
  EvalReport r = base_report("affinity", c, &model);
  r.mode = "naive";
  LabeledMatrix aff = affinity_matrix(model, split_of(data, c.eval.split), c.eval.max_blocks);
  r.tables["affinity"] = aff;
  bool all_present = true;
  for (const auto& name : aff.cols) all_present = all_present && corpus.domains().contains(name);
  if (all_present) {
    LabeledMatrix overlap;
    overlap.rows = overlap.cols = aff.cols;
    overlap.values = bigram_overlap_matrix(corpus.subset(aff.cols));
    r.tables["bigram_overlap"] = overlap;
    if (aff.cols.size() >= 3) {
      try {
        r.extra["affinity_overlap_r"] = affinity_overlap_correlation(aff, overlap.values);
      } catch (const DataError& e) {
        r.extra["affinity_overlap_r"] = nullptr;
        r.extra["affinity_overlap_error"] = e.what();
      }
    }
  }
  write_reports(r, c, "affinity");
  return kExitOk;
}

DomainLabel resolve_init_from(const DemixModel& model, const ExperimentConfig& c, const TrainData* data) {
  if (!c.adapt.init_from.empty()) return model.domains().label(c.adapt.init_from);
  if (!data) throw ConfigError("adapt.init_from", "name an expert or provide a corpus with the target domain");
  const DomainBlocks* dev = find_blocks(data->dev, c.adapt.target);
  if (!dev || dev->blocks.empty()) dev = find_blocks(data->train, c.adapt.target);
  if (!dev) throw DataError("corpus has no domain '" + c.adapt.target + "'");
  return select_init_expert(model, dev->blocks, c.adapt.heldout_blocks, c.prior.lambda);
}

int cmd_add_expert(ExperimentConfig& c) {
  c.resolve();
  if (c.adapt.target.empty()) throw ConfigError("adapt.target", "a new domain name is required");
  DemixModel model = load_model(c);
  const auto out = out_checkpoint(c, "model-added.ckpt");
  std::optional<TrainData> data;
  if (c.adapt.init_from.empty()) {
    Corpus corpus = load_data(c).subset({c.adapt.target});
    data = make_train_data(corpus, model.config().block_length, c.data.shards, c.data.dev_fraction,
                           c.data.test_fraction);
  }
  DomainLabel from = resolve_init_from(model, c, data ? &*data : nullptr);
  add_expert(model, c.adapt.target, from);
  save_model(model, out);
  std::cerr << "added expert '" << c.adapt.target << "' from '" << from.name << "'; wrote " << out.string() << "\n";
  return kExitOk;
}

int cmd_adapt(ExperimentConfig& c) {
  c.resolve();
  if (c.adapt.target.empty()) throw ConfigError("adapt.target", "a new domain name is required");
  DemixModel model = load_model(c);
  const auto out = out_checkpoint(c, "model-adapted.ckpt");
  Corpus corpus = load_data(c).subset({c.adapt.target});
  TrainData data = make_train_data(corpus, model.config().block_length, c.data.shards, c.data.dev_fraction,
                                   c.data.test_fraction);
  DomainLabel from = resolve_init_from(model, c, &data);
  if (!model.domains().contains(c.adapt.target)) add_expert(model, c.adapt.target, from);

  AdaptConfig ac;
  ac.target = c.adapt.target;
  ac.heldout_blocks = c.adapt.heldout_blocks;
  ac.base_lr = c.train.peak_lr;
  ac.lr_divisor = c.adapt.lr_divisor;
  ac.lambda = c.prior.lambda;
  ac.train = c.train;
  ac.train.total_steps = c.adapt.steps;
  ac.train.patience = c.adapt.patience;
  ac.train.eval_interval = c.adapt.eval_interval;
  DaptResult res = dapt_run(model, data, ac);
  save_model(model, out);
  const auto dir = report_dir(c);
  std::filesystem::create_directories(dir);
  res.log.write(dir / "adapt_log.jsonl");

  EvalReport r = base_report("adapt", c, &model);
  r.mode = "naive";
  LabeledMatrix t;
  t.rows = {c.adapt.target};
  t.cols = {"before", "after"};
  t.values = {{res.ppl_before, res.ppl_after}};
  r.tables["target_perplexity"] = t;
  r.extra["init_from"] = from.name;
  r.extra["lr"] = ac.lr();
  r.extra["early_stopped"] = res.log.early_stopped;
  write_reports(r, c, "adapt");
  std::cerr << "wrote " << out.string() << "\n";
  return kExitOk;
}

int cmd_remove_expert(ExperimentConfig& c, const Extras& ex) {
  c.resolve();
  if (ex.remove_domain.empty() == ex.restore_domain.empty()) {
    throw ConfigError("domain", "give exactly one of --domain or --restore");
  }
  DemixModel model = load_model(c);
  const auto out = out_checkpoint(c, "model-removed.ckpt");
  if (!ex.remove_domain.empty()) {
    remove_expert(model, model.domains().label(ex.remove_domain));
  } else {
    restore_expert(model, model.domains().label(ex.restore_domain));
  }
  save_model(model, out);
  std::cerr << "wrote " << out.string() << "\n";
  return kExitOk;
}

int cmd_plan_sync(ExperimentConfig& c, const Extras& ex) {
  c.resolve();
  std::vector<std::string> names = c.model.domains;
  if (!ex.plan_domains.empty()) {
    names.clear();
    std::size_t n = 0;
    try {
      n = std::stoul(ex.plan_domains);
    } catch (const std::exception&) {
      throw ConfigError("domains", "must be a domain count");
    }
    for (std::size_t k = 0; k < n; ++k) names.push_back("d" + std::to_string(k));
  }
  if (names.empty()) {
    for (std::size_t k = 0; k < 8; ++k) names.push_back("d" + std::to_string(k));
  }
  ModelConfig mc = c.model;
  mc.domains = names;
  mc.variant = FfnVariant::demix;
  SyncPlan plan = plan_sync_groups(ex.n_workers, DomainSet(names), count_params(mc));
  EvalReport r = base_report("plan-sync", c, nullptr);
  r.extra["sync_plan"] = plan;
  write_reports(r, c, "plan_sync");
  std::cout << nlohmann::json(plan).dump(2) << "\n";
  return kExitOk;
}

int cmd_sweep_lr(ExperimentConfig& c, const Extras& ex) {
  Corpus corpus = load_data(c);
  if (c.model.domains.empty()) c.model.domains = corpus.domains().names();
  c.resolve();
  TrainData data = make_train_data(corpus.subset(c.model.domains), c.model.block_length, c.data.shards,
                                   c.data.dev_fraction, c.data.test_fraction);
  std::vector<double> grid = ex.lrs.empty() ? default_lr_grid() : ex.lrs;
  for (double lr : grid) {
    if (!(lr > 0.0)) throw ConfigError("lrs", "learning rates must be positive");
  }
  SweepResult res = sweep_lr(c.model, data, c.train, grid);
  EvalReport r = base_report("sweep-lr", c, nullptr);
  r.extra["sweep"] = res;
  write_reports(r, c, "sweep_lr");
  return kExitOk;
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"DEMix language-model experiments"};
  app.require_subcommand(1);
  std::map<std::string, std::vector<Override>> overrides;
  Extras ex;

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic multi-domain corpus");
  add_common(synth, overrides["synth-data"], ex);
  add_override<std::string>(synth, overrides["synth-data"], "--out", "corpus output path",
                            [](auto& c, auto v) { c.paths.out = v; });
  synth->add_option("--n-domains", ex.n_domains, "number of domains");
  synth->add_option("--tokens", ex.synth_tokens, "tokens per domain");
  synth->add_option("--alphabet", ex.synth_alphabet, "alphabet size per domain");
  synth->add_option("--concentration", ex.synth_concentration, "Dirichlet concentration");
  synth->add_option("--doc-length", ex.synth_doc_length, "mean document length");
  add_override<double>(synth, overrides["synth-data"], "--overlap", "neighbour alphabet overlap",
                       [](auto& c, auto v) { c.synth.overlap = v; });

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, overrides["train"], ex);
  add_data(train, overrides["train"]);
  add_model(train, overrides["train"]);
  add_train(train, overrides["train"]);
  add_override<std::string>(train, overrides["train"], "--out", "checkpoint output path",
                            [](auto& c, auto v) { c.paths.out = v; });

  auto* eval = app.add_subcommand("eval", "perplexity under the evaluation modes");
  add_common(eval, overrides["eval"], ex);
  add_data(eval, overrides["eval"]);
  add_checkpoint(eval, overrides["eval"], false);
  add_prior(eval, overrides["eval"]);
  add_eval(eval, overrides["eval"]);

  auto* post = app.add_subcommand("posteriors", "domain posterior matrix");
  add_common(post, overrides["posteriors"], ex);
  add_data(post, overrides["posteriors"]);
  add_checkpoint(post, overrides["posteriors"], false);
  add_override<double>(post, overrides["posteriors"], "--lambda", "EWMA decay",
                       [](auto& c, auto v) { c.prior.lambda = v; });
  add_override<std::size_t>(post, overrides["posteriors"], "--blocks", "blocks per dataset",
                            [](auto& c, auto v) { c.eval.posterior_blocks = v; });
  add_override<std::string>(post, overrides["posteriors"], "--split", "dev | test",
                            [](auto& c, auto v) { c.eval.split = v; });

  auto* aff = app.add_subcommand("affinity", "expert/domain affinity matrix");
  add_common(aff, overrides["affinity"], ex);
  add_data(aff, overrides["affinity"]);
  add_checkpoint(aff, overrides["affinity"], false);
  add_override<std::size_t>(aff, overrides["affinity"], "--max-blocks", "blocks per dataset (0 = all)",
                            [](auto& c, auto v) { c.eval.max_blocks = v; });
  add_override<std::string>(aff, overrides["affinity"], "--split", "dev | test",
                            [](auto& c, auto v) { c.eval.split = v; });

  auto* adapt = app.add_subcommand("adapt", "add an expert for a new domain and train only it");
  add_common(adapt, overrides["adapt"], ex);
  add_data(adapt, overrides["adapt"]);
  add_checkpoint(adapt, overrides["adapt"], true);
  add_adapt(adapt, overrides["adapt"]);
  add_override<double>(adapt, overrides["adapt"], "--lr", "base peak learning rate",
                       [](auto& c, auto v) { c.train.peak_lr = v; });
  add_override<double>(adapt, overrides["adapt"], "--lr-divisor", "base LR divisor",
                       [](auto& c, auto v) { c.adapt.lr_divisor = v; });
  add_override<std::size_t>(adapt, overrides["adapt"], "--steps", "adaptation steps",
                            [](auto& c, auto v) { c.adapt.steps = v; });
  add_override<std::size_t>(adapt, overrides["adapt"], "--patience", "early-stopping patience",
                            [](auto& c, auto v) { c.adapt.patience = v; });
  add_override<std::size_t>(adapt, overrides["adapt"], "--eval-interval", "steps between validations",
                            [](auto& c, auto v) { c.adapt.eval_interval = v; });

  auto* add = app.add_subcommand("add-expert", "append an expert copied from an existing one");
  add_common(add, overrides["add-expert"], ex);
  add_data(add, overrides["add-expert"]);
  add_checkpoint(add, overrides["add-expert"], true);
  add_adapt(add, overrides["add-expert"]);

  auto* remove = app.add_subcommand("remove-expert", "deactivate (or --restore) an expert");
  add_common(remove, overrides["remove-expert"], ex);
  add_checkpoint(remove, overrides["remove-expert"], true);
  remove->add_option("--domain", ex.remove_domain, "expert to deactivate");
  remove->add_option("--restore", ex.restore_domain, "expert to reactivate");

  auto* plan = app.add_subcommand("plan-sync", "expert-parallel synchronization groups");
  add_common(plan, overrides["plan-sync"], ex);
  plan->add_option("--n-workers", ex.n_workers, "simulated workers");
  plan->add_option("--domains", ex.plan_domains, "number of domains (default: config or 8)");

  auto* sweep = app.add_subcommand("sweep-lr", "largest non-diverging learning rate");
  add_common(sweep, overrides["sweep-lr"], ex);
  add_data(sweep, overrides["sweep-lr"]);
  add_model(sweep, overrides["sweep-lr"]);
  add_train(sweep, overrides["sweep-lr"]);
  sweep->add_option("--lrs", ex.lrs, "learning-rate grid");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  ExperimentConfig config;
  if (!ex.config_path.empty()) config = load_experiment_config(ex.config_path);
  for (auto& apply : overrides[name]) apply(config);

  if (name == "synth-data") {
    config.resolve();
    return cmd_synth(config, ex);
  }
  if (name == "train") return cmd_train(config);
  if (name == "eval") return cmd_eval(config);
  if (name == "posteriors") return cmd_posteriors(config, sub);
  if (name == "affinity") return cmd_affinity(config);
  if (name == "adapt") return cmd_adapt(config);
  if (name == "add-expert") return cmd_add_expert(config);
  if (name == "remove-expert") return cmd_remove_expert(config, ex);
  if (name == "plan-sync") return cmd_plan_sync(config, ex);
  if (name == "sweep-lr") return cmd_sweep_lr(config, ex);
  throw std::logic_error("unhandled subcommand " + name);
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  try {
    return run(args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace demix
