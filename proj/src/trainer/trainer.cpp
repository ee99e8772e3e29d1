#include "demix/trainer/trainer.hpp"

#include "demix/inference/evaluate.hpp"
#include "demix/model/transformer.hpp"
#include "demix/numerics/ops.hpp"

#include <cmath>
#include <cstdio>
#include <map>

namespace demix {

TrainData make_train_data(const Corpus& corpus, std::size_t block_length, std::size_t shards, double dev_fraction,
                          double test_fraction) {
  BlockSplits s = split_blocks(build_blocks(corpus, block_length, shards), dev_fraction, test_fraction);
  return TrainData{std::move(s.train), std::move(s.dev), std::move(s.test)};
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& s : steps) {
    nlohmann::json j{{"type", "step"}, {"step", s.step},         {"loss", s.loss},
                     {"lr", s.lr},     {"grad_norm", s.grad_norm}, {"tokens", s.tokens}};
    out += j.dump() + "\n";
  }
  for (const auto& e : evals) {
    nlohmann::json j{{"type", "eval"},
                     {"step", e.step},
                     {"domains", e.domains},
                     {"perplexity", e.perplexity},
                     {"mean", e.mean}};
    out += j.dump() + "\n";
  }
  nlohmann::json summary{{"type", "summary"}, {"early_stopped", early_stopped}};
  summary["best_step"] = best_step ? nlohmann::json(*best_step) : nlohmann::json(nullptr);
  out += summary.dump() + "\n";
  return out;
}

void TrainLog::write(const std::filesystem::path& path) const { write_file_atomic(path, to_jsonl()); }

namespace {

BatchMode resolve_mode(BatchMode m, FfnVariant v) {
  if (m != BatchMode::automatic) return m;
  return v == FfnVariant::dense ? BatchMode::proportional : BatchMode::balanced;
}

struct PreparedData {
  /// Expert (demix) or domain-token index of each training domain.
  std::vector<DomainLabel> labels;
};

PreparedData prepare(const DemixModel& model, const TrainData& data) {
  PreparedData p;
  const DomainSet domains = model.domains();
  for (const auto& d : data.train) {
    if (model.config().variant == FfnVariant::dense) {
      p.labels.push_back(d.domain);
      continue;
    }
    DomainLabel l = domains.label(d.domain.name);
    if (model.config().variant == FfnVariant::demix && !model.is_active(l.index)) {
      throw DataError("expert disabled: '" + l.name + "'");
    }
    p.labels.push_back(l);
  }
  return p;
}

class Evaluator {
 public:
  Evaluator(const DemixModel& model, const TrainData& data, std::size_t max_blocks) {
    const DomainSet domains = model.domains();
    for (const auto& d : data.dev) {
      if (d.blocks.empty()) continue;
      if (model.config().variant != FfnVariant::dense && !domains.contains(d.domain.name)) continue;
      names_.push_back(d.domain.name);
      labels_.push_back(model.config().variant == FfnVariant::dense ? DomainLabel{"dense", 0}
                                                                     : domains.label(d.domain.name));
      const std::size_t n = max_blocks ? std::min(max_blocks, d.blocks.size()) : d.blocks.size();
      sets_.emplace_back(d.blocks.begin(), d.blocks.begin() + static_cast<std::ptrdiff_t>(n));
    }
  }

  bool empty() const { return sets_.empty(); }

  EvalRecord run(const DemixModel& model, std::size_t step) const {
    EvalRecord r;
    r.step = step;
    r.domains = names_;
    double sum = 0.0;
    for (std::size_t i = 0; i < sets_.size(); ++i) {
      double ppl = evaluate_perplexity(model, sets_[i], EvalMode::naive(labels_[i])).perplexity;
      r.perplexity.push_back(ppl);
      sum += ppl;
    }
    r.mean = sum / static_cast<double>(sets_.size());
    return r;
  }

 private:
  std::vector<std::string> names_;
  std::vector<DomainLabel> labels_;
  std::vector<std::vector<SequenceBlock>> sets_;
};

std::filesystem::path checkpoint_path(const std::string& dir, const std::string& stem) {
  return std::filesystem::path(dir) / (stem + ".ckpt");
}

std::string step_stem(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step-%06zu", step);
  return buf;
}

}  // namespace

TrainLog train_run(DemixModel& model, const TrainData& data, const TrainConfig& config, const TrainOptions& options) {
  const ModelConfig& mc = model.config();
  const std::size_t n_domains = data.train.size();
  config.validate(mc.variant, n_domains);
  const BatchMode mode = resolve_mode(config.batching, mc.variant);
  const std::size_t workers = config.effective_workers(n_domains);
  const std::size_t L = mc.block_length;
  for (const auto& d : data.train) {
    for (const auto& b : d.blocks) {
      if (b.length() != L) throw ConfigError("block_length", "training blocks do not match the model block length");
    }
  }

  PreparedData prep = prepare(model, data);
  std::optional<SyncPlan> plan;
  if (mode == BatchMode::balanced) {
    std::vector<std::string> names;
    for (const auto& d : data.train) names.push_back(d.domain.name);
    plan = plan_sync_groups(workers, DomainSet(names), count_params(mc));
  }
  BatchStream stream(data.train, mode, config.seed);
  Evaluator evaluator(model, data, config.eval_blocks);
  const AdamHyper hyper{config.beta1, config.beta2, config.adam_eps, config.weight_decay};
  AdamState adam;
  TrainLog log;
  ForwardOptions fwd;
  fwd.training = true;
  fwd.trainable = options.trainable;

  ParameterSet<float> last_good = model.parameters();
  std::optional<ParameterSet<float>> best_params;
  double best_mean = std::numeric_limits<double>::infinity();
  std::size_t bad_evals = 0;

  auto evaluate = [&](std::size_t step) -> bool {
    if (!config.eval_interval || evaluator.empty()) return false;
    EvalRecord r = evaluator.run(model, step);
    const double mean = r.mean;
    log.evals.push_back(std::move(r));
    if (config.patience == 0) return false;
    if (mean < best_mean) {
      best_mean = mean;
      best_params = model.parameters();
      log.best_step = step;
      bad_evals = 0;
      return false;
    }
    return ++bad_evals >= config.patience;
  };

  evaluate(0);
  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    ParameterSet<float> start = model.parameters();
    std::map<std::string, TensorF> acc;
    std::map<std::string, std::size_t> contributions;
    double loss_sum = 0.0;
    std::size_t tokens = 0;
    bool finite = true;

    for (std::size_t w = 0; w < workers && finite; ++w) {
      for (std::size_t m = 0; m < config.grad_accum && finite; ++m) {
        DomainBatch batch;
        if (plan) {
          const std::size_t g = plan->group_of(w);
          batch = stream.take(g, w - g * plan->group_size, config.batch_per_worker);
        } else {
          batch = stream.take(stream.sample_domain(), w, config.batch_per_worker);
        }
        const DomainLabel& label = prep.labels[batch.domain];
        RoutingWeights routing =
            mc.variant == FfnVariant::demix ? RoutingWeights::hard(model.n_experts(), label.index) : RoutingWeights::dense();

        std::vector<int> ids, targets;
        std::vector<std::uint8_t> mask;
        for (const SequenceBlock* b : batch.blocks) {
          SequenceBlock blk = mc.variant == FfnVariant::domain_token ? prepend_domain_token(model, *b, label) : *b;
          BlockTargets t = block_targets(blk);
          ids.insert(ids.end(), blk.tokens.begin(), blk.tokens.end());
          targets.insert(targets.end(), t.targets.begin(), t.targets.end());
          mask.insert(mask.end(), t.mask.begin(), t.mask.end());
        }

        RngStream dropout(config.seed, "dropout/" + std::to_string(step) + "/" + std::to_string(w) + "/" +
                                           std::to_string(m));
        fwd.dropout_stream = &dropout;
        Tape<float> tape(true);
        Var logits = transformer_logits(tape, model.parameters(), mc, std::span<const int>(ids), L, routing, fwd);
        std::size_t count = 0;
        Var loss = ops::cross_entropy_loss(tape, logits, std::span<const int>(targets),
                                           std::span<const std::uint8_t>(mask), &count);
        const double value = tape.value(loss)[0];
        if (!std::isfinite(value)) {
          finite = false;
          break;
        }
        tape.backward(loss);
        loss_sum += value;
        tokens += count;
        for (const std::string& name : tape.parameter_names()) {
          const TensorF* g = tape.param_grad(name);
          if (!g) continue;
          auto [it, fresh] = acc.try_emplace(name, *g);
          if (!fresh) it->second.vector() += g->vector();
          ++contributions[name];
        }
      }
    }

    ParameterSet<float> grads;
    if (finite) {
      const double all = static_cast<double>(workers * config.grad_accum);
      for (const auto& [name, _] : model.parameters()) {
        auto it = acc.find(name);
        if (it == acc.end()) continue;
        const bool expert = mc.variant == FfnVariant::demix && model.expert_of(name).has_value();
        const double denom = expert ? static_cast<double>(contributions[name]) : all;
        TensorF g = std::move(it->second);
        for (float& x : g.storage()) {
          x = static_cast<float>(static_cast<double>(x) / denom);
          finite = finite && std::isfinite(x);
        }
        grads.add(name, std::move(g));
      }
    }
    const double lr = lr_schedule(step, config);
    if (!finite) {
      model.parameters() = last_good;
      if (!config.checkpoint_dir.empty()) model.save(checkpoint_path(config.checkpoint_dir, "last-good"));
      throw DivergenceError(step, lr);
    }

    const double norm = clip_gradients(grads, config.clip_norm);
    adam_step(model.parameters(), grads, adam, lr, hyper);
    last_good = std::move(start);

    StepRecord rec{step, loss_sum / static_cast<double>(workers * config.grad_accum), lr, norm, tokens};
    log.steps.push_back(rec);
    if (options.on_step) options.on_step(rec);

    if (config.checkpoint_interval && !config.checkpoint_dir.empty() && step % config.checkpoint_interval == 0) {
      std::filesystem::create_directories(config.checkpoint_dir);
      model.save(checkpoint_path(config.checkpoint_dir, step_stem(step)));
    }
    const bool due = config.eval_interval && (step % config.eval_interval == 0 || step == config.total_steps);
    if (due && evaluate(step)) {
      log.early_stopped = true;
      break;
    }
  }
  if (best_params && log.best_step && (log.evals.empty() || log.evals.back().step != *log.best_step)) {
    model.parameters() = std::move(*best_params);
  }
  return log;
}

std::vector<double> default_lr_grid() { return {1e-3, 3e-3, 5e-3}; }

SweepResult sweep_lr(const ModelConfig& model_config, const TrainData& data, const TrainConfig& base,
                     const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("lr_grid", "must not be empty");
  SweepResult r;
  for (double lr : grid) {
    TrainConfig c = base;
    c.peak_lr = lr;
    c.checkpoint_dir.clear();
    DemixModel model = DemixModel::init(model_config);
    r.lrs.push_back(lr);
    try {
      TrainLog log = train_run(model, data, c);
      r.diverged.push_back(false);
      r.final_loss.push_back(log.steps.empty() ? std::nan("") : log.steps.back().loss);
      if (!r.chosen || lr > *r.chosen) r.chosen = lr;
    } catch (const DivergenceError&) {
      r.diverged.push_back(true);
      r.final_loss.push_back(std::nan(""));
    }
  }
  return r;
}

void to_json(nlohmann::json& j, const SweepResult& r) {
  j = nlohmann::json::object();
  j["lrs"] = r.lrs;
  j["diverged"] = r.diverged;
  nlohmann::json losses = nlohmann::json::array();
  for (double l : r.final_loss) losses.push_back(std::isfinite(l) ? nlohmann::json(l) : nlohmann::json(nullptr));
  j["final_loss"] = losses;
  j["chosen"] = r.chosen ? nlohmann::json(*r.chosen) : nlohmann::json(nullptr);
}

}  // namespace demix
