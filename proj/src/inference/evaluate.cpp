#include "demix/inference/evaluate.hpp"

#include "demix/error.hpp"
#include "demix/numerics/softmax.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace demix {

namespace {

constexpr std::size_t kEvalChunk = 8;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// log-softmax at the target of every unmasked row of one block, reading
/// rows [offset, offset + L) of a stacked logits matrix.
std::vector<double> scored_logprobs(const TensorF& logits, std::size_t offset, const BlockTargets& t) {
  const std::size_t vocab = logits.cols();
  std::vector<double> out;
  out.reserve(t.count);
  std::vector<double> row(vocab);
  for (std::size_t r = 0; r < t.mask.size(); ++r) {
    if (!t.mask[r]) continue;
    const int target = t.targets[r];
    if (target < 0 || static_cast<std::size_t>(target) >= vocab) throw DataError("target id outside the vocabulary");
    for (std::size_t c = 0; c < vocab; ++c) row[c] = static_cast<double>(logits.at(offset + r, c));
    out.push_back(row[static_cast<std::size_t>(target)] - log_sum_exp(row));
  }
  return out;
}

double sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

/// Block as fed to the model under condition `cond` plus the routing to use.
struct Conditioned {
  std::vector<SequenceBlock> blocks;
  RoutingWeights routing;
};

Conditioned condition_blocks(const DemixModel& model, std::span<const SequenceBlock> blocks, const DomainLabel& cond) {
  Conditioned c;
  switch (model.config().variant) {
    case FfnVariant::demix:
      if (!model.is_active(cond.index)) throw DataError("expert disabled: '" + cond.name + "'");
      c.routing = RoutingWeights::hard(model.n_experts(), cond.index);
      c.blocks.assign(blocks.begin(), blocks.end());
      break;
    case FfnVariant::domain_token:
      for (const auto& b : blocks) c.blocks.push_back(prepend_domain_token(model, b, cond));
      break;
    case FfnVariant::dense:
      if (cond.index != 0) throw std::out_of_range("a dense model has a single conditioning");
      c.blocks.assign(blocks.begin(), blocks.end());
      break;
  }
  return c;
}

/// Per-block scored log-probabilities under one condition, forwarding in chunks.
std::vector<std::vector<double>> condition_scores(const DemixModel& model, std::span<const SequenceBlock> blocks,
                                                  const DomainLabel& cond) {
  Conditioned c = condition_blocks(model, blocks, cond);
  const std::size_t L = model.config().block_length;
  std::vector<std::vector<double>> out;
  out.reserve(c.blocks.size());
  for (std::size_t start = 0; start < c.blocks.size(); start += kEvalChunk) {
    const std::size_t end = std::min(start + kEvalChunk, c.blocks.size());
    std::vector<const SequenceBlock*> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(&c.blocks[i]);
    TensorF logits = forward(model, std::span<const SequenceBlock* const>(chunk), c.routing);
    for (std::size_t i = start; i < end; ++i) {
      out.push_back(scored_logprobs(logits, (i - start) * L, block_targets(c.blocks[i])));
    }
  }
  return out;
}

std::size_t condition_position(const std::vector<DomainLabel>& conds, const DomainLabel& d) {
  for (std::size_t i = 0; i < conds.size(); ++i) {
    if (conds[i].index == d.index) return i;
  }
  throw DataError("expert disabled: '" + d.name + "'");
}

PerplexityResult finish(std::vector<BlockLog> logs) {
  PerplexityResult r;
  double nll = 0.0;
  for (const auto& b : logs) {
    nll += b.nll;
    r.tokens += b.count;
  }
  if (r.tokens == 0) throw DataError("evaluation set has no scored tokens");
  r.mean_nll = nll / static_cast<double>(r.tokens);
  r.perplexity = std::exp(r.mean_nll);
  r.blocks = std::move(logs);
  return r;
}

PerplexityResult single_condition(const std::vector<std::vector<double>>& scores) {
  std::vector<BlockLog> logs;
  for (const auto& s : scores) logs.push_back(BlockLog{-sum(s), s.size(), {}, {}});
  return finish(std::move(logs));
}

void check_prior_size(const DomainPrior& prior, std::size_t n) {
  if (prior.size() != n) {
    throw std::invalid_argument("prior has " + std::to_string(prior.size()) + " entries for " + std::to_string(n) +
                                " active experts");
  }
  prior.validate();
}

}  // namespace

std::vector<DomainLabel> eval_conditions(const DemixModel& model) {
  const DomainSet domains = model.domains();
  std::vector<DomainLabel> out;
  switch (model.config().variant) {
    case FfnVariant::demix:
      for (std::size_t j : model.active_experts()) out.push_back(domains.label(j));
      break;
    case FfnVariant::domain_token:
      for (std::size_t j = 0; j < domains.size(); ++j) out.push_back(domains.label(j));
      break;
    case FfnVariant::dense:
      out.push_back(DomainLabel{"dense", 0});
      break;
  }
  return out;
}

BlockLoglik sequence_loglik(const TensorF& logits, const BlockTargets& targets) {
  if (logits.rows() != targets.mask.size()) throw std::invalid_argument("logits rows do not match the targets");
  std::vector<double> lp = scored_logprobs(logits, 0, targets);
  return BlockLoglik{sum(lp), lp.size()};
}

BlockLoglik block_loglik(const DemixModel& model, const SequenceBlock& block, std::size_t expert) {
  DomainLabel cond = model.config().variant == FfnVariant::dense ? DomainLabel{"dense", expert}
                                                                  : model.domains().label(expert);
  Conditioned c = condition_blocks(model, std::span<const SequenceBlock>(&block, 1), cond);
  TensorF logits = forward(model, c.blocks[0], c.routing);
  return sequence_loglik(logits, block_targets(c.blocks[0]));
}

std::string to_string(MixtureLevel l) { return l == MixtureLevel::probability ? "probability" : "hidden"; }

MixtureLevel parse_mixture_level(const std::string& name) {
  if (name == "probability") return MixtureLevel::probability;
  if (name == "hidden") return MixtureLevel::hidden;
  throw ConfigError("level", "unknown mixture level '" + name + "'");
}

MixtureResult mixture_step(const DemixModel& model, const SequenceBlock& block, const DomainPrior& prior,
                           MixtureLevel level) {
  const std::vector<DomainLabel> conds = eval_conditions(model);
  check_prior_size(prior, conds.size());
  std::vector<TensorD> per_cond;
  std::vector<double> evidence;
  BlockTargets targets;
  for (const auto& cond : conds) {
    Conditioned c = condition_blocks(model, std::span<const SequenceBlock>(&block, 1), cond);
    TensorF logits = forward(model, c.blocks[0], c.routing);
    targets = block_targets(c.blocks[0]);
    evidence.push_back(sequence_loglik(logits, targets).loglik);
    per_cond.push_back(stable_log_softmax(logits));
  }

  MixtureResult r;
  if (level == MixtureLevel::probability) {
    r.log_probs = TensorD(per_cond[0].shape(), 0.0);
    std::vector<double> terms(conds.size());
    for (std::size_t i = 0; i < r.log_probs.size(); ++i) {
      for (std::size_t j = 0; j < conds.size(); ++j) {
        terms[j] = prior.weights[j] > 0.0 ? std::log(prior.weights[j]) + per_cond[j][i] : kNegInf;
      }
      r.log_probs[i] = log_sum_exp(terms);
    }
  } else {
    if (model.config().variant != FfnVariant::demix) {
      throw ConfigError("level", "hidden-level mixing requires a demix model");
    }
    RoutingWeights routing = route_weights(model, std::nullopt, std::span<const double>(prior.weights),
                                           RoutingMode::mixture);
    r.log_probs = stable_log_softmax(forward(model, block, routing));
  }
  for (std::size_t t = 0; t < targets.mask.size(); ++t) {
    if (!targets.mask[t]) continue;
    r.loglik += r.log_probs.at(t, static_cast<std::size_t>(targets.targets[t]));
    ++r.count;
  }
  r.posterior = domain_posterior(evidence, prior);
  return r;
}

DomainPrior cache_prior(const DemixModel& model, std::span<const SequenceBlock> heldout, std::size_t cache_blocks,
                        double lambda) {
  if (heldout.empty()) throw DataError("empty held-out stream");
  if (cache_blocks == 0) throw ConfigError("cache_blocks", "must be positive");
  const std::size_t used = std::min(cache_blocks, heldout.size());
  const std::vector<DomainLabel> conds = eval_conditions(model);
  std::vector<std::vector<std::vector<double>>> scores;
  for (const auto& cond : conds) scores.push_back(condition_scores(model, heldout.first(used), cond));

  DomainPrior running = DomainPrior::updating(conds.size(), lambda);
  std::vector<double> mean(conds.size(), 0.0);
  std::vector<double> evidence(conds.size());
  for (std::size_t b = 0; b < used; ++b) {
    for (std::size_t j = 0; j < conds.size(); ++j) evidence[j] = sum(scores[j][b]);
    DomainPosterior post = domain_posterior(evidence, running);
    for (std::size_t j = 0; j < conds.size(); ++j) mean[j] += post.weights[j];
    observe(running, post);
  }
  double total = 0.0;
  for (double& m : mean) total += (m /= static_cast<double>(used));
  for (double& m : mean) m /= total;
  DomainPrior cached = DomainPrior::fixed(std::move(mean));
  cached.lambda = lambda;
  cached.cache_blocks = cache_blocks;
  cached.cached_from = used;
  return cached;
}

std::string to_string(EvalKind k) {
  switch (k) {
    case EvalKind::naive:
      return "naive";
    case EvalKind::best_single:
      return "best_single";
    case EvalKind::simple_average:
      return "simple_average";
    case EvalKind::weighted:
      return "weighted";
  }
  return "unknown";
}

EvalKind parse_eval_kind(const std::string& name) {
  if (name == "naive") return EvalKind::naive;
  if (name == "best_single" || name == "best-single") return EvalKind::best_single;
  if (name == "simple_average" || name == "simple-average" || name == "average") return EvalKind::simple_average;
  if (name == "weighted") return EvalKind::weighted;
  throw ConfigError("mode", "unknown evaluation mode '" + name + "'");
}

EvalMode EvalMode::naive(DomainLabel d) {
  EvalMode m;
  m.kind = EvalKind::naive;
  m.domain = std::move(d);
  return m;
}

EvalMode EvalMode::best_single() {
  EvalMode m;
  m.kind = EvalKind::best_single;
  return m;
}

EvalMode EvalMode::simple_average(MixtureLevel level) {
  EvalMode m;
  m.kind = EvalKind::simple_average;
  m.level = level;
  return m;
}

EvalMode EvalMode::weighted(DomainPrior prior, MixtureLevel level) {
  EvalMode m;
  m.kind = EvalKind::weighted;
  m.prior = std::move(prior);
  m.level = level;
  return m;
}

PerplexityResult evaluate_perplexity(const DemixModel& model, std::span<const SequenceBlock> blocks,
                                     const EvalMode& mode) {
  if (blocks.empty()) throw DataError("empty evaluation set");
  const std::vector<DomainLabel> conds = eval_conditions(model);

  if (mode.kind == EvalKind::naive) {
    if (!mode.domain) throw std::invalid_argument("naive evaluation requires a domain");
    DomainLabel d = *mode.domain;
    if (model.config().variant == FfnVariant::dense) d = conds[0];
    return single_condition(condition_scores(model, blocks, conds[condition_position(conds, d)]));
  }

  if (mode.kind == EvalKind::best_single) {
    PerplexityResult best;
    std::vector<double> ppl;
    for (std::size_t j = 0; j < conds.size(); ++j) {
      PerplexityResult r = single_condition(condition_scores(model, blocks, conds[j]));
      ppl.push_back(r.perplexity);
      if (j == 0 || r.perplexity < best.perplexity) {
        best = std::move(r);
        best.best = j;
      }
    }
    best.per_condition = std::move(ppl);
    return best;
  }

  DomainPrior prior = mode.kind == EvalKind::simple_average ? DomainPrior::uniform(conds.size()) : mode.prior;
  check_prior_size(prior, conds.size());

  std::vector<std::vector<std::vector<double>>> scores;
  for (const auto& cond : conds) scores.push_back(condition_scores(model, blocks, cond));

  std::vector<BlockLog> logs;
  std::vector<double> evidence(conds.size());
  std::vector<double> terms(conds.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    BlockLog log;
    log.weights = prior.weights;
    for (std::size_t j = 0; j < conds.size(); ++j) evidence[j] = sum(scores[j][b]);
    if (mode.level == MixtureLevel::probability) {
      const std::size_t n_rows = scores[0][b].size();
      for (std::size_t k = 0; k < n_rows; ++k) {
        for (std::size_t j = 0; j < conds.size(); ++j) {
          terms[j] = prior.weights[j] > 0.0 ? std::log(prior.weights[j]) + scores[j][b][k] : kNegInf;
        }
        log.nll -= log_sum_exp(terms);
      }
      log.count = n_rows;
    } else {
      MixtureResult m = mixture_step(model, blocks[b], prior, MixtureLevel::hidden);
      log.nll = -m.loglik;
      log.count = m.count;
    }
    DomainPosterior post = domain_posterior(evidence, prior);
    log.posterior = post.weights;
    if (mode.kind == EvalKind::weighted) observe(prior, post);
    logs.push_back(std::move(log));
  }
  return finish(std::move(logs));
}

}  // namespace demix
