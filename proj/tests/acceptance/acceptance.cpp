// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria (0 = all pass).

#include "demix/adapt/adapt.hpp"
#include "demix/cli/report.hpp"
#include "demix/corpus/synth.hpp"
#include "demix/error.hpp"
#include "demix/inference/diagnostics.hpp"
#include "demix/inference/posterior.hpp"
#include "demix/model/transformer.hpp"
#include "demix/numerics/grad_check.hpp"
#include "demix/numerics/hash.hpp"
#include "demix/numerics/ops.hpp"
#include "demix/trainer/batching.hpp"
#include "demix/trainer/sync_plan.hpp"
#include "support/oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace demix;
using namespace demix::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void report(int id, const std::string& name, double budget_s, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (budget_s > 0 && secs > budget_s) {
    o.pass = false;
    o.detail += "; over runtime budget " + std::to_string(budget_s) + " s";
  }
  if (!o.pass) ++g_failures;
  std::printf("%s [%d] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Criteria 1-4: structural and numerical oracles.

Outcome hard_routing_equivalence() {
  ModelConfig c;
  c.n_layers = 4;
  c.n_heads = 4;
  c.d_model = 128;
  c.d_ff = 512;
  c.block_length = 64;
  c.variant = FfnVariant::demix;
  c.domains = {"d0", "d1", "d2", "d3"};
  c.seed = 101;
  DemixModel model = DemixModel::init(c);
  RngStream rng(102, "blocks");
  std::vector<SequenceBlock> blocks;
  for (int i = 0; i < 50; ++i) blocks.push_back(random_block(c.block_length, rng));
  std::size_t compared = 0;
  for (std::size_t d = 0; d < 4; ++d) {
    DemixModel dense = dense_model_from(model, d);
    for (const auto& b : blocks) {
      if (!bitwise_equal(forward(model, b, RoutingWeights::hard(4, d)), forward(dense, b, RoutingWeights::dense()))) {
        return {false, "mismatch for domain " + std::to_string(d)};
      }
      ++compared;
    }
  }
  return {true, std::to_string(compared) + " (domain, block) pairs bitwise equal"};
}

template <typename T>
Var block_probe(Tape<T>& t, const ParameterSet<T>& p, const ModelConfig& c, const Tensor<T>& r,
                const RoutingWeights& mix, bool ffn_only) {
  Var x = t.parameter("x", p.get("x"));
  Var h = ffn_only ? ffn_layer(t, p, c, 0, x, mix) : transformer_block(t, p, c, 0, x, r.shape()[0] / 2, mix);
  return ops::dot_with(t, h, r);
}

Outcome gradient_correctness() {
  ModelConfig c = tiny_config(2);
  c.n_layers = 1;
  c.block_length = 5;
  DemixModel model = DemixModel::init(c);
  RngStream rng(201, "inputs");
  const TensorD r = random_tensor({2 * c.block_length, c.d_model}, rng);
  const Tensor<long double> r_ext = r.cast<long double>();
  const RoutingWeights mix{RoutingMode::mixture, {0.3, 0.7}};

  // The layer's parameters as initialised, plus a random input.
  ParameterSet<double> block;
  for (const auto& [name, t] : model.parameters()) {
    if (name.rfind("layer0.", 0) == 0) block.add(name, t.cast<double>());
  }
  block.add("x", random_tensor({2 * c.block_length, c.d_model}, rng));
  ParameterSet<double> ffn;
  for (const auto& [name, t] : block) {
    if (name.find(".expert") != std::string::npos || name == "x") ffn.add(name, t);
  }

  auto check = [&](ParameterSet<double>& params, bool ffn_only) {
    ScalarFunction f = [&](Tape<double>& t, const ParameterSet<double>& p) {
      return block_probe(t, p, c, r, mix, ffn_only);
    };
    ExtendedScalarFunction ext = [&](Tape<long double>& t, const ParameterSet<long double>& p) {
      return block_probe(t, p, c, r_ext, mix, ffn_only);
    };
    return std::pair{grad_check(f, ext, params), grad_check(f, params)};
  };
  auto [gb, gb_double] = check(block, false);
  auto [gf, gf_double] = check(ffn, true);

  const bool ok = gb.max_rel_error < 1e-6 && gf.max_rel_error < 1e-6 && gb.checked == block.element_count() &&
                  gf.checked == ffn.element_count();
  return {ok, "transformer block " + fmt(gb.max_rel_error, 3) + " over " + std::to_string(gb.checked) +
                  " elements (worst " + gb.worst_parameter + "), DEMix layer " + fmt(gf.max_rel_error, 3) + " over " +
                  std::to_string(gf.checked) + " elements; extended-precision differences (double-only differences: " +
                  fmt(gb_double.max_rel_error, 3) + " / " + fmt(gf_double.max_rel_error, 3) + ")"};
}

Outcome posterior_oracle() {
  RngStream rng(301, "posterior");
  double worst = 0.0, worst_shift = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    std::vector<double> evidence(n), prior(n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      evidence[j] = -5.0 * rng.uniform();
      prior[j] = rng.uniform_open0();
      z += prior[j];
    }
    for (double& p : prior) p /= z;
    const auto got = domain_posterior(evidence, DomainPrior::fixed(prior)).weights;
    const auto want = brute_posterior(evidence, prior);
    const double shift = 1000.0 * (rng.uniform() - 0.5);
    std::vector<double> shifted = evidence;
    for (double& e : shifted) e += shift;
    const auto got_shifted = domain_posterior(shifted, DomainPrior::fixed(prior)).weights;
    for (std::size_t j = 0; j < n; ++j) {
      worst = std::max(worst, static_cast<double>(std::fabs(static_cast<long double>(got[j]) - want[j])));
      worst_shift = std::max(worst_shift, std::fabs(got_shifted[j] - got[j]));
    }
  }
  return {worst < 1e-12 && worst_shift < 1e-12,
          "max |error| " + fmt(worst, 3) + ", max shift deviation " + fmt(worst_shift, 3) + " over 1000 cases"};
}

Outcome ewma_oracle() {
  RngStream rng(401, "ewma");
  double worst = 0.0;
  std::size_t cases = 0;
  for (double lambda : {0.1, 0.3, 0.5, 1.0}) {
    for (int trial = 0; trial < 250; ++trial) {
      const std::size_t n = 2 + rng.below(6);
      const std::size_t len = 1 + rng.below(50);
      std::vector<std::vector<double>> history(len, std::vector<double>(n));
      for (auto& p : history) {
        double z = 0.0;
        for (double& v : p) z += (v = rng.uniform_open0());
        for (double& v : p) v /= z;
      }
      const auto got = ewma_prior(history, lambda, n).weights;
      const auto want = direct_ewma(history, lambda);
      for (std::size_t j = 0; j < n; ++j) {
        worst = std::max(worst, static_cast<double>(std::fabs(static_cast<long double>(got[j]) - want[j])));
      }
      ++cases;
    }
  }
  return {worst < 1e-12, "max |error| " + fmt(worst, 3) + " over " + std::to_string(cases) + " histories"};
}

// ---------------------------------------------------------------------------
// Criteria 5-9, 12: one desk-scale experiment on synthetic Markov domains.

constexpr std::size_t kTokensPerDomain = 2'000'000;
constexpr std::size_t kBlockLength = 64;
constexpr double kDevFraction = 0.02;
constexpr double kTestFraction = 0.02;
constexpr std::size_t kEvalBlocks = 300;
const std::vector<std::string> kTrainDomains{"d0", "d1", "d2", "d3"};
const std::string kTarget = "d4";
const std::string kRemoved = "d0";

SynthSpec experiment_spec() {
  SynthSpec spec;
  spec.overlap = 0.2;
  for (const auto& name : kTrainDomains) {
    SynthDomainSpec d;
    d.name = name;
    d.alphabet_size = 20;
    d.concentration = 0.3;
    d.tokens = kTokensPerDomain;
    d.mean_doc_length = 400;
    spec.domains.push_back(d);
  }
  // Shares 8 of its 20 symbols with d3 (which starts at 48) and nothing else.
  SynthDomainSpec target;
  target.name = kTarget;
  target.alphabet_size = 20;
  target.concentration = 0.3;
  target.tokens = kTokensPerDomain / 4;
  target.mean_doc_length = 400;
  target.alphabet_offset = 60;
  spec.domains.push_back(target);
  return spec;
}

ModelConfig experiment_model() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_model = 64;
  c.d_ff = 256;
  c.block_length = kBlockLength;
  c.variant = FfnVariant::demix;
  c.domains = kTrainDomains;
  c.seed = 17;
  return c;
}

TrainConfig experiment_train() {
  TrainConfig t;
  t.total_steps = 1200;
  t.warmup_fraction = 0.08;
  t.peak_lr = 3e-3;
  t.batch_per_worker = 2;
  t.grad_accum = 2;
  t.workers = 4;
  t.batching = BatchMode::balanced;
  t.seed = 17;
  t.eval_interval = 300;
  t.eval_blocks = 64;
  return t;
}

struct Experiment {
  Corpus corpus;
  TrainData data;
  DemixModel model;
  TrainLog log;
  LabeledMatrix affinity;
  std::string checkpoint;
  std::vector<std::string> report_bytes;
};

std::vector<DomainBlocks> capped(const std::vector<DomainBlocks>& sets, std::size_t n) {
  std::vector<DomainBlocks> out;
  for (const auto& s : sets) {
    DomainBlocks c = s;
    if (c.blocks.size() > n) c.blocks.resize(n);
    out.push_back(std::move(c));
  }
  return out;
}

/// Corpus -> trained model -> affinity report, written to `dir`.
Experiment run_experiment(const fs::path& dir) {
  Corpus all = synth_corpus(experiment_spec(), 5);
  Experiment e{all.subset(kTrainDomains), {}, DemixModel::init(experiment_model()), {}, {}, {}, {}};
  e.data = make_train_data(e.corpus, kBlockLength, 1, kDevFraction, kTestFraction);
  e.log = train_run(e.model, e.data, experiment_train());
  e.affinity = affinity_matrix(e.model, capped(e.data.test, kEvalBlocks));
  e.checkpoint = e.model.serialize();

  EvalReport r;
  r.command = "acceptance";
  r.mode = "naive";
  r.config = {{"model", e.model.config()}, {"train", experiment_train()}};
  r.config_hash = hex64(fnv1a64(r.config.dump()));
  r.checkpoint_id = e.model.checkpoint_id();
  r.prior = nlohmann::json::object();
  r.tables["affinity"] = e.affinity;
  std::vector<fs::path> files = emit_report(r, ReportFormat::json, dir, "experiment");
  for (auto& p : emit_report(r, ReportFormat::csv, dir, "experiment")) files.push_back(p);
  fs::create_directories(dir);
  e.log.write(dir / "train_log.jsonl");
  files.push_back(dir / "train_log.jsonl");
  for (const auto& f : files) e.report_bytes.push_back(slurp(f));
  return e;
}

Outcome specialization(const Experiment& e) {
  const auto& a = e.affinity;
  bool ok = a.rows == a.cols && a.rows.size() == 4;
  double min_off = INFINITY;
  std::string argmin_note;
  for (std::size_t j = 0; ok && j < a.cols.size(); ++j) {
    std::size_t argmin = 0;
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
      if (a.values[i][j] < a.values[argmin][j]) argmin = i;
      if (i != j) {
        min_off = std::min(min_off, a.values[i][j]);
        ok = ok && a.values[i][j] > 1.0;
      }
    }
    ok = ok && argmin == j;
    if (argmin != j) argmin_note += " column " + a.cols[j] + " argmin " + a.rows[argmin];
  }
  std::string alpha;
  const auto spec = experiment_spec();
  double max_overlap = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = i + 1; k < 4; ++k) {
      auto ai = synth_alphabet(spec, i), ak = synth_alphabet(spec, k);
      std::size_t shared = 0;
      for (auto s : ai) shared += std::count(ak.begin(), ak.end(), s);
      max_overlap = std::max(max_overlap, static_cast<double>(shared) / ai.size());
    }
  }
  ok = ok && max_overlap <= 0.2;
  for (std::size_t d = 0; d < 4; ++d) ok = ok && e.corpus.token_count(d) >= 2'000'000;
  const double final_loss = e.log.steps.empty() ? NAN : e.log.steps.back().loss;
  return {ok, "min off-diagonal affinity " + fmt(min_off) + ", diagonal argmin in every column" +
                  (argmin_note.empty() ? "" : " except" + argmin_note) + "; max alphabet overlap " +
                  fmt(max_overlap, 2) + "; " + std::to_string(e.log.steps.size()) + " steps, final loss " +
                  fmt(final_loss)};
}

Outcome posterior_identification(const Experiment& e) {
  LabeledMatrix post = posterior_matrix(e.model, e.data.dev, 100, 0.3);
  bool ok = true;
  double lowest = 1.0;
  for (std::size_t i = 0; i < post.rows.size(); ++i) {
    for (std::size_t j = 0; j < post.cols.size(); ++j) {
      if (post.cols[j] != post.rows[i]) continue;
      lowest = std::min(lowest, post.values[i][j]);
      ok = ok && post.values[i][j] >= 0.8;
    }
  }
  for (const auto& d : e.data.dev) ok = ok && d.blocks.size() >= 100;
  return {ok && post.rows.size() == 4, "lowest true-domain posterior after 100 dev blocks " + fmt(lowest, 6)};
}

Outcome mixture_beats_naive(const Experiment& e) {
  const auto& dev = e.data.dev;
  const auto& test = e.data.test;
  const std::size_t n_dev = std::min(dev[0].blocks.size(), dev[1].blocks.size());
  const std::size_t n_test = std::min({test[0].blocks.size(), test[1].blocks.size(), kEvalBlocks / 2});
  const auto held = interleave_blocks(dev[0].blocks, dev[1].blocks, n_dev);
  const auto stream = interleave_blocks(test[0].blocks, test[1].blocks, n_test);
  const DomainPrior cached = cache_prior(e.model, held, 100, 0.3);
  const double weighted = evaluate_perplexity(e.model, stream, EvalMode::weighted(cached)).perplexity;
  const PerplexityResult best = evaluate_perplexity(e.model, stream, EvalMode::best_single());
  const double average = evaluate_perplexity(e.model, stream, EvalMode::simple_average()).perplexity;
  const bool ok = weighted <= best.perplexity * 1.01 && weighted <= average * 1.01;
  std::string w;
  for (double x : cached.weights) w += (w.empty() ? "" : "/") + fmt(x, 3);
  return {ok, "weighted(cached " + w + ") " + fmt(weighted) + " vs best single " + fmt(best.perplexity) +
                  " vs simple average " + fmt(average) + " on " + std::to_string(stream.size()) + " blocks"};
}

std::vector<double> naive_perplexities(const DemixModel& model, const std::vector<DomainBlocks>& sets) {
  std::vector<double> out;
  for (const auto& s : sets) {
    std::span<const SequenceBlock> b(s.blocks);
    if (b.size() > kEvalBlocks) b = b.first(kEvalBlocks);
    out.push_back(evaluate_perplexity(model, b, EvalMode::naive(model.domains().label(s.domain.name))).perplexity);
  }
  return out;
}

Outcome dapt_no_forgetting(const Experiment& e) {
  Corpus all = synth_corpus(experiment_spec(), 5);
  TrainData target = make_train_data(all.subset({kTarget}), kBlockLength, 1, kDevFraction, kTestFraction);
  DemixModel model = e.model;
  const auto before = naive_perplexities(model, e.data.test);

  const DomainLabel init = select_init_expert(model, target.dev[0].blocks, 100, 0.3);
  add_expert(model, kTarget, init);
  std::span<const SequenceBlock> test_blocks(target.test[0].blocks);
  if (test_blocks.size() > kEvalBlocks) test_blocks = test_blocks.first(kEvalBlocks);
  const DomainLabel label = model.domains().label(kTarget);
  const double copy_ppl = evaluate_perplexity(model, test_blocks, EvalMode::naive(label)).perplexity;

  AdaptConfig ac;
  ac.target = kTarget;
  ac.base_lr = 3e-3;
  ac.lr_divisor = 10.0;
  ac.train = experiment_train();
  ac.train.total_steps = 600;
  ac.train.eval_interval = 100;
  ac.train.patience = 3;
  ac.train.workers = 1;
  DaptResult res = dapt_run(model, target, ac);
  const double adapted_ppl = evaluate_perplexity(model, test_blocks, EvalMode::naive(label)).perplexity;

  const auto after = naive_perplexities(model, e.data.test);
  bool same = before.size() == 4;
  for (std::size_t d = 0; d < before.size(); ++d) {
    same = same && std::memcmp(&before[d], &after[d], sizeof(double)) == 0;
  }
  const double drop = 1.0 - adapted_ppl / copy_ppl;
  return {same && drop >= 0.2, std::string("original-domain naive perplexities ") +
                                   (same ? "bitwise identical" : "CHANGED") + "; init from " + init.name +
                                   "; target test perplexity " + fmt(copy_ppl) + " -> " + fmt(adapted_ppl) + " (" +
                                   fmt(100 * drop, 3) + "% lower) in " + std::to_string(res.log.steps.size()) +
                                   " steps"};
}

double weighted_on(const DemixModel& model, const DomainBlocks& dev, const DomainBlocks& test) {
  std::span<const SequenceBlock> b(test.blocks);
  if (b.size() > kEvalBlocks) b = b.first(kEvalBlocks);
  return evaluate_perplexity(model, b, EvalMode::weighted(cache_prior(model, dev.blocks, 100, 0.3))).perplexity;
}

Outcome removal_degradation(const Experiment& e) {
  const DomainBlocks* dev = nullptr;
  const DomainBlocks* test = nullptr;
  for (std::size_t d = 0; d < e.data.dev.size(); ++d) {
    if (e.data.dev[d].domain.name == kRemoved) {
      dev = &e.data.dev[d];
      test = &e.data.test[d];
    }
  }
  if (!dev) return {false, "removed domain missing"};

  const double plus = weighted_on(e.model, *dev, *test);
  DemixModel minus_expert = e.model;
  remove_expert(minus_expert, minus_expert.domains().label(kRemoved));
  const double minus = weighted_on(minus_expert, *dev, *test);

  Corpus all = synth_corpus(experiment_spec(), 5);
  MinusDomainResult md = minus_domain_baseline(all, experiment_model(), experiment_train(), kRemoved, kTarget, 1,
                                               kDevFraction, kTestFraction);
  const double minus_domain = weighted_on(md.model, *dev, *test);

  std::vector<DomainBlocks> remaining;
  for (const auto& s : e.data.test) {
    if (s.domain.name != kRemoved) remaining.push_back(s);
  }
  const auto a = naive_perplexities(e.model, remaining);
  const auto b = naive_perplexities(minus_expert, remaining);
  bool same = a.size() == 3;
  bool finite = true;
  for (std::size_t d = 0; d < a.size(); ++d) {
    same = same && std::memcmp(&a[d], &b[d], sizeof(double)) == 0;
    finite = finite && std::isfinite(a[d]);
  }
  std::vector<DomainBlocks> md_remaining;
  for (const auto& s : md.model.domains().names()) {
    for (const auto& t : e.data.test) {
      if (t.domain.name == s) md_remaining.push_back(t);
    }
  }
  for (double p : naive_perplexities(md.model, md_remaining)) finite = finite && std::isfinite(p);

  const bool ordered = plus < minus && (minus <= minus_domain || minus > minus_domain);
  return {ordered && same && finite, "weighted perplexity on " + kRemoved + ": +Expert " + fmt(plus) +
                                         ", -Expert " + fmt(minus) + ", -Domain " + fmt(minus_domain) +
                                         "; remaining-domain naive perplexities " +
                                         (same ? "bitwise identical" : "CHANGED")};
}

Outcome reproducibility(const Experiment& first, const fs::path& dir) {
  Experiment second = run_experiment(dir);
  const bool ckpt = first.checkpoint == second.checkpoint;
  bool reports = first.report_bytes.size() == second.report_bytes.size();
  for (std::size_t i = 0; reports && i < first.report_bytes.size(); ++i) {
    reports = first.report_bytes[i] == second.report_bytes[i];
  }
  return {ckpt && reports, std::string("checkpoints ") + (ckpt ? "bitwise identical" : "DIFFER") + " (" +
                               std::to_string(first.checkpoint.size()) + " bytes); " +
                               std::to_string(first.report_bytes.size()) + " report files " +
                               (reports ? "bytewise identical" : "DIFFER")};
}

// ---------------------------------------------------------------------------
// Criteria 10-11: plumbing.

Outcome sync_plan_structure() {
  std::vector<std::string> names;
  for (int k = 0; k < 8; ++k) names.push_back("d" + std::to_string(k));
  const DomainSet domains(names);
  bool ok = true;
  std::string detail;
  for (auto [workers, size] : {std::pair<std::size_t, std::size_t>{32, 4}, {64, 8}, {128, 16}}) {
    SyncPlan p = plan_sync_groups(workers, domains);
    bool good = p.groups.size() == 8 && p.group_size == size;
    std::size_t next = 0;
    for (const auto& g : p.groups) {
      good = good && g.size() == size;
      for (std::size_t w : g) good = good && w == next++;
    }
    ok = ok && good && next == workers;
    detail += std::to_string(workers) + "->" + std::to_string(p.groups.size()) + "x" + std::to_string(p.group_size) +
              " ";
  }
  std::size_t rejected = 0;
  for (std::size_t bad : {0, 12, 30, 33, 100}) {
    try {
      plan_sync_groups(bad, domains);
    } catch (const ConfigError&) {
      ++rejected;
    }
  }
  ok = ok && rejected == 5;
  return {ok, detail + "; rejected " + std::to_string(rejected) + "/5 non-divisible worker counts"};
}

std::vector<DomainBlocks> sized_domains(const std::vector<std::size_t>& counts) {
  std::vector<DomainBlocks> out;
  for (std::size_t d = 0; d < counts.size(); ++d) {
    DomainBlocks b;
    b.domain = {"d" + std::to_string(d), d};
    for (std::size_t i = 0; i < counts[d]; ++i) {
      SequenceBlock s;
      s.tokens.assign(16, 'a');
      s.tokens[0] = Vocabulary::kBos;
      s.domain = d;
      b.blocks.push_back(s);
    }
    out.push_back(std::move(b));
  }
  return out;
}

Outcome balanced_batching() {
  const std::vector<std::size_t> counts{50, 300, 150, 500};
  auto domains = sized_domains(counts);
  BatchStream balanced(domains, BatchMode::balanced, 11);
  std::vector<std::size_t> seen(4, 0);
  bool positional = true;
  for (int step = 0; step < 10000; ++step) {
    auto batches = balanced.next(1);
    for (std::size_t i = 0; i < batches.size(); ++i) {
      ++seen[batches[i].domain];
      positional = positional && batches[i].domain == i;
    }
  }
  bool ok = positional;
  for (auto s : seen) ok = ok && s == 10000;

  BatchStream prop(domains, BatchMode::proportional, 12);
  std::vector<std::size_t> drawn(4, 0);
  std::size_t total = 0;
  for (int step = 0; step < 10000; ++step) {
    for (const auto& b : prop.next(1)) {
      ++drawn[b.domain];
      ++total;
    }
  }
  const double all = 1000.0;
  double worst_abs = 0.0, worst_rel = 0.0;
  for (std::size_t d = 0; d < 4; ++d) {
    const double expected = counts[d] / all;
    const double got = static_cast<double>(drawn[d]) / total;
    worst_abs = std::max(worst_abs, std::fabs(got - expected));
    worst_rel = std::max(worst_rel, std::fabs(got - expected) / expected);
  }
  ok = ok && worst_abs <= 0.03;
  return {ok, "balanced counts " + std::to_string(seen[0]) + "/" + std::to_string(seen[1]) + "/" +
                  std::to_string(seen[2]) + "/" + std::to_string(seen[3]) + "; proportional max deviation " +
                  fmt(100 * worst_abs, 3) + " percentage points (" + fmt(100 * worst_rel, 3) + "% relative) over " +
                  std::to_string(total) + " draws"};
}

}  // namespace

int main() {
  report(1, "hard-routing equivalence", 60, hard_routing_equivalence);
  report(2, "gradient correctness", 120, gradient_correctness);
  report(3, "posterior oracle equivalence", 0, posterior_oracle);
  report(4, "EWMA oracle equivalence", 0, ewma_oracle);

  const fs::path root = fs::temp_directory_path() / "demix_acceptance";
  fs::remove_all(root);
  std::optional<Experiment> exp;
  report(5, "specialization", 1800, [&] {
    exp = run_experiment(root / "run1");
    return specialization(*exp);
  });
  auto with_experiment = [&](int id, const std::string& name, double budget, auto fn) {
    report(id, name, budget, [&]() -> Outcome {
      if (!exp) return {false, "criterion 5 experiment did not complete"};
      return fn(*exp);
    });
  };
  with_experiment(6, "posterior identification", 0, posterior_identification);
  with_experiment(7, "mixture beats naive on heterogeneous data", 0, mixture_beats_naive);
  with_experiment(8, "DEMix-DAPT no-forgetting", 600, dapt_no_forgetting);
  with_experiment(9, "removal degradation", 0, removal_degradation);
  report(10, "sync-plan structure", 0, sync_plan_structure);
  report(11, "balanced batching", 0, balanced_batching);
  with_experiment(12, "reproducibility", 0, [&](const Experiment& e) { return reproducibility(e, root / "run2"); });
  fs::remove_all(root);
  return g_failures;
}
