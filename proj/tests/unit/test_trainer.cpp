#include <doctest.h>

#include "demix/corpus/synth.hpp"
#include "demix/error.hpp"
#include "demix/inference/evaluate.hpp"
#include "demix/trainer/batching.hpp"
#include "demix/trainer/flops.hpp"
#include "demix/trainer/optimizer.hpp"
#include "demix/trainer/schedule.hpp"
#include "demix/trainer/sync_plan.hpp"
#include "demix/trainer/trainer.hpp"
#include "support/oracles.hpp"

#include <cmath>
#include <filesystem>
#include <set>

using namespace demix;
using namespace demix::testing;

namespace {

TrainData small_data(std::size_t n_domains, std::size_t tokens, std::size_t block_length, std::size_t shards = 1) {
  SynthSpec spec;
  for (std::size_t i = 0; i < n_domains; ++i)
    spec.domains.push_back({"dom" + std::to_string(i), 10, 0.2, tokens, 200});
  return make_train_data(synth_corpus(spec, 11), block_length, shards, 0.1, 0.1);
}

ModelConfig small_model(std::size_t n_domains, FfnVariant variant = FfnVariant::demix) {
  ModelConfig c = tiny_config(n_domains, variant);
  c.block_length = 32;
  return c;
}

TrainConfig quick(std::size_t steps) {
  TrainConfig t;
  t.total_steps = steps;
  t.grad_accum = 1;
  t.batch_per_worker = 2;
  t.seed = 5;
  return t;
}

// Drops PAD-carrying blocks so every block scores the same number of tokens.
void drop_partial(TrainData& d) {
  for (auto& db : d.train)
    std::erase_if(db.blocks, [](const SequenceBlock& b) {
      return std::find(b.tokens.begin(), b.tokens.end(), Vocabulary::kPad) != b.tokens.end();
    });
}

// Largest per-tensor relative L2 distance ||a - b|| / ||b||. Elementwise
// ratios are meaningless for entries whose true gradient is zero (key biases
// under the softmax shift invariance), where only float noise moves them.
double max_rel_diff(const ParameterSet<float>& a, const ParameterSet<float>& b) {
  double worst = 0;
  for (const auto& [name, t] : a) {
    const auto& u = b.get(name);
    double diff = 0, ref = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      diff += (double(t[i]) - double(u[i])) * (double(t[i]) - double(u[i]));
      ref += double(u[i]) * double(u[i]);
    }
    if (ref > 0) worst = std::max(worst, std::sqrt(diff / ref));
  }
  return worst;
}

// Parameter snapshots after every optimizer step.
std::vector<ParameterSet<float>> trajectory(DemixModel& m, const TrainData& data, const TrainConfig& cfg) {
  std::vector<ParameterSet<float>> out;
  TrainOptions opts;
  opts.on_step = [&](const StepRecord&) { out.push_back(m.parameters()); };
  train_run(m, data, cfg, opts);
  return out;
}

double max_trajectory_diff(const std::vector<ParameterSet<float>>& a, const std::vector<ParameterSet<float>>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, max_rel_diff(a[i], b[i]));
  return worst;
}

}  // namespace

TEST_CASE("lr schedule") {
  TrainConfig c;
  c.peak_lr = 3e-4;
  c.total_steps = 1000;
  c.warmup_fraction = 0.08;
  CHECK(warmup_steps(c) == 80);
  CHECK(lr_schedule(540, c) == doctest::Approx(1.5e-4).epsilon(1e-12));
  CHECK(lr_schedule(80, c) == 3e-4);
  CHECK(lr_schedule(1000, c) == 0.0);
  CHECK(lr_schedule(40, c) == doctest::Approx(1.5e-4));
  CHECK_THROWS(lr_schedule(1001, c));
  // Continuity at the boundary from both sides.
  CHECK(std::abs(lr_schedule(79, c) - 3e-4) < 3e-4 / 79.0);
  CHECK(std::abs(lr_schedule(81, c) - 3e-4) < 3e-4 / 900.0);
}

TEST_CASE("gradient clipping") {
  auto make = [](float a, float b) {
    ParameterSet<float> g;
    g.add("x", TensorF({2}, {a, b}));
    return g;
  };
  auto g = make(0.03f, 0.04f);
  CHECK(clip_gradients(g, 0.1) == doctest::Approx(0.05));
  CHECK(g.get("x")[0] == 0.03f);
  g = make(0.12f, 0.16f);
  CHECK(clip_gradients(g, 0.1) == doctest::Approx(0.2));
  CHECK(g.get("x")[0] == doctest::Approx(0.06));
  CHECK(global_grad_norm(g) == doctest::Approx(0.1).epsilon(1e-6));
  g = make(0, 0);
  CHECK(clip_gradients(g, 0.1) == 0.0);
  CHECK(g.get("x")[1] == 0.0f);
  g = make(std::nanf(""), 0);
  CHECK_THROWS_AS(clip_gradients(g, 0.1), Error);
}

TEST_CASE("adam step") {
  ParameterSet<float> p, g;
  p.add("w", TensorF({1}, {1.0f}));
  g.add("w", TensorF({1}, {1.0f}));
  AdamState s;
  AdamHyper h;
  h.weight_decay = 0;
  adam_step(p, g, s, 0.1, h);
  CHECK(p.get("w")[0] == doctest::Approx(0.9).epsilon(1e-6));

  ParameterSet<float> z, zg;
  z.add("w", TensorF({3}, {0.5f, -1.0f, 2.0f}));
  zg.add("w", TensorF({3}, 0.0f));
  AdamState zs;
  auto before = z;
  adam_step(z, zg, zs, 0.1, h);
  CHECK(bitwise_equal(z, before));

  ParameterSet<float> a = before, b = before;
  AdamState sa, sb;
  ParameterSet<float> gg;
  gg.add("w", TensorF({3}, {0.1f, 0.2f, -0.3f}));
  adam_step(a, gg, sa, 0.01, AdamHyper{});
  adam_step(b, gg, sb, 0.01, AdamHyper{});
  CHECK(bitwise_equal(a, b));

  // Parameters without a gradient are not decayed.
  ParameterSet<float> two;
  two.add("a", TensorF({1}, {1.0f}));
  two.add("b", TensorF({1}, {1.0f}));
  ParameterSet<float> only_a;
  only_a.add("a", TensorF({1}, {0.5f}));
  AdamState st;
  adam_step(two, only_a, st, 0.1, AdamHyper{});
  CHECK(two.get("b")[0] == 1.0f);
  CHECK(two.get("a")[0] != 1.0f);
}

TEST_CASE("balanced and proportional batching") {
  auto data = small_data(2, 8000, 32, 2);
  BatchStream s(data.train, BatchMode::balanced, 1);
  std::vector<std::size_t> seen(2, 0);
  for (int step = 0; step < 4; ++step) {
    auto batches = s.next(3);
    REQUIRE(batches.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(batches[i].domain == i);
      CHECK(batches[i].blocks.size() == 3);
      ++seen[batches[i].domain];
    }
  }
  CHECK(seen == std::vector<std::size_t>{4, 4});

  // Without replacement within an epoch of one shard.
  BatchStream e(data.train, BatchMode::balanced, 2);
  std::size_t shard_size = 0;
  for (const auto& b : data.train[0].blocks) shard_size += b.shard == 0;
  std::set<const SequenceBlock*> drawn;
  for (std::size_t i = 0; i < shard_size; ++i) drawn.insert(e.take(0, 0, 1).blocks[0]);
  CHECK(drawn.size() == shard_size);
  for (const auto* b : drawn) CHECK(b->shard == 0);

  // Same seed, same sequence.
  BatchStream x(data.train, BatchMode::balanced, 9), y(data.train, BatchMode::balanced, 9);
  for (int i = 0; i < 20; ++i) CHECK(x.take(1, 1, 2).blocks == y.take(1, 1, 2).blocks);

  // 90/10 token split, 1000 proportional draws.
  SynthSpec spec;
  spec.domains = {{"big", 10, 0.3, 90000, 300}, {"small", 10, 0.3, 10000, 300}};
  auto skew = make_train_data(synth_corpus(spec, 4), 32, 1, 0.0, 0.0);
  BatchStream p(skew.train, BatchMode::proportional, 3);
  std::size_t big = 0;
  for (int i = 0; i < 1000; ++i) big += p.sample_domain() == 0;
  const double want = 90000.0 / 100000.0;
  CHECK(std::abs(big / 1000.0 - want) < 0.03);
}

TEST_CASE("sync plans") {
  auto domains = [](std::size_t n) {
    std::vector<std::string> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back("d" + std::to_string(i));
    return DomainSet(v);
  };
  for (auto [n, size] : std::vector<std::pair<std::size_t, std::size_t>>{{32, 4}, {64, 8}, {128, 16}, {8, 1}}) {
    auto plan = plan_sync_groups(n, domains(8));
    CHECK(plan.groups.size() == 8);
    CHECK(plan.group_size == size);
    CHECK(plan.group_exchanges == size - 1);
    std::set<std::size_t> all;
    for (const auto& g : plan.groups) {
      CHECK(g.size() == size);
      all.insert(g.begin(), g.end());
    }
    CHECK(all.size() == n);
    for (std::size_t w = 0; w < n; ++w) CHECK(std::count(plan.groups[plan.group_of(w)].begin(), plan.groups[plan.group_of(w)].end(), w) == 1);
  }
  try {
    plan_sync_groups(30, domains(8));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "workers");
  }
  auto counts = count_params(tiny_config(8));
  auto plan = plan_sync_groups(16, domains(8), counts);
  CHECK(plan.group_sync_params == counts.per_expert);
  CHECK(plan.global_sync_params == counts.shared);
}

TEST_CASE("flops estimate") {
  ModelConfig c;
  c.domains = {"a", "b", "c", "d"};
  auto e = flops_estimate(c, 1000);
  CHECK(e.demix == e.dense);
  CHECK(flops_estimate(c, 2000).dense == 2 * e.dense);
  // Layer-by-layer multiply-accumulate enumeration for the desk config
  // (4 layers, d 128, ff 512, L 128, vocab 262).
  double macs = 0;
  for (int layer = 0; layer < 4; ++layer) {
    macs += 128.0 * 384;  // qkv projection
    macs += 128.0 * 128;  // q k^T over the block
    macs += 128.0 * 128;  // attention-weighted values
    macs += 128.0 * 128;  // output projection
    macs += 128.0 * 512;  // ffn up
    macs += 512.0 * 128;  // ffn down
  }
  macs += 128.0 * 262;  // tied output head
  CHECK(macs == 951040.0);
  CHECK(e.dense == 6.0 * 951040.0 * 1000);
  CHECK(e.demix_params.total == count_params(c).total);
}

TEST_CASE("train config validation") {
  TrainConfig t;
  t.batching = BatchMode::proportional;
  CHECK_THROWS_AS(t.validate(FfnVariant::demix, 2), ConfigError);
  t.batching = BatchMode::balanced;
  t.workers = 3;
  CHECK_THROWS_AS(t.validate(FfnVariant::demix, 2), ConfigError);
  t.workers = 4;
  CHECK_NOTHROW(t.validate(FfnVariant::demix, 2));
  nlohmann::json j = t;
  CHECK(j.get<TrainConfig>().workers == 4);
}

TEST_CASE("smoke: demix on two domains lowers validation loss") {
  auto data = small_data(2, 30000, 32);
  auto model = DemixModel::init(small_model(2));
  auto cfg = quick(200);
  cfg.eval_interval = 200;
  cfg.eval_blocks = 100000;
  auto init_ppl = [&](const DemixModel& m) {
    std::vector<double> out;
    for (std::size_t d = 0; d < 2; ++d)
      out.push_back(evaluate_perplexity(m, data.dev[d].blocks, EvalMode::naive(m.domains().label(d))).perplexity);
    return out;
  };
  auto before = init_ppl(model);
  auto log = train_run(model, data, cfg);
  auto after = init_ppl(model);
  REQUIRE(log.steps.size() == 200);
  CHECK(log.evals.size() == 2);
  for (std::size_t d = 0; d < 2; ++d) CHECK(after[d] < before[d]);
  CHECK(log.evals.back().perplexity[0] == doctest::Approx(after[0]).epsilon(1e-9));
}

TEST_CASE("simulated workers equal one worker with a scaled batch") {
  auto data = small_data(2, 12000, 32, 1);
  drop_partial(data);
  auto a = DemixModel::init(small_model(2));
  auto b = DemixModel::init(small_model(2));
  auto ca = quick(6), cb = quick(6);
  ca.workers = 4;
  ca.batch_per_worker = 2;
  cb.workers = 2;
  cb.batch_per_worker = 4;
  auto ta = trajectory(a, data, ca), tb = trajectory(b, data, cb);
  CHECK(max_trajectory_diff(ta, tb) < 1e-5);
  CHECK(max_rel_diff(a.parameters(), DemixModel::init(small_model(2)).parameters()) > 1e-2);

  auto da = DemixModel::init(small_model(1, FfnVariant::dense));
  auto db = DemixModel::init(small_model(1, FfnVariant::dense));
  auto one = small_data(1, 12000, 32, 1);
  drop_partial(one);
  ca.batching = cb.batching = BatchMode::balanced;
  ca.workers = 2;
  cb.workers = 1;
  CHECK(max_trajectory_diff(trajectory(da, one, ca), trajectory(db, one, cb)) < 1e-5);
}

TEST_CASE("expert isolation across a run") {
  auto two = small_data(2, 8000, 32);
  TrainData only0{{two.train[0]}, {two.dev[0]}, {two.test[0]}};
  auto model = DemixModel::init(small_model(2));
  const auto init = model.parameters();
  train_run(model, only0, quick(10));
  for (const auto& [name, t] : model.parameters()) {
    auto owner = model.expert_of(name);
    if (owner && *owner == 1) CHECK_MESSAGE(bitwise_equal(t, init.get(name)), name);
    if (owner && *owner == 0 && name.find("w1") != std::string::npos) CHECK_FALSE(bitwise_equal(t, init.get(name)));
  }
}

TEST_CASE("training is reproducible and checkpoints are written") {
  auto data = small_data(2, 8000, 32);
  auto dir = std::filesystem::temp_directory_path() / "demix_trainer_ckpt";
  std::filesystem::remove_all(dir);
  auto cfg = quick(4);
  cfg.checkpoint_interval = 2;
  cfg.checkpoint_dir = dir.string();
  auto a = DemixModel::init(small_model(2));
  auto b = DemixModel::init(small_model(2));
  auto la = train_run(a, data, cfg);
  cfg.checkpoint_dir.clear();
  auto lb = train_run(b, data, cfg);
  CHECK(a.serialize() == b.serialize());
  CHECK(la.to_jsonl() == lb.to_jsonl());
  CHECK(std::filesystem::exists(dir / "step-000002.ckpt"));
  CHECK(DemixModel::load(dir / "step-000004.ckpt").serialize() == a.serialize());
  std::filesystem::remove_all(dir);
}

TEST_CASE("divergence restores the last good parameters") {
  auto data = small_data(2, 8000, 32);
  auto model = DemixModel::init(small_model(2));
  auto cfg = quick(5);
  ParameterSet<float> after_step2;
  TrainOptions opts;
  opts.on_step = [&](const StepRecord& r) {
    if (r.step == 2) {
      after_step2 = model.parameters();
      // Poison a weight so the next forward pass is non-finite.
      model.parameters().get("ln_f.g")[0] = std::numeric_limits<float>::infinity();
    }
  };
  try {
    train_run(model, data, cfg, opts);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() == 3);
    CHECK(e.lr() == lr_schedule(3, cfg));
  }
  // Step 3 started from the poisoned state; the last finite-loss parameters
  // are those step 2 started from, which differ from the poisoned tensor.
  CHECK(std::isfinite(model.parameters().get("ln_f.g")[0]));
}

TEST_CASE("early stopping restores the best evaluation") {
  auto data = small_data(2, 8000, 32);
  auto model = DemixModel::init(small_model(2));
  const auto init = model.parameters();
  auto cfg = quick(40);
  cfg.eval_interval = 2;
  cfg.patience = 2;
  TrainOptions opts;
  // Nothing trains, so only the perturbation below moves validation perplexity.
  opts.trainable = [](const std::string&) { return false; };
  opts.on_step = [&](const StepRecord& r) {
    if (r.step == 3) {
      RngStream noise(1, "perturb");
      for (float& v : model.parameters().get("wte").storage()) v += static_cast<float>(0.5 * noise.normal());
    }
  };
  auto log = train_run(model, data, cfg, opts);
  CHECK(log.early_stopped);
  CHECK(log.steps.size() == 4);
  REQUIRE(log.evals.size() == 3);
  CHECK(log.evals[1].mean == log.evals[0].mean);
  CHECK(log.evals[2].mean > log.evals[0].mean);
  CHECK(log.best_step == std::optional<std::size_t>(0));
  CHECK(bitwise_equal(model.parameters(), init));
}

TEST_CASE("lr sweep picks the largest stable rate") {
  auto data = small_data(2, 8000, 32);
  auto cfg = quick(3);
  auto r = sweep_lr(small_model(2), data, cfg, {1e-3, 3e-3});
  CHECK(r.diverged == std::vector<bool>{false, false});
  REQUIRE(r.chosen);
  CHECK(*r.chosen == 3e-3);
  CHECK(default_lr_grid() == std::vector<double>{1e-3, 3e-3, 5e-3});
}
