#include <doctest.h>

#include "demix/adapt/adapt.hpp"
#include "demix/corpus/synth.hpp"
#include "demix/error.hpp"
#include "support/oracles.hpp"

using namespace demix;
using namespace demix::testing;

namespace {

SynthSpec three_domain_spec() {
  SynthSpec spec;
  spec.domains = {{"dom0", 10, 0.2, 12000, 200}, {"dom1", 10, 0.2, 12000, 200}, {"extra", 10, 0.2, 12000, 200}};
  return spec;
}

ModelConfig model_for(std::vector<std::string> domains) {
  ModelConfig c = tiny_config(0);
  c.domains = std::move(domains);
  c.block_length = 32;
  return c;
}

TrainConfig quick(std::size_t steps) {
  TrainConfig t;
  t.total_steps = steps;
  t.grad_accum = 1;
  t.batch_per_worker = 2;
  t.seed = 3;
  return t;
}

}  // namespace

TEST_CASE("select_init_expert") {
  auto same = DemixModel::init(tiny_config(3));
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t j = 1; j < 3; ++j)
      for (const char* leaf : {"w1", "b1", "w2", "b2"})
        same.parameters().get(expert_param_name(l, j, leaf)) = same.parameters().get(expert_param_name(l, 0, leaf));
  RngStream rng(1, "held");
  std::vector<SequenceBlock> held;
  for (int i = 0; i < 4; ++i) held.push_back(random_block(12, rng));
  CHECK(select_init_expert(same, held).index == 0);

  auto one = DemixModel::init(tiny_config(1));
  CHECK(select_init_expert(one, held).index == 0);

  // Expert 2 is pushed toward 'a' (see the cached-prior construction in the
  // inference tests); held-out text of all 'a' selects it.
  auto gap = DemixModel::init(tiny_config(3));
  auto& wte = gap.parameters().get("wte");
  for (std::size_t c = 0; c < 16; ++c) wte.at('a', c) = c == 0 ? 50.0f : 0.0f;
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t j = 0; j < 3; ++j) gap.parameters().get(expert_param_name(l, j, "b2"))[0] = j == 2 ? 100.0f : -100.0f;
  std::vector<SequenceBlock> as(3);
  for (auto& b : as) {
    b.tokens.assign(12, 'a');
    b.tokens[0] = Vocabulary::kBos;
  }
  CHECK(select_init_expert(gap, as).name == "dom2");
  CHECK_THROWS_AS(select_init_expert(gap, std::span<const SequenceBlock>{}), DataError);
}

TEST_CASE("add_expert copies the source and extends the model") {
  auto m = DemixModel::init(tiny_config(2));
  const auto before = m.parameters();
  const auto counts = m.active_param_counts();
  const std::string parent = m.checkpoint_id();
  auto label = add_expert(m, "new", m.domains().label(1));
  CHECK(label.index == 2);
  CHECK(m.active_param_counts().total == counts.total + count_params(m.config()).per_expert);
  for (const auto& [name, t] : before) CHECK(bitwise_equal(t, m.parameters().get(name)));

  RngStream rng(2, "blk");
  auto blk = random_block(12, rng);
  CHECK(bitwise_equal(forward(m, blk, RoutingWeights::hard(3, 2)), forward(m, blk, RoutingWeights::hard(3, 1))));
  std::vector<SequenceBlock> held{blk};
  CHECK(cache_prior(m, held).size() == 3);

  REQUIRE(m.lineage().contains("history"));
  CHECK(m.lineage()["history"][0]["parent"] == parent);
  CHECK(m.lineage()["history"][0]["init_from"] == "dom1");
  CHECK_THROWS_AS(add_expert(m, "dom0", m.domains().label(0)), ConfigError);
  CHECK(DemixModel::from_checkpoint(deserialize_checkpoint(m.serialize())).serialize() == m.serialize());
}

TEST_CASE("freeze mask covers exactly one expert") {
  auto m = DemixModel::init(tiny_config(3));
  auto mask = expert_freeze_mask(m, 1);
  for (const auto& [name, _] : m.parameters()) CHECK(mask.allows(name) == (m.expert_of(name) == std::optional<std::size_t>(1)));
}

TEST_CASE("dapt_run trains only the new expert and forgets nothing") {
  auto corpus = synth_corpus(three_domain_spec(), 5);
  auto base_corpus = corpus.subset({"dom0", "dom1"});
  auto data = make_train_data(base_corpus, 32, 1, 0.1, 0.1);
  auto m = DemixModel::init(model_for({"dom0", "dom1"}));
  train_run(m, data, quick(30));

  std::vector<double> naive_before;
  for (std::size_t d = 0; d < 2; ++d)
    naive_before.push_back(evaluate_perplexity(m, data.test[d].blocks, EvalMode::naive(m.domains().label(d))).perplexity);

  auto target_all = make_train_data(corpus.subset({"extra"}), 32, 1, 0.1, 0.1);
  auto init = select_init_expert(m, target_all.dev[0].blocks);
  add_expert(m, "extra", init);
  const auto snapshot = m.parameters();

  AdaptConfig ac;
  ac.target = "extra";
  ac.base_lr = 3e-2;
  ac.train = quick(40);
  auto result = dapt_run(m, target_all, ac);
  CHECK(result.ppl_after < result.ppl_before);
  CHECK(result.log.steps.size() == 40);

  const auto mask = expert_freeze_mask(m, 2);
  for (const auto& [name, t] : m.parameters()) {
    if (!mask.allows(name)) CHECK_MESSAGE(bitwise_equal(t, snapshot.get(name)), name);
  }
  for (std::size_t d = 0; d < 2; ++d) {
    CHECK(evaluate_perplexity(m, data.test[d].blocks, EvalMode::naive(m.domains().label(d))).perplexity ==
          naive_before[d]);
  }
  CHECK(m.lineage()["history"].back()["op"] == "dapt");

  AdaptConfig wrong = ac;
  wrong.target = "dom0";
  CHECK_THROWS_AS(dapt_run(m, target_all, wrong), DataError);
  AdaptConfig bad = ac;
  bad.lr_divisor = 0;
  CHECK_THROWS_AS(dapt_run(m, target_all, bad), ConfigError);
}

TEST_CASE("remove and restore experts") {
  auto m = DemixModel::init(tiny_config(2));
  remove_expert(m, m.domains().label(0));
  CHECK_FALSE(m.is_active(0));
  CHECK_THROWS_AS(remove_expert(m, m.domains().label(0)), DataError);
  CHECK_THROWS_AS(remove_expert(m, m.domains().label(1)), DataError);
  restore_expert(m, m.domains().label(0));
  CHECK(m.is_active(0));
  CHECK(m.active_experts().size() == 2);
}

TEST_CASE("replace_domain and the minus-domain baseline") {
  auto corpus = synth_corpus(three_domain_spec(), 5);
  auto swapped = replace_domain(corpus, "dom0", "extra");
  CHECK(swapped.domains().names() == std::vector<std::string>{"extra", "dom1"});
  CHECK(swapped.documents(0)[0].text == corpus.documents(2)[0].text);
  CHECK_THROWS_AS(replace_domain(corpus, "dom0", "dom0"), ConfigError);
  CHECK_THROWS_AS(replace_domain(corpus, "nope", "dom0"), DataError);

  auto base = corpus.subset({"dom0", "dom1", "extra"});
  auto result = minus_domain_baseline(base, model_for({"dom0", "dom1"}), quick(3), "dom0", "extra", 1, 0.1, 0.1);
  CHECK_FALSE(result.model.domains().contains("dom0"));
  CHECK(result.model.domains().size() == 2);
  CHECK(result.log.steps.size() == 3);
}
