#include <doctest.h>

#include "demix/error.hpp"
#include "demix/model/model.hpp"
#include "demix/model/transformer.hpp"
#include "support/oracles.hpp"

#include <cmath>
#include <filesystem>

using namespace demix;
using namespace demix::testing;

namespace {

TensorF random_hidden(std::size_t rows, std::size_t d, std::uint64_t seed) {
  RngStream rng(seed, "hidden");
  return random_tensor({rows, d}, rng).cast<float>();
}

}  // namespace

TEST_CASE("parameter naming and determinism") {
  auto m = DemixModel::init(tiny_config(2));
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t j = 0; j < 2; ++j) CHECK(m.parameters().contains(expert_param_name(l, j, "w1")));
  CHECK(expert_param_name(1, 0, "b2") == "layer1.expert0.b2");
  CHECK(m.vocab_size() == 260);
  CHECK(m.parameters().get("wte").dim(0) == 260);
  CHECK(m.serialize() == DemixModel::init(tiny_config(2)).serialize());
  CHECK(m.expert_of("layer1.expert1.w2") == std::optional<std::size_t>(1));
  CHECK_FALSE(m.expert_of("layer1.attn.wqkv").has_value());
}

TEST_CASE("dense and demix(n=1) share every initial draw") {
  auto demix1 = DemixModel::init(tiny_config(1));
  auto dense = DemixModel::init(tiny_config(1, FfnVariant::dense));
  CHECK(bitwise_equal(demix1.parameters(), dense.parameters()));
  // Shared parameters also agree with demix(n=3), and expert 0 matches the dense FFN.
  auto dense3 = DemixModel::init(tiny_config(3, FfnVariant::dense));
  auto wide = DemixModel::init(tiny_config(3));
  for (const auto& [name, t] : dense3.parameters()) CHECK(bitwise_equal(t, wide.parameters().get(name)));
}

TEST_CASE("count_params algebra and shape oracle") {
  ModelConfig c = tiny_config(8);
  c.n_layers = 2;
  c.d_model = 64;
  c.d_ff = 256;
  auto demix = count_params(c);
  auto dc = c;
  dc.variant = FfnVariant::dense;
  auto dense = count_params(dc);
  CHECK(demix.per_expert == per_expert_by_shapes(2, 64, 256));
  CHECK(demix.total == demix.shared + 8 * demix.per_expert);
  CHECK(dense.total == dense.shared + dense.per_expert);
  CHECK(demix.total - dense.total == 7 * demix.per_expert);
  CHECK(demix.total == DemixModel::init(c).parameters().element_count());

  auto c1 = tiny_config(1);
  auto d1 = c1;
  d1.variant = FfnVariant::dense;
  CHECK(count_params(c1).total == count_params(d1).total);
}

TEST_CASE("route_weights") {
  auto m = DemixModel::init(tiny_config(4));
  auto hard = route_weights(m, m.domains().label(2), std::nullopt, RoutingMode::hard);
  CHECK(hard.gates == std::vector<double>{0, 0, 1, 0});
  auto m2 = DemixModel::init(tiny_config(2));
  std::vector<double> half{0.5, 0.5};
  auto mix = route_weights(m2, std::nullopt, std::span<const double>(half), RoutingMode::mixture);
  CHECK(mix.gates == half);
  std::vector<double> off{0.5, 0.6};
  CHECK_THROWS_AS(route_weights(m2, std::nullopt, std::span<const double>(off), RoutingMode::mixture), DataError);

  m.set_active(2, false);
  try {
    route_weights(m, m.domains().label(2), std::nullopt, RoutingMode::hard);
    FAIL("expected expert disabled");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("expert disabled") != std::string::npos);
  }
  std::vector<double> three{0.2, 0.3, 0.5};
  auto expanded = route_weights(m, std::nullopt, std::span<const double>(three), RoutingMode::mixture);
  CHECK(expanded.gates == std::vector<double>{0.2, 0.3, 0, 0.5});

  auto dense = DemixModel::init(tiny_config(2, FfnVariant::dense));
  CHECK(route_weights(dense, dense.domains().label(1), std::nullopt, RoutingMode::hard).mode == RoutingMode::dense);
}

TEST_CASE("demix_ffn: one-hot, identical experts, brute-force mixture, linearity") {
  auto m = DemixModel::init(tiny_config(3));
  TensorF h = random_hidden(5, 16, 1);
  std::vector<TensorF> single;
  for (std::size_t j = 0; j < 3; ++j) single.push_back(demix_ffn(m, 0, h, RoutingWeights::hard(3, j)));

  // FFN_j evaluated independently of the routing code.
  for (std::size_t j = 0; j < 3; ++j) {
    const auto& P = m.parameters();
    auto w1 = P.get(expert_param_name(0, j, "w1")).matrix();
    auto b1 = P.get(expert_param_name(0, j, "b1")).vector();
    auto w2 = P.get(expert_param_name(0, j, "w2")).matrix();
    auto b2 = P.get(expert_param_name(0, j, "b2")).vector();
    for (std::size_t r = 0; r < 5; ++r) {
      Eigen::RowVectorXd a = h.matrix().row(r).cast<double>() * w1.cast<double>() + b1.cast<double>();
      for (auto& x : a) x = 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
      Eigen::RowVectorXd o = a * w2.cast<double>() + b2.cast<double>();
      for (std::size_t c = 0; c < 16; ++c) CHECK(single[j].at(r, c) == doctest::Approx(o[c]).epsilon(1e-4));
    }
  }

  RoutingWeights g{RoutingMode::mixture, {0.3, 0.7, 0.0}};
  TensorF mix = demix_ffn(m, 0, h, g);
  RoutingWeights g3{RoutingMode::mixture, {0.2, 0.5, 0.3}};
  TensorF mix3 = demix_ffn(m, 0, h, g3);
  for (std::size_t i = 0; i < mix.size(); ++i) {
    const double want = 0.3 * single[0][i] + 0.7 * single[1][i];
    CHECK(std::abs(mix[i] - want) <= 1e-5 * std::max(1.0, std::abs(want)));
    const double lin = 0.2 * single[0][i] + 0.5 * single[1][i] + 0.3 * single[2][i];
    CHECK(std::abs(mix3[i] - lin) <= 1e-5 * std::max(1.0, std::abs(lin)));
  }

  auto same = DemixModel::init(tiny_config(3));
  for (const char* leaf : {"w1", "b1", "w2", "b2"})
    for (std::size_t j = 1; j < 3; ++j)
      same.parameters().get(expert_param_name(0, j, leaf)) = same.parameters().get(expert_param_name(0, 0, leaf));
  TensorF base = demix_ffn(same, 0, h, RoutingWeights::hard(3, 0));
  TensorF avg = demix_ffn(same, 0, h, g3);
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(std::abs(base[i] - avg[i]) < 1e-6);
}

TEST_CASE("forward: shape, hard routing equals assembled dense model, demix(n=1) equals dense") {
  auto m = DemixModel::init(tiny_config(3));
  RngStream rng(2, "blocks");
  for (int trial = 0; trial < 5; ++trial) {
    auto blk = random_block(12, rng);
    for (std::size_t d = 0; d < 3; ++d) {
      TensorF got = forward(m, blk, route_weights(m, m.domains().label(d), std::nullopt, RoutingMode::hard));
      CHECK(got.shape() == Shape{12, 261});
      auto dense = dense_model_from(m, d);
      CHECK(bitwise_equal(got, forward(dense, blk, RoutingWeights::dense())));
    }
  }
  auto one = DemixModel::init(tiny_config(1));
  auto dense = DemixModel::init(tiny_config(1, FfnVariant::dense));
  auto blk = random_block(12, rng);
  CHECK(bitwise_equal(forward(one, blk, RoutingWeights::hard(1, 0)), forward(dense, blk, RoutingWeights::dense())));

  SequenceBlock wrong = blk;
  wrong.tokens.push_back(1);
  CHECK_THROWS(forward(m, wrong, RoutingWeights::hard(3, 0)));
  SequenceBlock oov = blk;
  oov.tokens[3] = 9999;
  CHECK_THROWS(forward(m, oov, RoutingWeights::hard(3, 0)));
}

TEST_CASE("batched forward matches per-block forward") {
  auto m = DemixModel::init(tiny_config(2));
  RngStream rng(3, "batch");
  auto a = random_block(12, rng), b = random_block(12, rng);
  auto r = RoutingWeights::hard(2, 1);
  std::vector<const SequenceBlock*> both{&a, &b};
  TensorF joint = forward(m, both, r);
  TensorF fa = forward(m, a, r), fb = forward(m, b, r);
  for (std::size_t i = 0; i < fa.size(); ++i) {
    CHECK(joint[i] == doctest::Approx(fa[i]).epsilon(1e-5));
    CHECK(joint[fa.size() + i] == doctest::Approx(fb[i]).epsilon(1e-5));
  }
}

TEST_CASE("causality: perturbing token t changes logits only at positions >= t") {
  auto m = DemixModel::init(tiny_config(2));
  RngStream rng(4, "causal");
  auto blk = random_block(12, rng);
  auto r = RoutingWeights::hard(2, 0);
  TensorF base = forward(m, blk, r);
  for (std::size_t t : {1, 5, 11}) {
    auto changed = blk;
    changed.tokens[t] = (changed.tokens[t] + 17) % 256;
    TensorF out = forward(m, changed, r);
    for (std::size_t row = 0; row < 12; ++row) {
      bool same = true;
      for (std::size_t c = 0; c < 260; ++c) same = same && out.at(row, c) == base.at(row, c);
      if (row < t) CHECK(same);
      else CHECK_FALSE(same);
    }
  }
}

TEST_CASE("expert isolation: hard(d) step leaves other experts without gradient") {
  auto m = DemixModel::init(tiny_config(3));
  auto params = m.parameters();
  RngStream rng(5, "iso");
  auto blk = random_block(12, rng);
  auto targets = block_targets(blk);
  Tape<float> tape;
  Var logits = transformer_logits(tape, params, m.config(), blk.tokens, 12, RoutingWeights::hard(3, 1));
  tape.backward(ops::cross_entropy_loss(tape, logits, targets.targets, targets.mask));
  for (const auto& [name, t] : params) {
    const TensorF* g = tape.param_grad(name);
    auto owner = m.expert_of(name);
    if (owner && *owner != 1) {
      bool zero = g == nullptr;
      if (g) {
        zero = true;
        for (float v : g->data()) zero = zero && v == 0.0f;
      }
      CHECK_MESSAGE(zero, name);
    } else if (name.find("wpe") == std::string::npos) {
      CHECK_MESSAGE(g != nullptr, name);
    }
  }
}

TEST_CASE("prepend_domain_token") {
  auto cfg = tiny_config(2, FfnVariant::domain_token);
  cfg.block_length = 4;
  auto m = DemixModel::init(cfg);
  SequenceBlock blk{{Vocabulary::kBos, 'a', 'b', 'c'}, 1};
  auto out = prepend_domain_token(m, blk, m.domains().label(1));
  CHECK(out.tokens == std::vector<int>{259, Vocabulary::kBos, 'a', 'b'});
  CHECK(out.score_from == 2);
  auto t = block_targets(out);
  CHECK(t.mask[0] == 0);
  CHECK(t.mask[1] == 1);
  CHECK(t.count == 2);

  auto other = prepend_domain_token(m, blk, m.domains().label(0));
  CHECK_FALSE(bitwise_equal(forward(m, out, RoutingWeights::dense()), forward(m, other, RoutingWeights::dense())));

  auto demix = DemixModel::init(tiny_config(2));
  CHECK_THROWS_AS(prepend_domain_token(demix, blk, demix.domains().label(0)), ConfigError);
}

TEST_CASE("append_expert, removal flags and checkpoint round trip") {
  auto m = DemixModel::init(tiny_config(2));
  auto before = m.parameters();
  m.append_expert("new", 1);
  CHECK(m.n_experts() == 3);
  CHECK(m.vocab_size() == 260);
  for (const auto& [name, t] : before) CHECK(bitwise_equal(t, m.parameters().get(name)));
  CHECK(bitwise_equal(m.parameters().get("layer0.expert2.w1"), m.parameters().get("layer0.expert1.w1")));

  m.set_active(0, false);
  CHECK(m.active_experts() == std::vector<std::size_t>{1, 2});
  CHECK(m.active_param_counts().total == m.parameters().element_count() - count_params(tiny_config(2)).per_expert);

  auto path = std::filesystem::temp_directory_path() / "demix_model_rt.ckpt";
  m.save(path);
  auto back = DemixModel::load(path);
  std::filesystem::remove(path);
  CHECK(back.serialize() == m.serialize());
  CHECK(back.checkpoint_id() == m.checkpoint_id());
  CHECK_FALSE(back.is_active(0));
  CHECK(back.domains().names() == std::vector<std::string>{"dom0", "dom1", "new"});
}

TEST_CASE("interleaved layers keep a shared FFN at even positions") {
  auto cfg = tiny_config(2);
  cfg.interleave = true;
  auto m = DemixModel::init(cfg);
  CHECK_FALSE(m.expert_of("layer0.expert0.w1").has_value());
  CHECK(m.expert_of("layer1.expert1.w1") == std::optional<std::size_t>(1));
  CHECK_FALSE(m.parameters().contains("layer0.expert1.w1"));
}

TEST_CASE("config validation names the field") {
  auto c = tiny_config(2);
  c.n_heads = 0;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "n_heads");
  }
}
