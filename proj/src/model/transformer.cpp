#include "demix/model/transformer.hpp"

#include "demix/model/model.hpp"

#include <stdexcept>

namespace demix {

namespace {

template <typename T>
Var param(Tape<T>& tape, const ParameterSet<T>& params, const std::string& name, const ForwardOptions& options) {
  bool trainable = !options.trainable || options.trainable(name);
  return tape.parameter(name, params.get(name), trainable);
}

template <typename T>
Var maybe_dropout(Tape<T>& tape, Var x, const ModelConfig& config, const ForwardOptions& options) {
  if (!options.training || config.dropout == 0.0) return x;
  if (!options.dropout_stream) throw std::logic_error("dropout requires a random stream");
  return ops::dropout(tape, x, config.dropout, *options.dropout_stream);
}

template <typename T>
Var expert_mlp(Tape<T>& tape, const ParameterSet<T>& params, std::size_t layer, std::size_t expert, Var hidden,
               const ForwardOptions& options) {
  auto name = [&](const char* leaf) { return expert_param_name(layer, expert, leaf); };
  Var u = ops::linear(tape, hidden, param(tape, params, name("w1"), options), param(tape, params, name("b1"), options));
  Var a = ops::gelu(tape, u);
  return ops::linear(tape, a, param(tape, params, name("w2"), options), param(tape, params, name("b2"), options));
}

}  // namespace

template <typename T>
Var ffn_layer(Tape<T>& tape, const ParameterSet<T>& params, const ModelConfig& config, std::size_t layer, Var hidden,
              const RoutingWeights& routing, const ForwardOptions& options) {
  if (!config.is_expert_layer(layer)) return expert_mlp(tape, params, layer, 0, hidden, options);
  if (routing.mode == RoutingMode::dense) throw std::invalid_argument("a DEMix layer needs hard or mixture routing");
  if (routing.gates.size() != config.n_experts()) {
    throw std::invalid_argument("routing covers " + std::to_string(routing.gates.size()) + " experts, layer has " +
                                std::to_string(config.n_experts()));
  }
  std::vector<std::size_t> selected = routing.selected();
  if (selected.empty()) throw std::invalid_argument("routing selects no expert");
  if (selected.size() == 1 && routing.gates[selected[0]] == 1.0) {
    return expert_mlp(tape, params, layer, selected[0], hidden, options);
  }
  std::vector<Var> outs;
  std::vector<double> weights;
  for (std::size_t j : selected) {
    outs.push_back(expert_mlp(tape, params, layer, j, hidden, options));
    weights.push_back(routing.gates[j]);
  }
  return ops::weighted_sum(tape, std::span<const Var>(outs), std::span<const double>(weights));
}

template <typename T>
Var transformer_block(Tape<T>& tape, const ParameterSet<T>& params, const ModelConfig& config, std::size_t layer,
                      Var hidden, std::size_t seq_len, const RoutingWeights& routing, const ForwardOptions& options) {
  const std::string p = "layer" + std::to_string(layer) + ".";
  Var x = ops::layer_norm(tape, hidden, param(tape, params, p + "ln1.g", options),
                          param(tape, params, p + "ln1.b", options));
  Var qkv = ops::linear(tape, x, param(tape, params, p + "attn.wqkv", options),
                        param(tape, params, p + "attn.bqkv", options));
  Var att = ops::causal_self_attention(tape, qkv, config.n_heads, seq_len);
  att = ops::linear(tape, att, param(tape, params, p + "attn.wo", options), param(tape, params, p + "attn.bo", options));
  hidden = ops::add(tape, hidden, maybe_dropout(tape, att, config, options));

  x = ops::layer_norm(tape, hidden, param(tape, params, p + "ln2.g", options),
                      param(tape, params, p + "ln2.b", options));
  Var f = ffn_layer(tape, params, config, layer, x, routing, options);
  return ops::add(tape, hidden, maybe_dropout(tape, f, config, options));
}

template <typename T>
Var transformer_logits(Tape<T>& tape, const ParameterSet<T>& params, const ModelConfig& config,
                       std::span<const int> tokens, std::size_t seq_len, const RoutingWeights& routing,
                       const ForwardOptions& options) {
  if (seq_len == 0 || tokens.size() % seq_len != 0) throw std::invalid_argument("token count is not a multiple of seq_len");
  if (seq_len > config.block_length) throw std::invalid_argument("sequence longer than the block length");
  const int vocab = static_cast<int>(config.effective_vocab_size());
  for (int id : tokens) {
    if (id < 0 || id >= vocab) {
      throw std::invalid_argument("vocabulary mismatch: token id " + std::to_string(id) + " outside [0, " +
                                  std::to_string(vocab) + ")");
    }
  }
  Var wte = param(tape, params, "wte", options);
  Var h = ops::embed(tape, wte, param(tape, params, "wpe", options), tokens, seq_len);
  h = maybe_dropout(tape, h, config, options);
  for (std::size_t layer = 0; layer < config.n_layers; ++layer) {
    h = transformer_block(tape, params, config, layer, h, seq_len, routing, options);
  }
  h = ops::layer_norm(tape, h, param(tape, params, "ln_f.g", options), param(tape, params, "ln_f.b", options));
  return ops::matmul_nt(tape, h, wte);
}

#define DEMIX_INSTANTIATE(T)                                                                                     \
  template Var ffn_layer<T>(Tape<T>&, const ParameterSet<T>&, const ModelConfig&, std::size_t, Var,             \
                            const RoutingWeights&, const ForwardOptions&);                                     \
  template Var transformer_block<T>(Tape<T>&, const ParameterSet<T>&, const ModelConfig&, std::size_t, Var,     \
                                    std::size_t, const RoutingWeights&, const ForwardOptions&);                \
  template Var transformer_logits<T>(Tape<T>&, const ParameterSet<T>&, const ModelConfig&, std::span<const int>, \
                                     std::size_t, const RoutingWeights&, const ForwardOptions&);

DEMIX_INSTANTIATE(float)
DEMIX_INSTANTIATE(double)
// Extended precision is only used as the finite-difference side of gradient checks.
DEMIX_INSTANTIATE(long double)
#undef DEMIX_INSTANTIATE

}  // namespace demix
