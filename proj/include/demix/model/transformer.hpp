#pragma once

#include "demix/model/config.hpp"
#include "demix/model/routing.hpp"
#include "demix/numerics/ops.hpp"
#include "demix/numerics/parameters.hpp"

#include <functional>
#include <span>
#include <string>

namespace demix {

struct ForwardOptions {
  /// Enables dropout when the config rate is positive.
  bool training = false;
  RngStream* dropout_stream = nullptr;
  /// Parameters for which this predicate is false are recorded as frozen.
  std::function<bool(const std::string&)> trainable;
};

/// FFN position `layer`: sum over selected experts of gate * FFN_j(h). A
/// single selected expert with gate exactly 1 is returned unscaled.
template <typename T>
Var ffn_layer(Tape<T>& tape, const ParameterSet<T>& params, const ModelConfig& config, std::size_t layer, Var hidden,
              const RoutingWeights& routing, const ForwardOptions& options = {});

/// Pre-norm block: h + attn(ln1(h)), then + ffn(ln2(.)).
template <typename T>
Var transformer_block(Tape<T>& tape, const ParameterSet<T>& params, const ModelConfig& config, std::size_t layer,
                      Var hidden, std::size_t seq_len, const RoutingWeights& routing,
                      const ForwardOptions& options = {});

/// Token ids of B sequences of length seq_len, stacked; returns (B * seq_len) x V logits.
template <typename T>
Var transformer_logits(Tape<T>& tape, const ParameterSet<T>& params, const ModelConfig& config,
                       std::span<const int> tokens, std::size_t seq_len, const RoutingWeights& routing,
                       const ForwardOptions& options = {});

}  // namespace demix
