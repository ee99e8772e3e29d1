#pragma once

#include "demix/numerics/rng.hpp"
#include "demix/numerics/tape.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace demix::ops {

// Differentiable kernels recorded on a Tape. Matrices are row-major with one
// row per token position; a batch of B sequences of length T is stacked into
// B*T rows.

/// rows[i] = token_table[ids[i]] + position_table[i % seq_len]
template <typename T>
Var embed(Tape<T>& tape, Var token_table, Var position_table, std::span<const int> ids, std::size_t seq_len);

/// x * w + b, with x: N x in, w: in x out, b: out (b may be invalid).
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b);

/// x * w^T, with x: N x d, w: V x d.
template <typename T>
Var matmul_nt(Tape<T>& tape, Var x, Var w);

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gain, Var bias, double eps = 1e-5);

/// tanh-approximated GELU.
template <typename T>
Var gelu(Tape<T>& tape, Var x);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

/// sum_i weights[i] * xs[i]; all xs share one shape.
template <typename T>
Var weighted_sum(Tape<T>& tape, std::span<const Var> xs, std::span<const double> weights);

/// Multi-head causal self-attention over packed q|k|v columns (N x 3d);
/// returns N x d. Sequences of `seq_len` rows never attend to each other.
template <typename T>
Var causal_self_attention(Tape<T>& tape, Var qkv, std::size_t n_heads, std::size_t seq_len);

/// Inverted dropout; identity when rate == 0.
template <typename T>
Var dropout(Tape<T>& tape, Var x, double rate, RngStream& stream);

/// Mean token NLL over unmasked rows (scalar). `count` receives the number
/// of unmasked rows.
template <typename T>
Var cross_entropy_loss(Tape<T>& tape, Var logits, std::span<const int> targets,
                       std::span<const std::uint8_t> mask, std::size_t* count = nullptr);

/// Scalar sum(x .* r); used to reduce tensor outputs for gradient checks.
template <typename T>
Var dot_with(Tape<T>& tape, Var x, const Tensor<T>& r);

}  // namespace demix::ops
