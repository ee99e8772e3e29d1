#pragma once

#include "demix/numerics/parameters.hpp"

#include <unordered_map>

namespace demix {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

/// Per-parameter moments and step counts, created on a parameter's first update.
struct AdamState {
  struct Slot {
    TensorF m;
    TensorF v;
    std::size_t step = 0;
  };
  std::unordered_map<std::string, Slot> slots;
};

/// Global L2 norm over every gradient, accumulated in double. Throws on a
/// non-finite entry.
double global_grad_norm(const ParameterSet<float>& grads);

/// Scales all gradients by max_norm / norm when norm > max_norm. Returns the
/// pre-clip norm.
double clip_gradients(ParameterSet<float>& grads, double max_norm);

/// Bias-corrected Adam with decoupled weight decay, applied only to the
/// parameters present in `grads`; everything else is left untouched.
void adam_step(ParameterSet<float>& params, const ParameterSet<float>& grads, AdamState& state, double lr,
               const AdamHyper& hyper);

}  // namespace demix
