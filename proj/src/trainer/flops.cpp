#include "demix/trainer/flops.hpp"

namespace demix {

namespace {

double forward_macs_per_token(const ModelConfig& c) {
  const double d = static_cast<double>(c.d_model);
  const double ff = static_cast<double>(c.d_ff);
  const double L = static_cast<double>(c.block_length);
  const double per_layer = d * 3 * d + 2 * L * d + d * d + 2 * d * ff;
  return static_cast<double>(c.n_layers) * per_layer + d * static_cast<double>(c.effective_vocab_size());
}

}  // namespace

FlopsEstimate flops_estimate(const ModelConfig& config, std::size_t batch_tokens) {
  ModelConfig dense = config;
  dense.variant = FfnVariant::dense;
  ModelConfig demix = config;
  demix.variant = FfnVariant::demix;
  FlopsEstimate e;
  e.dense = 3.0 * 2.0 * forward_macs_per_token(dense) * static_cast<double>(batch_tokens);
  e.demix = 3.0 * 2.0 * forward_macs_per_token(demix) * static_cast<double>(batch_tokens);
  e.dense_params = count_params(dense);
  e.demix_params = count_params(demix);
  return e;
}

}  // namespace demix
