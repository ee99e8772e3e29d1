#pragma once

#include "demix/model/model.hpp"

namespace demix {

struct FlopsEstimate {
  double dense = 0.0;
  double demix = 0.0;
  ParamCounts dense_params;
  ParamCounts demix_params;
};

/// Training FLOPs of one update over `batch_tokens` tokens: 3x the forward
/// multiply-accumulates (x2 FLOPs each) of the matmuls, counting attention
/// scores over the full block. Exactly one expert runs per token, so the
/// demix figure equals the dense one.
FlopsEstimate flops_estimate(const ModelConfig& config, std::size_t batch_tokens);

}  // namespace demix
