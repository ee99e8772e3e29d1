#pragma once

#include "demix/numerics/rng.hpp"
#include "demix/numerics/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace demix {

/// log-sum-exp of a finite vector; -inf entries contribute zero mass.
double log_sum_exp(std::span<const double> values);

/// Shifted log-softmax of one row. Throws on NaN.
std::vector<double> stable_log_softmax(std::span<const double> logits);

/// Row-wise log-softmax over the last axis, evaluated in double precision.
template <typename T>
TensorD stable_log_softmax(const Tensor<T>& logits);

struct CrossEntropy {
  double mean_nll = 0.0;   // nats
  double total_nll = 0.0;  // nats
  std::size_t count = 0;   // unmasked positions
};

/// Mean negative log-likelihood over unmasked rows; logits are T x V, row t
/// scores targets[t]. Accumulates in double.
template <typename T>
CrossEntropy cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                           std::span<const std::uint8_t> mask);

enum class InitScheme { normal, zeros, ones };

struct InitSpec {
  InitScheme scheme = InitScheme::normal;
  double sigma = 0.02;
};

template <typename T>
Tensor<T> param_init(const Shape& shape, const InitSpec& spec, RngStream& stream);

}  // namespace demix
