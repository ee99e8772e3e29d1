#include "demix/numerics/softmax.hpp"

#include "demix/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace demix {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

double log_sum_exp(std::span<const double> values) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    if (std::isnan(v)) throw Error("log_sum_exp: NaN input");
    mx = std::max(mx, v);
  }
  if (std::isinf(mx)) return mx;
  double s = 0.0;
  for (double v : values) s += std::exp(v - mx);
  return mx + std::log(s);
}

std::vector<double> stable_log_softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  if (!std::isfinite(lse)) throw Error("stable_log_softmax: no finite logit");
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

template <typename T>
TensorD stable_log_softmax(const Tensor<T>& logits) {
  TensorD out(logits.shape());
  const std::size_t rows = logits.rows();
  const std::size_t cols = logits.cols();
  std::vector<double> row(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) row[c] = static_cast<double>(logits.at(r, c));
    const double lse = log_sum_exp(row);
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = row[c] - lse;
  }
  return out;
}

template <typename T>
CrossEntropy cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                           std::span<const std::uint8_t> mask) {
  const std::size_t rows = logits.rows();
  const std::size_t vocab = logits.cols();
  if (targets.size() != rows || mask.size() != rows) {
    throw Error("cross_entropy: targets/mask length must equal the number of logit rows");
  }
  CrossEntropy ce;
  std::vector<double> row(vocab);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    const int target = targets[r];
    if (target < 0 || static_cast<std::size_t>(target) >= vocab) {
      throw Error("cross_entropy: target id out of range");
    }
    for (std::size_t c = 0; c < vocab; ++c) row[c] = static_cast<double>(logits.at(r, c));
    ce.total_nll += log_sum_exp(row) - row[static_cast<std::size_t>(target)];
    ++ce.count;
  }
  if (ce.count == 0) throw Error("cross_entropy: all positions masked");
  ce.mean_nll = ce.total_nll / static_cast<double>(ce.count);
  return ce;
}

template <typename T>
Tensor<T> param_init(const Shape& shape, const InitSpec& spec, RngStream& stream) {
  switch (spec.scheme) {
    case InitScheme::zeros:
      return Tensor<T>(shape, T{0});
    case InitScheme::ones:
      return Tensor<T>(shape, T{1});
    case InitScheme::normal:
      break;
  }
  if (!(spec.sigma > 0.0) || !std::isfinite(spec.sigma)) {
    throw ConfigError("sigma", "normal initialisation requires sigma > 0");
  }
  Tensor<T> out(shape);
  for (auto& v : out.data()) v = static_cast<T>(spec.sigma * stream.normal());
  return out;
}

template TensorD stable_log_softmax<float>(const TensorF&);
template TensorD stable_log_softmax<double>(const TensorD&);
template CrossEntropy cross_entropy<float>(const TensorF&, std::span<const int>, std::span<const std::uint8_t>);
template CrossEntropy cross_entropy<double>(const TensorD&, std::span<const int>, std::span<const std::uint8_t>);
template TensorF param_init<float>(const Shape&, const InitSpec&, RngStream&);
template TensorD param_init<double>(const Shape&, const InitSpec&, RngStream&);

}  // namespace demix
