#include "demix/trainer/optimizer.hpp"

#include "demix/error.hpp"

#include <cmath>

namespace demix {

double global_grad_norm(const ParameterSet<float>& grads) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (float x : g.data()) {
      if (!std::isfinite(x)) throw Error("non-finite gradient in '" + name + "'");
      sq += static_cast<double>(x) * static_cast<double>(x);
    }
  }
  return std::sqrt(sq);
}

double clip_gradients(ParameterSet<float>& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip_norm", "must be positive");
  const double norm = global_grad_norm(grads);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& [_, g] : grads) {
      for (float& x : g.storage()) x = static_cast<float>(static_cast<double>(x) * scale);
    }
  }
  return norm;
}

void adam_step(ParameterSet<float>& params, const ParameterSet<float>& grads, AdamState& state, double lr,
               const AdamHyper& hyper) {
  for (const auto& [name, g] : grads) {
    TensorF& p = params.get(name);
    if (!p.same_shape(g)) {
      throw std::invalid_argument("gradient of '" + name + "' has shape " + shape_string(g.shape()) +
                                  ", parameter has " + shape_string(p.shape()));
    }
    auto& slot = state.slots[name];
    if (slot.m.empty() && p.size() > 0) {
      slot.m = TensorF(p.shape(), 0.0f);
      slot.v = TensorF(p.shape(), 0.0f);
    }
    if (!slot.m.same_shape(p)) throw std::invalid_argument("optimizer state of '" + name + "' has the wrong shape");
    ++slot.step;
    const double t = static_cast<double>(slot.step);
    const double c1 = 1.0 - std::pow(hyper.beta1, t);
    const double c2 = 1.0 - std::pow(hyper.beta2, t);
    const double decay = 1.0 - lr * hyper.weight_decay;
    float* w = p.ptr();
    float* m = slot.m.ptr();
    float* v = slot.v.ptr();
    const float* gp = g.ptr();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = gp[i];
      const double mi = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
      const double vi = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = (mi / c1) / (std::sqrt(vi / c2) + hyper.eps);
      w[i] = static_cast<float>(w[i] * decay - lr * update);
    }
  }
}

}  // namespace demix
