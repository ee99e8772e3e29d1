#include "demix/numerics/grad_check.hpp"

#include "demix/error.hpp"

#include <algorithm>
#include <cmath>

namespace demix {
namespace {

template <typename T, typename F>
T evaluate(const F& f, const ParameterSet<T>& params) {
  Tape<T> tape(false);
  Var out = f(tape, params);
  const auto& v = tape.value(out);
  if (v.size() != 1) throw Error("grad_check: function output is not scalar");
  return v[0];
}

/// Richardson-extrapolated five-point central difference of f along element i.
template <typename T, typename F>
T central_difference(const F& f, ParameterSet<T>& params, Tensor<T>& tensor, std::size_t i, T eps) {
  const T saved = tensor[i];
  auto at = [&](T offset) {
    tensor[i] = saved + offset;
    return evaluate(f, params);
  };
  const T p2 = at(2 * eps), p1 = at(eps), ph = at(eps / 2);
  const T mh = at(-eps / 2), m1 = at(-eps), m2 = at(-2 * eps);
  tensor[i] = saved;
  // Five-point differences at h and h/2 (differences first, so equal
  // samples give exactly zero); Richardson cancels the h^4 term.
  const T d_h = (8 * (p1 - m1) - (p2 - m2)) / (12 * eps);
  const T d_half = (8 * (ph - mh) - (p1 - m1)) / (6 * eps);
  return (16 * d_half - d_h) / 15;
}

template <typename Numeric>
GradCheckResult compare(const ScalarFunction& f, ParameterSet<double>& params, double eps, const Numeric& numeric_at) {
  if (!(eps > 0.0)) throw ConfigError("eps", "finite-difference step must be positive");
  Tape<double> tape(true);
  Var out = f(tape, params);
  if (tape.value(out).size() != 1) throw Error("grad_check: function output is not scalar");
  tape.backward(out);

  GradCheckResult result;
  for (auto& [name, tensor] : params) {
    const Tensor<double>* analytic = tape.param_grad(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double numeric = numeric_at(name, tensor, i);
      const double a = analytic ? (*analytic)[i] : 0.0;
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (result.worst_parameter.empty() || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_parameter = name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace

GradCheckResult grad_check(const ScalarFunction& f, ParameterSet<double>& params, double eps) {
  return compare(f, params, eps, [&](const std::string&, Tensor<double>& tensor, std::size_t i) {
    return central_difference(f, params, tensor, i, eps);
  });
}

GradCheckResult grad_check(const ScalarFunction& f, const ExtendedScalarFunction& extended,
                           ParameterSet<double>& params, double eps) {
  ParameterSet<long double> wide = params.cast<long double>();
  return compare(f, params, eps, [&](const std::string& name, Tensor<double>&, std::size_t i) {
    return static_cast<double>(central_difference(extended, wide, wide.get(name), i, static_cast<long double>(eps)));
  });
}

}  // namespace demix
