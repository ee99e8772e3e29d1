#pragma once

#include "demix/numerics/parameters.hpp"
#include "demix/numerics/tape.hpp"

#include <functional>
#include <string>

namespace demix {

/// Builds a scalar on the tape from the given parameters. The function must
/// register every parameter through Tape::parameter with its set name.
using ScalarFunction = std::function<Var(Tape<double>&, const ParameterSet<double>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares tape gradients element by element with a Richardson-extrapolated
/// five-point central difference (truncation error O(eps^6)). Relative error is
/// |a - b| / max(|a|, |b|, 1e-8).
GradCheckResult grad_check(const ScalarFunction& f, ParameterSet<double>& params, double eps = 1e-3);

using ExtendedScalarFunction = std::function<Var(Tape<long double>&, const ParameterSet<long double>&)>;

/// Same comparison against differences of `extended`, the same function
/// evaluated in extended precision. The reference then resolves gradients
/// far below double rounding of f, so entries near the 1e-8 floor (e.g. the
/// attention key bias, whose true gradient is exactly zero) are judged on
/// the tape's accuracy rather than on finite-difference noise.
GradCheckResult grad_check(const ScalarFunction& f, const ExtendedScalarFunction& extended,
                           ParameterSet<double>& params, double eps = 1e-3);

}  // namespace demix
