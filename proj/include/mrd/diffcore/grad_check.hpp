#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mrd/diffcore/parameter.hpp"

namespace mrd {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
  // False when two evaluations at the same point disagreed; the finite
  // differences are then not trustworthy.
  bool deterministic = true;
  bool passed = false;
};

// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

// Compares backward() gradients of a scalar computation against central
// differences (f(theta + h) - f(theta - h)) / 2h on every parameter entry.
// Parameter values are restored on return. Grads of `params` are
// overwritten. h must lie in [1e-7, 1e-3].
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Parameter>& params,
                           double h, double tol);

}  // namespace mrd
