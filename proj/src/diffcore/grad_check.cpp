#include "mrd/diffcore/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "mrd/error.hpp"

namespace mrd {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Parameter>& params,
                           double h, double tol) {
  if (!(h >= 1e-7 && h <= 1e-3)) {
    throw ParameterError("grad_check: step must lie in [1e-7, 1e-3], got " + std::to_string(h));
  }
  for (auto& p : params) p.tensor.zero_grad();
  const Tensor loss = f();
  const double base = loss.item();
  loss.backward();

  GradCheckReport report;
  auto eval = [&] {
    NoGradGuard guard;
    return f().item();
  };
  report.deterministic = eval() == base;

  for (auto& p : params) {
    auto values = p.tensor.mutable_values();
    const auto grad = p.tensor.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = eval();
      values[i] = saved - h;
      const double down = eval();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(grad[i], numeric);
      ++report.entries_checked;
      if (err > report.max_rel_error || report.worst_parameter.empty()) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        report.worst_parameter = p.name;
        report.worst_index = i;
        report.worst_analytic = grad[i];
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.deterministic && report.max_rel_error < tol;
  return report;
}

}  // namespace mrd
