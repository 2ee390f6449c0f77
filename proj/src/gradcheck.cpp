// SPDX-License-Identifier: Apache-2.0
#include "vigage/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "vigage/errors.hpp"

namespace vigage {

namespace {

double evaluate(const TapeObjective& objective, const std::string& name, std::size_t index) {
  Tape tape(Tape::Mode::inference);
  const double v = objective(tape).value()[0];
  if (!std::isfinite(v)) {
    throw OracleError("objective is non-finite while perturbing " + name + "[" + std::to_string(index) + "]");
  }
  return v;
}

}  // namespace

GradCheckReport grad_check(const TapeObjective& objective, const std::vector<NamedTensor>& params, double step) {
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Var out = objective(tape);
    if (!std::isfinite(out.value()[0])) throw OracleError("objective is non-finite at the base point");
    tape.backward(out);
    for (const auto& p : params) p.tensor->clear_grad();
    tape.accumulate_param_grads();
    // Parameters the objective never bound keep a zero gradient.
    for (const auto& p : params) {
      analytic.push_back(p.tensor->has_grad() ? p.tensor->grad() : std::vector<double>(p.tensor->numel(), 0.0));
      p.tensor->clear_grad();
    }
  }

  GradCheckReport report;
  report.max_rel_error = -1.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& t = *params[k].tensor;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double saved = t[i];
      t[i] = saved + step;
      const double plus = evaluate(objective, params[k].name, i);
      t[i] = saved - step;
      const double minus = evaluate(objective, params[k].name, i);
      t[i] = saved;

      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[k][i];
      const double err = std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
      ++report.checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = params[k].name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  if (report.max_rel_error < 0.0) report.max_rel_error = 0.0;
  return report;
}

}  // namespace vigage
