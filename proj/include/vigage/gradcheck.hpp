// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "vigage/tape.hpp"

namespace vigage {

struct NamedTensor {
  std::string name;
  Tensor* tensor = nullptr;
};

/// Builds a scalar objective on the given tape, binding parameters with
/// `tape.param`. Must be deterministic.
using TapeObjective = std::function<Var(Tape&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares tape gradients against central differences for every scalar of
/// every listed parameter. The error for one scalar is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
/// Throws OracleError if the objective turns non-finite.
GradCheckReport grad_check(const TapeObjective& objective, const std::vector<NamedTensor>& params,
                           double step = 1e-5);

}  // namespace vigage
