#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pesrs/core/tape.hpp"

namespace pesrs {

struct ParamGradResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  ///< at worst_index
  double numeric = 0.0;   ///< at worst_index
  bool passed = true;
};

struct GradReport {
  std::vector<ParamGradResult> params;
  double max_rel_error = 0.0;
  bool passed = true;
  std::string failure;  ///< first failure message, empty when passed

  std::vector<std::string> failed_names() const;
};

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-3;
  /// Denominator floor: rel = |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

using LossFn = std::function<Var(Tape<double>&)>;

/// Compares the tape gradient of `loss` against central differences
/// (f(p + eps) - f(p - eps)) / 2 eps for every element of every parameter.
/// `params` is perturbed in place and restored before returning.
GradReport grad_check(const LossFn& loss, ParamSet<double>& params,
                      const GradCheckOptions& options = {});

}  // namespace pesrs
