#include "pesrs/core/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace pesrs {

std::vector<std::string> GradReport::failed_names() const {
  std::vector<std::string> out;
  for (const auto& p : params)
    if (!p.passed) out.push_back(p.name);
  return out;
}

namespace {

double evaluate(const LossFn& loss, const ParamSet<double>& params) {
  Tape<double> tape(params);
  return tape.value(loss(tape))[0];
}

}  // namespace

GradReport grad_check(const LossFn& loss, ParamSet<double>& params,
                      const GradCheckOptions& options) {
  GradReport report;
  GradSet<double> grads(params);
  {
    Tape<double> tape(params, &grads);
    Var root = loss(tape);
    const double value = tape.value(root)[0];
    if (!std::isfinite(value)) {
      report.passed = false;
      report.failure = "non-finite loss at the base point";
      return report;
    }
    tape.backward(root);
  }

  for (std::size_t p = 0; p < params.size(); ++p) {
    ParamGradResult result;
    result.name = params.name(p);
    auto& values = params.value(p).data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + options.eps;
      const double up = evaluate(loss, params);
      values[i] = saved - options.eps;
      const double down = evaluate(loss, params);
      values[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        result.passed = false;
        result.max_rel_error = INFINITY;
        result.worst_index = i;
        if (report.failure.empty()) {
          report.failure = "non-finite loss while perturbing " + result.name;
        }
        break;
      }
      const double numeric = (up - down) / (2.0 * options.eps);
      const double analytic = grads[p][i];
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), options.floor});
      const double rel = std::abs(analytic - numeric) / denom;
      if (i == 0 || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_index = i;
        result.analytic = analytic;
        result.numeric = numeric;
      }
    }
    if (result.max_rel_error > options.tol) result.passed = false;
    if (!result.passed && report.failure.empty()) {
      report.failure = "gradient mismatch in " + result.name + " at element " +
                       std::to_string(result.worst_index) + ": analytic " +
                       std::to_string(result.analytic) + " vs numeric " +
                       std::to_string(result.numeric);
    }
    report.max_rel_error = std::max(report.max_rel_error, result.max_rel_error);
    report.passed = report.passed && result.passed;
    report.params.push_back(std::move(result));
  }
  return report;
}

}  // namespace pesrs
