#include "lst/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace lst {
namespace {

double evaluate(const ScalarFunction& f, const std::vector<Matrix>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Matrix& p : params) leaves.push_back(tape.constant(p));
  return f(tape, leaves).value()(0, 0);
}

}  // namespace

GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Matrix>& params,
                           const std::vector<std::string>& names, const GradCheckOptions& opts) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Matrix& p : params) leaves.push_back(tape.leaf(p));
    tape.backward(f(tape, leaves));
    for (Var v : leaves) analytic.push_back(v.grad());
  }

  GradCheckReport report;
  std::vector<Matrix> probe = params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    ParamGradError entry;
    entry.name = k < names.size() ? names[k] : "param" + std::to_string(k);
    for (std::size_t e = 0; e < params[k].size(); ++e) {
      double& slot = probe[k].data()[e];
      const double original = slot;
      slot = original + opts.step;
      const double up = evaluate(f, probe);
      slot = original - opts.step;
      const double down = evaluate(f, probe);
      slot = original;

      const double numeric = (up - down) / (2.0 * opts.step);
      const double exact = analytic[k].data()[e];
      const double abs_err = std::abs(numeric - exact);
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      if (abs_err <= opts.abs_floor) continue;
      const double rel = abs_err / std::max(std::abs(numeric), std::abs(exact));
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
    }
    entry.passed = entry.max_rel_error <= opts.rel_tol;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.passed = report.passed && entry.passed;
    report.params.push_back(std::move(entry));
  }
  return report;
}

}  // namespace lst
