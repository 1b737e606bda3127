#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lst/autodiff.hpp"

namespace lst {

struct GradCheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-4;
  /// Entry-wise differences below this are counted as exact.
  double abs_floor = 1e-6;
};

struct ParamGradError {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamGradError> params;
  double max_rel_error = 0.0;
  bool passed = true;
};

/// Builds a 1x1 loss on the given tape from leaves holding the parameters.
using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Compares tape gradients of f against central differences at every entry
/// of every parameter.
GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Matrix>& params,
                           const std::vector<std::string>& names = {}, const GradCheckOptions& opts = {});

}  // namespace lst
