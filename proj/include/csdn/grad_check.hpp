#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "csdn/graph.hpp"
#include "csdn/parameter.hpp"

namespace csdn {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Builds a scalar loss on the given graph. Must be deterministic and bind the
// checked parameters through Graph::parameter(Parameter&).
using ScalarFn = std::function<Var(Graph&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

// Compares the analytic gradient of f against central differences
// (f(θ+ε) − f(θ−ε)) / 2ε at every coordinate of every parameter. The error
// of one coordinate is |analytic − numeric| / max(1, |numeric|).
// Parameter gradients are reset before and after the check.
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Parameter*>& params,
                           double epsilon = 1e-5);

}  // namespace csdn
