#include "csdn/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace csdn {

namespace {

double evaluate(const ScalarFn& f) {
  Graph g(false);
  const Tensor& out = g.value(f(g));
  if (out.size() != 1) throw DimensionError("grad_check: function is not scalar-valued");
  if (!std::isfinite(out[0])) throw EvaluationError("grad_check: function value is not finite");
  return out[0];
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Parameter*>& params, double epsilon) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3))
    throw std::invalid_argument("grad_check: epsilon must lie in [1e-7, 1e-3]");

  for (Parameter* p : params) p->value.drop_grad();
  {
    Graph g(true);
    Var loss = f(g);
    if (!std::isfinite(g.value(loss)[0])) throw EvaluationError("grad_check: function value is not finite");
    g.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) {
    auto gr = p->value.grad();
    analytic.emplace_back(gr.begin(), gr.end());
    p->value.drop_grad();
  }

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& v = params[pi]->value;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + epsilon;
      const double up = evaluate(f);
      v[i] = saved - epsilon;
      const double down = evaluate(f);
      v[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double err = std::abs(analytic[pi][i] - numeric) / std::max(1.0, std::abs(numeric));
      ++result.coordinates;
      if (result.worst_parameter.empty() || err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = params[pi]->name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace csdn
