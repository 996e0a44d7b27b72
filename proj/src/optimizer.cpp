#include "csdn/optimizer.hpp"

#include <cmath>

namespace csdn {

void adamw_step(ParamSet& params, const AdamWConfig& cfg) {
  for (const Parameter& p : params) {
    if (!p.value.has_grad()) continue;
    for (double gv : p.value.grad())
      if (!std::isfinite(gv)) throw TrainingDivergence("non-finite gradient in parameter '" + p.name + "'");
  }
  for (Parameter& p : params) {
    ++p.step_count;
    const double t = static_cast<double>(p.step_count);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    const bool has = p.value.has_grad();
    double* v = p.value.data();
    double* m1 = p.first_moment.data();
    double* m2 = p.second_moment.data();
    const double* gr = has ? p.value.grad().data() : nullptr;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = has ? gr[i] : 0.0;
      m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * gi;
      m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m1[i] / c1;
      const double vhat = m2[i] / c2;
      v[i] = v[i] - cfg.lr * cfg.weight_decay * v[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double clip_grad_norm(ParamSet& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter& p : params)
    if (p.value.has_grad())
      for (double gv : p.value.grad()) sq += gv * gv;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Parameter& p : params)
      if (p.value.has_grad())
        for (double& gv : p.value.grad()) gv *= s;
  }
  return norm;
}

}  // namespace csdn
