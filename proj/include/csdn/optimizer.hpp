#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "csdn/parameter.hpp"

namespace csdn {

class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(const std::string& what, std::uint64_t step = 0)
      : std::runtime_error(what), step_(step) {}
  std::uint64_t step() const { return step_; }

 private:
  std::uint64_t step_;
};

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// One decoupled-weight-decay Adam step over every parameter, reading each
// gradient from the parameter's gradient slot (absent = zero).
// Throws TrainingDivergence naming the first parameter with a non-finite
// gradient; no parameter is modified in that case.
void adamw_step(ParamSet& params, const AdamWConfig& cfg);

// Scales every gradient so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(ParamSet& params, double max_norm);

}  // namespace csdn
