#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "csdn/rng.hpp"
#include "csdn/tensor.hpp"

namespace csdn {

// A trainable tensor together with its AdamW state.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor first_moment;
  Tensor second_moment;
  std::uint64_t step_count = 0;

  Parameter(std::string n, Tensor v);
};

// Owns every parameter of a model. Indices are stable for the lifetime of the
// set; modules refer to their parameters by index.
class ParamSet {
 public:
  std::size_t add(std::string name, Tensor init);
  // Weight of shape [fan_in x fan_out] drawn uniformly from
  // [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  std::size_t add_uniform(std::string name, Shape shape, std::size_t fan_in, Rng& rng);

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }

  const Parameter* find(std::string_view name) const;
  Parameter* find(std::string_view name);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Total number of scalar weights.
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<Parameter> params_;
};

}  // namespace csdn
