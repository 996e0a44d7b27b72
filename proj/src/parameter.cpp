#include "csdn/parameter.hpp"

#include <cmath>

namespace csdn {

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)),
      value(std::move(v)),
      first_moment(value.shape()),
      second_moment(value.shape()) {}

std::size_t ParamSet::add(std::string name, Tensor init) {
  params_.emplace_back(std::move(name), std::move(init));
  return params_.size() - 1;
}

std::size_t ParamSet::add_uniform(std::string name, Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return add(std::move(name), std::move(t));
}

const Parameter* ParamSet::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Parameter* ParamSet::find(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

}  // namespace csdn
