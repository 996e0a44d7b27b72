#include "csdn/graph.hpp"

#include <cmath>
#include <stdexcept>

namespace csdn {

Var Graph::push(Tensor* t, bool requires_grad, Backward backward) {
  nodes_.push_back(Node{t, requires_grad, std::move(backward)});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::constant(Tensor t) {
  owned_.push_back(std::move(t));
  return push(&owned_.back(), false, nullptr);
}

Var Graph::reference(const Tensor& t) {
  // Never written: nodes without requires_grad receive no gradient.
  return push(const_cast<Tensor*>(&t), false, nullptr);
}

Var Graph::input(Tensor t) {
  owned_.push_back(std::move(t));
  return push(&owned_.back(), grad_enabled_, nullptr);
}

Var Graph::parameter(Parameter& p) {
  return push(&p.value, grad_enabled_, nullptr);
}

Var Graph::parameter(const Parameter& p) { return reference(p.value); }

Var Graph::emit(Tensor out, bool requires_grad, Backward backward) {
  owned_.push_back(std::move(out));
  const bool track = grad_enabled_ && requires_grad;
  return push(&owned_.back(), track, track ? std::move(backward) : nullptr);
}

void Graph::backward(Var loss) {
  if (!grad_enabled_) throw std::logic_error("backward on a graph without gradients");
  Tensor& l = *nodes_[loss.id].tensor;
  if (l.size() != 1) throw DimensionError("backward expects a scalar, got " + shape_string(l.shape()));
  if (!nodes_[loss.id].requires_grad) return;
  l.grad()[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && n.tensor->has_grad()) n.backward(*this, Var{static_cast<std::uint32_t>(i)});
  }
}

}  // namespace csdn
