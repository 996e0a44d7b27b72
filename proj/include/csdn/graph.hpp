#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <vector>

#include "csdn/parameter.hpp"
#include "csdn/tensor.hpp"

namespace csdn {

// Handle to a value recorded in a Graph.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const { return id != std::numeric_limits<std::uint32_t>::max(); }
};

// Records forward values and, for each operation, the explicit backward
// function that maps the output gradient onto its inputs. backward() replays
// those functions in reverse recording order; since every operation is
// recorded after its inputs this is a valid reverse topological order.
//
// Parameters are bound by reference: their gradients accumulate directly into
// Parameter::value's gradient slot, so several forward/backward passes over
// one parameter set sum their gradients.
class Graph {
 public:
  using Backward = std::function<void(Graph&, Var out)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor t);
  // Non-owning constant; `t` must outlive the graph.
  Var reference(const Tensor& t);
  // Owned leaf that receives a gradient.
  Var input(Tensor t);
  Var parameter(Parameter& p);
  // Read-only binding; never receives a gradient.
  Var parameter(const Parameter& p);

  const Tensor& value(Var v) const { return *nodes_[v.id].tensor; }
  std::span<double> grad(Var v) { return nodes_[v.id].tensor->grad(); }
  bool has_grad(Var v) const { return nodes_[v.id].tensor->has_grad(); }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Records an operation result. `backward` is only kept when gradients are
  // enabled and at least one input requires them (signalled by the caller via
  // `requires_grad`).
  Var emit(Tensor out, bool requires_grad, Backward backward);

  template <typename... Vars>
  bool any_requires_grad(Vars... vs) const {
    return grad_enabled_ && (requires_grad(vs) || ...);
  }

  // Seeds d(loss)/d(loss) = 1 and runs all recorded backward functions.
  void backward(Var loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor* tensor = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor* t, bool requires_grad, Backward backward);

  bool grad_enabled_;
  std::deque<Tensor> owned_;
  std::vector<Node> nodes_;
};

}  // namespace csdn
