#pragma once

#include <string>

#include "csdn/graph.hpp"
#include "csdn/parameter.hpp"

namespace csdn {

inline Var bind(Graph& g, ParamSet& ps, std::size_t index) { return g.parameter(ps[index]); }

// Affine map x * W + b with W stored [in x out].
struct LinearLayer {
  std::size_t weight = 0;
  std::size_t bias = 0;

  enum class Init { uniform, zero };
  static LinearLayer create(ParamSet& ps, const std::string& name, std::size_t in, std::size_t out,
                            Rng& rng, Init init = Init::uniform);

  Var operator()(Graph& g, ParamSet& ps, Var x) const;
};

struct LayerNormLayer {
  std::size_t gamma = 0;
  std::size_t beta = 0;

  static LayerNormLayer create(ParamSet& ps, const std::string& name, std::size_t width);
  Var operator()(Graph& g, ParamSet& ps, Var x) const;
};

// Two affine maps with a GELU in between.
struct FeedForward {
  LinearLayer hidden;
  LinearLayer out;

  static FeedForward create(ParamSet& ps, const std::string& name, std::size_t in, std::size_t width,
                            std::size_t out, Rng& rng, LinearLayer::Init out_init = LinearLayer::Init::uniform);
  Var operator()(Graph& g, ParamSet& ps, Var x) const;
};

}  // namespace csdn
