#include "csdn/layers.hpp"

#include "csdn/ops.hpp"

namespace csdn {

LinearLayer LinearLayer::create(ParamSet& ps, const std::string& name, std::size_t in, std::size_t out,
                                Rng& rng, Init init) {
  LinearLayer l;
  if (init == Init::uniform)
    l.weight = ps.add_uniform(name + ".weight", {in, out}, in, rng);
  else
    l.weight = ps.add(name + ".weight", Tensor({in, out}));
  l.bias = ps.add(name + ".bias", Tensor({out}));
  return l;
}

Var LinearLayer::operator()(Graph& g, ParamSet& ps, Var x) const {
  return linear(g, x, bind(g, ps, weight), bind(g, ps, bias));
}

LayerNormLayer LayerNormLayer::create(ParamSet& ps, const std::string& name, std::size_t width) {
  LayerNormLayer l;
  l.gamma = ps.add(name + ".gamma", Tensor({width}, 1.0));
  l.beta = ps.add(name + ".beta", Tensor({width}));
  return l;
}

Var LayerNormLayer::operator()(Graph& g, ParamSet& ps, Var x) const {
  return layer_norm(g, x, bind(g, ps, gamma), bind(g, ps, beta));
}

FeedForward FeedForward::create(ParamSet& ps, const std::string& name, std::size_t in, std::size_t width,
                                std::size_t out, Rng& rng, LinearLayer::Init out_init) {
  FeedForward f;
  f.hidden = LinearLayer::create(ps, name + ".hidden", in, width, rng);
  f.out = LinearLayer::create(ps, name + ".out", width, out, rng, out_init);
  return f;
}

Var FeedForward::operator()(Graph& g, ParamSet& ps, Var x) const {
  return out(g, ps, gelu(g, hidden(g, ps, x)));
}

}  // namespace csdn
