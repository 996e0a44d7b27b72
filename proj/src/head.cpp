#include "csdn/head.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "csdn/ops.hpp"

namespace csdn {

char branch_symbol(Branch b) {
  switch (b) {
    case Branch::self: return 's';
    case Branch::neighbor: return 'n';
    case Branch::block: return 'b';
    case Branch::deformable: return 'd';
  }
  return '?';
}

Topology Topology::parse(std::string_view text) {
  Topology t;
  std::optional<char> sep;
  bool expect_branch = true;
  for (char c : text) {
    if (c == ' ') continue;
    if (expect_branch) {
      Branch b;
      switch (c) {
        case 's': b = Branch::self; break;
        case 'n': b = Branch::neighbor; break;
        case 'b': b = Branch::block; break;
        case 'd': b = Branch::deformable; break;
        default: throw std::invalid_argument("topology '" + std::string(text) + "': unknown branch '" + c + "'");
      }
      if (t.has(b)) throw std::invalid_argument("topology '" + std::string(text) + "': repeated branch");
      t.branches.push_back(b);
      expect_branch = false;
    } else {
      if (c != '-' && c != '+') throw std::invalid_argument("topology '" + std::string(text) + "': expected '-' or '+'");
      if (sep && *sep != c) throw std::invalid_argument("topology '" + std::string(text) + "': mixes '-' and '+'");
      sep = c;
      expect_branch = true;
    }
  }
  if (t.branches.empty() || expect_branch) throw std::invalid_argument("topology '" + std::string(text) + "' is incomplete");
  t.mode = sep == '-' ? TopologyMode::stacked : TopologyMode::gated;
  if (t.mode == TopologyMode::gated && t.has(Branch::self) && t.has(Branch::neighbor))
    throw std::invalid_argument("topology '" + std::string(text) + "': self and neighbor share one gate slot");
  return t;
}

std::string Topology::str() const {
  std::string s;
  for (std::size_t i = 0; i < branches.size(); ++i) {
    if (i) s += mode == TopologyMode::stacked ? '-' : '+';
    s += branch_symbol(branches[i]);
  }
  return s;
}

bool Topology::has(Branch b) const {
  return std::find(branches.begin(), branches.end(), b) != branches.end();
}

const std::vector<std::string>& ablation_topologies() {
  static const std::vector<std::string> names{"s-d", "n-d", "b-d", "s+d", "b+d", "n+d", "n+b+d"};
  return names;
}

void HeadConfig::validate() const {
  if (num_queries == 0) throw std::invalid_argument("head: need at least one query");
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
    throw std::invalid_argument("head: embed_dim must be a positive multiple of heads");
  if (deform_heads == 0 || embed_dim % deform_heads != 0)
    throw std::invalid_argument("head: embed_dim must be a multiple of deform_heads");
  if (classes == 0) throw std::invalid_argument("head: need at least one class");
  if (deform_points == 0 || pyramid_levels == 0) throw std::invalid_argument("head: invalid deformable sampling");
  if (topology.branches.empty()) throw std::invalid_argument("head: empty topology");
}

HeadModel HeadModel::create(const HeadConfig& config, std::uint64_t seed) {
  config.validate();
  HeadModel m;
  m.config = config;
  Rng rng(seed);
  const std::size_t d = config.embed_dim, n = config.num_queries;
  ParamSet& ps = m.params;

  m.query_embeddings = ps.add_uniform("queries.embedding", {n, d}, d, rng);
  // Box table starts as a grid of overlapping boxes covering the image.
  Tensor boxes({n, 4});
  const auto grid = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  auto logit = [](double p) { return std::log(p / (1.0 - p)); };
  const double size = std::min(0.9, 2.0 / static_cast<double>(grid));
  for (std::size_t i = 0; i < n; ++i) {
    const double gx = (static_cast<double>(i % grid) + 0.5) / static_cast<double>(grid);
    const double gy = (static_cast<double>(i / grid) + 0.5) / static_cast<double>(grid);
    boxes.at(i, 0) = logit(gx);
    boxes.at(i, 1) = logit(gy);
    boxes.at(i, 2) = logit(size);
    boxes.at(i, 3) = logit(size);
  }
  m.query_boxes = ps.add("queries.boxes", std::move(boxes));

  m.classifier = LinearLayer::create(ps, "classifier", d, config.classes, rng);
  // Focal-loss prior: initial foreground probability 0.01.
  for (double& b : ps[m.classifier.bias].value.values()) b = -std::log((1.0 - 0.01) / 0.01);

  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    LayerParams lp;
    for (Branch b : config.topology.branches) {
      switch (b) {
        case Branch::self: lp.self = AttentionParams::create(ps, prefix + ".self", d, config.heads, rng); break;
        case Branch::neighbor: lp.neighbor = AttentionParams::create(ps, prefix + ".neighbor", d, config.heads, rng); break;
        case Branch::block: lp.block = AttentionParams::create(ps, prefix + ".block", d, config.heads, rng); break;
        case Branch::deformable:
          lp.deformable = DeformableParams::create(ps, prefix + ".deformable", d, config.deform_heads,
                                                   config.pyramid_levels, config.deform_points, rng);
          break;
      }
    }
    if (config.topology.mode == TopologyMode::gated) {
      lp.attention_norms.push_back(LayerNormLayer::create(ps, prefix + ".fusion_norm", d));
      lp.gate = GateParams::create(ps, prefix + ".gate", d);
    } else {
      for (Branch b : config.topology.branches)
        lp.attention_norms.push_back(LayerNormLayer::create(ps, prefix + ".norm_" + branch_symbol(b), d));
    }
    lp.ffn = FeedForward::create(ps, prefix + ".ffn", d, config.ffn_width(), d, rng);
    lp.ffn_norm = LayerNormLayer::create(ps, prefix + ".ffn_norm", d);
    lp.refine = FeedForward::create(ps, prefix + ".refine", d, d, 4, rng, LinearLayer::Init::zero);
    m.layers.push_back(std::move(lp));
  }
  return m;
}

std::size_t HeadModel::layer_parameter_count(std::size_t layer) const {
  const std::string prefix = "layer" + std::to_string(layer) + ".";
  std::size_t n = 0;
  for (const Parameter& p : params)
    if (p.name.starts_with(prefix)) n += p.value.size();
  return n;
}

QuerySet init_queries(Graph& g, HeadModel& model) {
  return QuerySet{bind(g, model.params, model.query_embeddings),
                  sigmoid(g, bind(g, model.params, model.query_boxes))};
}

namespace {

Var run_branch(Graph& g, HeadModel& model, const LayerParams& lp, Branch b, const QuerySet& q,
               const FeaturePyramid& pyramid, const std::optional<NeighborMask>& mask) {
  ParamSet& ps = model.params;
  switch (b) {
    case Branch::self: return self_attention(g, ps, *lp.self, q.embeddings);
    case Branch::neighbor: return neighbor_attention(g, ps, *lp.neighbor, q, *mask);
    case Branch::block: return block_attention(g, ps, *lp.block, q, pyramid.top(), model.config.position_encoding);
    case Branch::deformable: return deformable_attention(g, ps, *lp.deformable, q, pyramid);
  }
  throw std::logic_error("unknown branch");
}

GateSlot slot_of(Branch b) {
  switch (b) {
    case Branch::block: return GateSlot::block;
    case Branch::deformable: return GateSlot::deformable;
    default: return GateSlot::neighbor;  // self-attention is the unmasked query-query branch
  }
}

}  // namespace

LayerResult csdn_layer(Graph& g, HeadModel& model, std::size_t layer, const QuerySet& queries,
                       const FeaturePyramid& pyramid) {
  const LayerParams& lp = model.layers.at(layer);
  const Topology& topo = model.config.topology;
  ParamSet& ps = model.params;

  std::optional<NeighborMask> mask;
  if (topo.has(Branch::neighbor)) mask = neighbor_mask(boxes_of(g, queries.boxes));

  LayerResult result;
  Var x = queries.embeddings;
  if (topo.mode == TopologyMode::gated) {
    std::array<std::optional<Var>, kGateSlots> outputs;
    for (Branch b : topo.branches)
      outputs[static_cast<std::size_t>(slot_of(b))] = run_branch(g, model, lp, b, queries, pyramid, mask);
    FusionResult fused = gated_fusion(g, ps, *lp.gate, x, outputs);
    x = lp.attention_norms[0](g, ps, add(g, x, fused.fused));
    result.gates = fused.gates;
  } else {
    for (std::size_t i = 0; i < topo.branches.size(); ++i) {
      QuerySet current{x, queries.boxes};
      Var out = run_branch(g, model, lp, topo.branches[i], current, pyramid, mask);
      x = lp.attention_norms[i](g, ps, add(g, x, out));
    }
  }
  x = lp.ffn_norm(g, ps, add(g, x, lp.ffn(g, ps, x)));
  Var delta = lp.refine(g, ps, x);
  Var boxes = sigmoid(g, add(g, inverse_sigmoid(g, queries.boxes), delta));
  result.queries = QuerySet{x, boxes};
  return result;
}

HeadOutput head_forward(Graph& g, HeadModel& model, const FeaturePyramid& pyramid) {
  pyramid.validate();
  if (pyramid.levels.size() != model.config.pyramid_levels)
    throw std::invalid_argument("head_forward: pyramid has " + std::to_string(pyramid.levels.size()) +
                                " levels, config expects " + std::to_string(model.config.pyramid_levels));
  if (pyramid.channels() != model.config.embed_dim)
    throw std::invalid_argument("head_forward: pyramid channels do not match embed_dim");

  HeadOutput out;
  QuerySet q = init_queries(g, model);
  if (model.config.num_layers == 0) {
    out.layers.push_back(LayerPrediction{model.classifier(g, model.params, q.embeddings), q.boxes, std::nullopt});
    return out;
  }
  for (std::size_t l = 0; l < model.config.num_layers; ++l) {
    LayerResult r = csdn_layer(g, model, l, q, pyramid);
    out.layers.push_back(LayerPrediction{model.classifier(g, model.params, r.queries.embeddings),
                                         r.queries.boxes, r.gates});
    q = QuerySet{r.queries.embeddings, g.constant(g.value(r.queries.boxes))};
  }
  return out;
}

}  // namespace csdn
