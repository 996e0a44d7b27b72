#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "csdn/attention.hpp"
#include "csdn/layers.hpp"

namespace csdn {

enum class Branch { self, neighbor, block, deformable };
enum class TopologyMode { stacked, gated };

char branch_symbol(Branch b);

// Branch composition of a decoder layer: "s-d" stacks self-attention then
// deformable attention, "n+b+d" runs neighbor, block and deformable
// attention in parallel and fuses them with the gate.
struct Topology {
  TopologyMode mode = TopologyMode::gated;
  std::vector<Branch> branches;

  static Topology parse(std::string_view text);
  std::string str() const;
  bool has(Branch b) const;
  bool operator==(const Topology&) const = default;
};

// The seven configurations of the attention ablation, in table order.
const std::vector<std::string>& ablation_topologies();

struct HeadConfig {
  std::size_t num_layers = 4;
  std::size_t num_queries = 100;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t classes = 8;
  Topology topology = Topology::parse("n+b+d");
  bool position_encoding = true;
  std::size_t deform_heads = 8;
  std::size_t deform_points = 4;
  std::size_t pyramid_levels = 3;
  // 0 selects 4 * embed_dim.
  std::size_t ffn_hidden = 0;

  std::size_t ffn_width() const { return ffn_hidden ? ffn_hidden : 4 * embed_dim; }
  void validate() const;
};

struct LayerParams {
  std::optional<AttentionParams> self;
  std::optional<AttentionParams> neighbor;
  std::optional<AttentionParams> block;
  std::optional<DeformableParams> deformable;
  std::optional<GateParams> gate;
  // Gated: one norm after fusion. Stacked: one norm per branch, in order.
  std::vector<LayerNormLayer> attention_norms;
  FeedForward ffn;
  LayerNormLayer ffn_norm;
  FeedForward refine;  // d -> d -> 4, last map zero-initialized
};

// All parameters of a detection head plus their layout.
struct HeadModel {
  HeadConfig config;
  ParamSet params;
  std::size_t query_embeddings = 0;  // [N x d]
  std::size_t query_boxes = 0;       // [N x 4], inverse-sigmoid box logits
  LinearLayer classifier;            // shared across layers
  std::vector<LayerParams> layers;

  static HeadModel create(const HeadConfig& config, std::uint64_t seed);
  // Scalar weight count of one decoder layer.
  std::size_t layer_parameter_count(std::size_t layer = 0) const;
};

struct LayerPrediction {
  Var logits;  // [N x C]
  Var boxes;   // [N x 4], sigmoid-decoded
  std::optional<Var> gates;
};

struct HeadOutput {
  std::vector<LayerPrediction> layers;
  const LayerPrediction& final() const { return layers.back(); }
};

// Learned embedding table and sigmoid-decoded learned box table.
QuerySet init_queries(Graph& g, HeadModel& model);

struct LayerResult {
  QuerySet queries;
  std::optional<Var> gates;
};

// One decoder layer: attention branches (stacked or gated), feed-forward and
// box refinement in inverse-sigmoid space.
LayerResult csdn_layer(Graph& g, HeadModel& model, std::size_t layer, const QuerySet& queries,
                       const FeaturePyramid& pyramid);

// Runs every layer, recomputing the neighbor mask from the current boxes
// before each one, and records class logits and boxes per layer. With zero
// layers the initial queries go straight to the prediction heads. Boxes are
// detached between layers.
HeadOutput head_forward(Graph& g, HeadModel& model, const FeaturePyramid& pyramid);

}  // namespace csdn
