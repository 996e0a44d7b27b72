#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "csdn/geometry.hpp"
#include "csdn/graph.hpp"
#include "csdn/layers.hpp"

namespace csdn {

// One pyramid level. values is [height*width x channels], row-major over
// (y, x); pixel (x, y) covers normalized [x, x+1)/width x [y, y+1)/height.
struct FeatureMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t stride = 0;
  Tensor values;

  std::size_t channels() const { return values.cols(); }
};

// Levels ordered fine to coarse; the last level is the top (coarsest) map.
struct FeaturePyramid {
  std::vector<FeatureMap> levels;

  std::size_t channels() const { return levels.front().channels(); }
  const FeatureMap& top() const { return levels.back(); }
  // Throws std::invalid_argument when levels disagree on channels, strides
  // are not strictly increasing, or a level is empty.
  void validate() const;
};

// Object queries: embeddings [N x d] and boxes [N x 4] as (cx, cy, w, h).
struct QuerySet {
  Var embeddings;
  Var boxes;
};

std::vector<Box> boxes_of(const Graph& g, Var boxes);
Tensor boxes_tensor(std::span<const Box> boxes);

// ---------------------------------------------------------------------------
// Multi-head projections shared by the query-query and block branches.
struct AttentionParams {
  LinearLayer query;
  LinearLayer key;
  LinearLayer value;
  LinearLayer output;
  std::size_t heads = 1;

  static AttentionParams create(ParamSet& ps, const std::string& name, std::size_t width,
                                std::size_t heads, Rng& rng);
};

// Standard multi-head self-attention among queries; with a mask, logits of
// disallowed pairs are excluded before normalization.
Var self_attention(Graph& g, ParamSet& ps, const AttentionParams& p, Var x, const BoolMatrix* mask = nullptr);

// Self-attention restricted to each query's IoU>0 neighbor set.
Var neighbor_attention(Graph& g, ParamSet& ps, const AttentionParams& p, const QuerySet& q,
                       const NeighborMask& mask);

// 2-D sinusoidal encoding of a height x width grid, [height*width x channels].
// The first half of the channels encodes y, the second half x.
Tensor sine_position_encoding(std::size_t height, std::size_t width, std::size_t channels);

// Cross-attention from queries to every location of the top pyramid level.
// Keys optionally carry a sinusoidal position encoding; values never do.
Var block_attention(Graph& g, ParamSet& ps, const AttentionParams& p, const QuerySet& q,
                    const FeatureMap& top, bool position_encoding);

// ---------------------------------------------------------------------------
// Deformable sampling.

// Bilinear interpolation of `map` ([height x width x channels]) at pixel
// coordinates `location` = (x, y). Corners outside the grid contribute zero.
Var bilinear_sample(Graph& g, Var map, Var location);
std::vector<double> bilinear_sample(const Tensor& map, double x, double y);

struct DeformableParams {
  LinearLayer offsets;   // -> heads*levels*points*2
  LinearLayer weights;   // -> heads*levels*points
  LinearLayer value;
  LinearLayer output;
  std::size_t heads = 1;
  std::size_t levels = 1;
  std::size_t points = 4;

  static DeformableParams create(ParamSet& ps, const std::string& name, std::size_t width,
                                 std::size_t heads, std::size_t levels, std::size_t points, Rng& rng);
};

// Per query, head and level, K offsets (in units of half the box size) and K
// weight logits are predicted from the embedding. Samples are taken at
// center + offset * (w, h) / 2, weighted by a softmax over levels x points,
// value-projected per head and output-projected.
Var deformable_attention(Graph& g, ParamSet& ps, const DeformableParams& p, const QuerySet& q,
                         const FeaturePyramid& pyramid);

// Weighted sum of bilinear samples: out[i, h*d + c] =
// Σ_{l,k} weights[i, (h*L + l)*K + k] * sample_l(loc[i,h,l,k])[c]. Levels are
// [H_l*W_l x d] values with the given sizes. Exposed for testing.
Var deformable_aggregate(Graph& g, std::span<const Var> levels, std::span<const std::array<std::size_t, 2>> sizes,
                         Var boxes, Var offsets, Var weights, std::size_t heads, std::size_t points);

// ---------------------------------------------------------------------------
// Gated fusion.

enum class GateSlot : std::size_t { block = 0, neighbor = 1, deformable = 2 };
inline constexpr std::size_t kGateSlots = 3;

struct GateParams {
  LinearLayer gate;  // d -> 3, zero-initialized

  static GateParams create(ParamSet& ps, const std::string& name, std::size_t width);
};

struct FusionResult {
  Var fused;
  Var gates;  // [N x 3], columns (block, neighbor, deformable)
};

// Branch outputs by slot; a missing entry is an inactive branch. The gate
// logits come from the pre-attention query embeddings and are normalized
// over active slots only; inactive columns are exactly zero.
FusionResult gated_fusion(Graph& g, ParamSet& ps, const GateParams& p, Var query_embeddings,
                          const std::array<std::optional<Var>, kGateSlots>& outputs);

// Σ_m gates[:, m] * outputs[m] over present outputs.
Var fuse_with_gates(Graph& g, Var gates, const std::array<std::optional<Var>, kGateSlots>& outputs);

}  // namespace csdn
