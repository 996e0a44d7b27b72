#pragma once

#include <span>
#include <vector>

#include "csdn/geometry.hpp"
#include "csdn/graph.hpp"
#include "csdn/head.hpp"
#include "csdn/matching.hpp"

namespace csdn {

struct GroundTruth {
  Box box;
  int class_id = 0;
};

struct LossConfig {
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  // Matching cost coefficients.
  double cost_class = 2.0;
  double cost_l1 = 5.0;
  double cost_giou = 2.0;
  // Loss coefficients.
  double weight_class = 2.0;
  double weight_l1 = 5.0;
  double weight_giou = 2.0;
  // Divide every term by max(1, number of ground truths).
  bool normalize = true;
};

struct LossComponents {
  double total = 0.0;
  double cls = 0.0;
  double l1 = 0.0;
  double giou = 0.0;
};

struct LossBreakdown : LossComponents {
  std::vector<LossComponents> layers;
};

// Focal-style classification cost of predicting class `c` from logit x:
// α(1−p)^γ(−log p) − (1−α)p^γ(−log(1−p)).
double focal_class_cost(double logit, double alpha, double gamma);

// cost[i][j] = λ_cls·class cost + λ_L1·|box_i − box_j|₁ + λ_giou·(1 − GIoU).
Tensor match_cost(const Tensor& logits, std::span<const Box> boxes, std::span<const GroundTruth> gts,
                  const LossConfig& cfg);

// Sigmoid focal loss summed over [N x C] and divided by `normalizer`.
// targets[i] is the class of prediction i, or -1 for background.
Var focal_loss(Graph& g, Var logits, std::span<const int> targets, double alpha, double gamma,
               double normalizer = 1.0);
// Σ over pairs of |box − gt|₁, divided by normalizer.
Var l1_box_loss(Graph& g, Var boxes, const Assignment& a, std::span<const GroundTruth> gts, double normalizer);
// Σ over pairs of (1 − GIoU), divided by normalizer.
Var giou_box_loss(Graph& g, Var boxes, const Assignment& a, std::span<const GroundTruth> gts, double normalizer);

struct DetectionLoss {
  Var total;
  LossBreakdown breakdown;
  std::vector<Assignment> assignments;  // per layer
};

// Deep-supervised detection loss: every layer is matched independently and
// contributes focal, L1 and GIoU terms. When `fixed` is given those
// assignments are used instead of matching.
DetectionLoss detection_loss(Graph& g, const HeadOutput& output, std::span<const GroundTruth> gts,
                             const LossConfig& cfg, const std::vector<Assignment>* fixed = nullptr);

}  // namespace csdn
