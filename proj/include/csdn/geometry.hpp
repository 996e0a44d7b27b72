#pragma once

#include <span>
#include <vector>

#include "csdn/tensor.hpp"

namespace csdn {

// Normalized box in center form. Coordinates are not clamped: intermediate
// refinement may leave the unit square.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  bool operator==(const Box&) const = default;
};

struct Corners {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;
};

Corners to_corners(const Box& b);
Box from_corners(const Corners& c);

double iou(const Box& a, const Box& b);
// IoU minus the fraction of the smallest enclosing box not covered by the
// union. Zero enclosing area yields 0.
double giou(const Box& a, const Box& b);

// Adjacency of queries whose boxes overlap with IoU > 0. Symmetric, with the
// diagonal always set.
struct NeighborMask {
  BoolMatrix allowed;
  std::size_t size() const { return allowed.rows; }
};

NeighborMask neighbor_mask(std::span<const Box> boxes);

struct Detection {
  Box box;
  int class_id = 0;
  double confidence = 0.0;
  std::vector<double> class_scores;
};

inline constexpr double kDefaultConfThreshold = 0.25;
inline constexpr double kDefaultNmsIouThreshold = 0.6;

// Class-aware greedy suppression. Detections below conf_threshold are dropped;
// survivors come back in descending confidence, ties by original index.
std::vector<Detection> nms(std::span<const Detection> dets,
                           double conf_threshold = kDefaultConfThreshold,
                           double iou_threshold = kDefaultNmsIouThreshold);

}  // namespace csdn
