#include "csdn/geometry.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace csdn {

Corners to_corners(const Box& b) {
  return {b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0};
}

Box from_corners(const Corners& c) {
  return {(c.x1 + c.x2) / 2.0, (c.y1 + c.y2) / 2.0, c.x2 - c.x1, c.y2 - c.y1};
}

namespace {

double intersection(const Corners& a, const Corners& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  return iw * ih;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  const double inter = intersection(to_corners(a), to_corners(b));
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double giou(const Box& a, const Box& b) {
  const Corners ca = to_corners(a), cb = to_corners(b);
  const double inter = intersection(ca, cb);
  const double uni = a.area() + b.area() - inter;
  const double enclose = (std::max(ca.x2, cb.x2) - std::min(ca.x1, cb.x1)) *
                         (std::max(ca.y2, cb.y2) - std::min(ca.y1, cb.y1));
  if (enclose <= 0.0) return 0.0;
  const double i = uni > 0.0 ? inter / uni : 0.0;
  return i - std::max(0.0, enclose - uni) / enclose;
}

NeighborMask neighbor_mask(std::span<const Box> boxes) {
  if (boxes.empty()) throw std::invalid_argument("neighbor_mask: no boxes");
  const std::size_t n = boxes.size();
  NeighborMask m{BoolMatrix(n, n, false)};
  for (std::size_t i = 0; i < n; ++i) {
    m.allowed.set(i, i, true);
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adj = iou(boxes[i], boxes[j]) > 0.0;
      m.allowed.set(i, j, adj);
      m.allowed.set(j, i, adj);
    }
  }
  return m;
}

std::vector<Detection> nms(std::span<const Detection> dets, double conf_threshold, double iou_threshold) {
  if (conf_threshold < 0.0 || conf_threshold > 1.0 || iou_threshold < 0.0 || iou_threshold > 1.0)
    throw std::invalid_argument("nms: thresholds must lie in [0, 1]");
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i].confidence >= conf_threshold) order.push_back(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });

  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    const Detection& d = dets[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return dets[k].class_id == d.class_id && iou(dets[k].box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(idx);
  }
  std::vector<Detection> out;
  out.reserve(kept.size());
  for (std::size_t k : kept) out.push_back(dets[k]);
  return out;
}

}  // namespace csdn
