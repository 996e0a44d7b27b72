#include "csdn/loss.hpp"

#include <algorithm>
#include <cmath>

#include "csdn/ops.hpp"

namespace csdn {

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

struct GiouGrad {
  double value = 0.0;
  double d[4] = {0, 0, 0, 0};  // d giou / d (cx, cy, w, h) of the prediction
};

GiouGrad giou_with_grad(const Box& pred, const Box& gt) {
  GiouGrad r;
  const Corners p = to_corners(pred), q = to_corners(gt);
  const double iw = std::min(p.x2, q.x2) - std::max(p.x1, q.x1);
  const double ih = std::min(p.y2, q.y2) - std::max(p.y1, q.y1);
  const bool overlap = iw > 0.0 && ih > 0.0;
  const double inter = overlap ? iw * ih : 0.0;
  const double pw = p.x2 - p.x1, ph = p.y2 - p.y1;
  const double uni = pw * ph + gt.area() - inter;
  const double cw = std::max(p.x2, q.x2) - std::min(p.x1, q.x1);
  const double ch = std::max(p.y2, q.y2) - std::min(p.y1, q.y1);
  const double enclose = cw * ch;
  if (enclose <= 0.0 || uni <= 0.0) {
    r.value = giou(pred, gt);
    return r;
  }
  r.value = inter / uni - (enclose - uni) / enclose;

  // giou = I/U + U/C − 1 with U = Ap + Ag − I.
  const double d_inter = (uni + inter) / (uni * uni) - 1.0 / enclose;
  const double d_area = -inter / (uni * uni) + 1.0 / enclose;
  const double d_enclose = -uni / (enclose * enclose);

  double dx1 = 0, dy1 = 0, dx2 = 0, dy2 = 0;
  if (overlap) {
    if (p.x1 > q.x1) dx1 += -ih * d_inter;
    if (p.x2 < q.x2) dx2 += ih * d_inter;
    if (p.y1 > q.y1) dy1 += -iw * d_inter;
    if (p.y2 < q.y2) dy2 += iw * d_inter;
  }
  dx1 += -ph * d_area;
  dx2 += ph * d_area;
  dy1 += -pw * d_area;
  dy2 += pw * d_area;
  if (p.x1 < q.x1) dx1 += -ch * d_enclose;
  if (p.x2 > q.x2) dx2 += ch * d_enclose;
  if (p.y1 < q.y1) dy1 += -cw * d_enclose;
  if (p.y2 > q.y2) dy2 += cw * d_enclose;

  r.d[0] = dx1 + dx2;
  r.d[1] = dy1 + dy2;
  r.d[2] = 0.5 * (dx2 - dx1);
  r.d[3] = 0.5 * (dy2 - dy1);
  return r;
}

Box box_row(const Tensor& t, std::size_t i) { return Box{t.at(i, 0), t.at(i, 1), t.at(i, 2), t.at(i, 3)}; }

}  // namespace

double focal_class_cost(double logit, double alpha, double gamma) {
  const double p = 1.0 / (1.0 + std::exp(-logit));
  const double pos = alpha * std::pow(1.0 - p, gamma) * -std::log(p + 1e-8);
  const double neg = (1.0 - alpha) * std::pow(p, gamma) * -std::log(1.0 - p + 1e-8);
  return pos - neg;
}

Tensor match_cost(const Tensor& logits, std::span<const Box> boxes, std::span<const GroundTruth> gts,
                  const LossConfig& cfg) {
  const std::size_t n = boxes.size(), m = gts.size();
  if (logits.rows() != n) throw DimensionError("match_cost: logits and boxes disagree on prediction count");
  const std::size_t classes = logits.cols();
  Tensor cost({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const GroundTruth& gt = gts[j];
      if (gt.class_id < 0 || static_cast<std::size_t>(gt.class_id) >= classes)
        throw std::invalid_argument("match_cost: ground-truth class out of range");
      const double cls = focal_class_cost(logits.at(i, static_cast<std::size_t>(gt.class_id)), cfg.focal_alpha, cfg.focal_gamma);
      const Box& b = boxes[i];
      const double l1 = std::abs(b.cx - gt.box.cx) + std::abs(b.cy - gt.box.cy) + std::abs(b.w - gt.box.w) +
                        std::abs(b.h - gt.box.h);
      cost.at(i, j) = cfg.cost_class * cls + cfg.cost_l1 * l1 + cfg.cost_giou * (1.0 - giou(b, gt.box));
    }
  return cost;
}

Var focal_loss(Graph& g, Var logits, std::span<const int> targets, double alpha, double gamma, double normalizer) {
  if (alpha < 0.0 || alpha > 1.0 || gamma < 0.0) throw std::invalid_argument("focal_loss: alpha must lie in [0,1], gamma >= 0");
  const Tensor& x = g.value(logits);
  const std::size_t n = x.rows(), c = x.cols();
  if (targets.size() != n) throw DimensionError("focal_loss: one target per prediction required");
  std::vector<int> tg(targets.begin(), targets.end());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      const double z = x.at(i, k);
      const double p = 1.0 / (1.0 + std::exp(-z));
      if (tg[i] == static_cast<int>(k))
        total += alpha * std::pow(1.0 - p, gamma) * softplus(-z);
      else
        total += (1.0 - alpha) * std::pow(p, gamma) * softplus(z);
    }
  return g.emit(Tensor({1}, {total / normalizer}), g.any_requires_grad(logits),
                [logits, tg, alpha, gamma, normalizer, n, c](Graph& g, Var o) {
                  const double dy = g.grad(o)[0] / normalizer;
                  const Tensor& x = g.value(logits);
                  auto dx = g.grad(logits);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t k = 0; k < c; ++k) {
                      const double z = x.at(i, k);
                      const double p = 1.0 / (1.0 + std::exp(-z));
                      double grad;
                      if (tg[i] == static_cast<int>(k)) {
                        // d/dz of α(1−p)^γ(−log p)
                        grad = alpha * std::pow(1.0 - p, gamma) * (gamma * p * -softplus(-z) - (1.0 - p));
                      } else {
                        // d/dz of (1−α)p^γ(−log(1−p))
                        grad = (1.0 - alpha) * std::pow(p, gamma) * (p + gamma * (1.0 - p) * softplus(z));
                      }
                      dx[i * c + k] += dy * grad;
                    }
                });
}

Var l1_box_loss(Graph& g, Var boxes, const Assignment& a, std::span<const GroundTruth> gts, double normalizer) {
  const Tensor& b = g.value(boxes);
  std::vector<std::pair<std::size_t, Box>> pairs;
  double total = 0.0;
  for (auto [pred, gt] : a.pairs) {
    const Box& t = gts[gt].box;
    pairs.emplace_back(pred, t);
    const double tv[4] = {t.cx, t.cy, t.w, t.h};
    for (std::size_t k = 0; k < 4; ++k) total += std::abs(b.at(pred, k) - tv[k]);
  }
  return g.emit(Tensor({1}, {total / normalizer}), g.any_requires_grad(boxes),
                [boxes, pairs, normalizer](Graph& g, Var o) {
                  const double dy = g.grad(o)[0] / normalizer;
                  const Tensor& b = g.value(boxes);
                  auto db = g.grad(boxes);
                  for (const auto& [pred, t] : pairs) {
                    const double tv[4] = {t.cx, t.cy, t.w, t.h};
                    for (std::size_t k = 0; k < 4; ++k) {
                      const double diff = b.at(pred, k) - tv[k];
                      db[pred * 4 + k] += dy * (diff > 0.0 ? 1.0 : diff < 0.0 ? -1.0 : 0.0);
                    }
                  }
                });
}

Var giou_box_loss(Graph& g, Var boxes, const Assignment& a, std::span<const GroundTruth> gts, double normalizer) {
  const Tensor& b = g.value(boxes);
  std::vector<std::pair<std::size_t, Box>> pairs;
  double total = 0.0;
  for (auto [pred, gt] : a.pairs) {
    pairs.emplace_back(pred, gts[gt].box);
    total += 1.0 - giou(box_row(b, pred), gts[gt].box);
  }
  return g.emit(Tensor({1}, {total / normalizer}), g.any_requires_grad(boxes),
                [boxes, pairs, normalizer](Graph& g, Var o) {
                  const double dy = g.grad(o)[0] / normalizer;
                  const Tensor& b = g.value(boxes);
                  auto db = g.grad(boxes);
                  for (const auto& [pred, t] : pairs) {
                    const GiouGrad gg = giou_with_grad(box_row(b, pred), t);
                    for (std::size_t k = 0; k < 4; ++k) db[pred * 4 + k] -= dy * gg.d[k];
                  }
                });
}

DetectionLoss detection_loss(Graph& g, const HeadOutput& output, std::span<const GroundTruth> gts,
                             const LossConfig& cfg, const std::vector<Assignment>* fixed) {
  if (fixed && fixed->size() != output.layers.size())
    throw std::invalid_argument("detection_loss: one fixed assignment per layer required");
  DetectionLoss result;
  const double normalizer = cfg.normalize ? std::max<double>(1.0, static_cast<double>(gts.size())) : 1.0;
  std::vector<Var> terms;
  std::vector<double> weights;
  for (std::size_t l = 0; l < output.layers.size(); ++l) {
    const LayerPrediction& pred = output.layers[l];
    const Tensor& logits = g.value(pred.logits);
    Assignment a;
    if (fixed) {
      a = (*fixed)[l];
    } else {
      const std::vector<Box> boxes = boxes_of(g, pred.boxes);
      a = hungarian_match(match_cost(logits, boxes, gts, cfg));
    }
    std::vector<int> targets(logits.rows(), -1);
    for (auto [p, gt] : a.pairs) targets[p] = gts[gt].class_id;

    Var cls = focal_loss(g, pred.logits, targets, cfg.focal_alpha, cfg.focal_gamma, normalizer);
    Var l1 = l1_box_loss(g, pred.boxes, a, gts, normalizer);
    Var gi = giou_box_loss(g, pred.boxes, a, gts, normalizer);

    LossComponents c;
    c.cls = g.value(cls)[0];
    c.l1 = g.value(l1)[0];
    c.giou = g.value(gi)[0];
    c.total = cfg.weight_class * c.cls + cfg.weight_l1 * c.l1 + cfg.weight_giou * c.giou;
    result.breakdown.layers.push_back(c);
    result.breakdown.cls += c.cls;
    result.breakdown.l1 += c.l1;
    result.breakdown.giou += c.giou;
    result.assignments.push_back(std::move(a));

    terms.insert(terms.end(), {cls, l1, gi});
    weights.insert(weights.end(), {cfg.weight_class, cfg.weight_l1, cfg.weight_giou});
  }
  result.total = weighted_sum(g, terms, weights);
  result.breakdown.total = g.value(result.total)[0];
  return result;
}

}  // namespace csdn
