#include <gtest/gtest.h>

#include <cmath>

#include "csdn/grad_check.hpp"
#include "csdn/loss.hpp"
#include "reference.hpp"

using namespace csdn;
namespace ref = csdn::reference;

namespace {

double sigmoid_of(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double focal_value(const Tensor& logits, const std::vector<int>& targets, double alpha, double gamma) {
  Graph g(false);
  return g.value(focal_loss(g, g.constant(logits), targets, alpha, gamma))[0];
}

// Elementwise focal loss in long double.
long double focal_ref(const Tensor& logits, const std::vector<int>& targets, long double alpha, long double gamma) {
  long double total = 0.0L;
  for (std::size_t i = 0; i < logits.rows(); ++i)
    for (std::size_t k = 0; k < logits.cols(); ++k) {
      const long double p = 1.0L / (1.0L + expl(-static_cast<long double>(logits.at(i, k))));
      if (targets[i] == static_cast<int>(k))
        total += alpha * powl(1.0L - p, gamma) * -logl(p);
      else
        total += (1.0L - alpha) * powl(p, gamma) * -logl(1.0L - p);
    }
  return total;
}

std::vector<GroundTruth> some_truths() {
  return {{{0.3, 0.3, 0.2, 0.2}, 0}, {{0.7, 0.6, 0.3, 0.2}, 2}};
}

Tensor random_boxes(Rng& rng, std::size_t n) {
  Tensor boxes({n, 4});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 4; ++c) boxes.at(i, c) = c < 2 ? rng.uniform(0.2, 0.8) : rng.uniform(0.1, 0.4);
  return boxes;
}

double single_layer_loss(const Tensor& logits, const Tensor& boxes, const std::vector<GroundTruth>& gts,
                         const LossConfig& cfg) {
  Graph g(false);
  HeadOutput out;
  out.layers.push_back(LayerPrediction{g.constant(logits), g.constant(boxes), {}});
  return detection_loss(g, out, gts, cfg).breakdown.total;
}

}  // namespace

TEST(FocalLoss, MatchesExtendedPrecisionReference) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor logits = ref::random_tensor(rng, {5, 4}, -6, 6);
    std::vector<int> targets(5);
    for (int& t : targets) t = static_cast<int>(rng.integer(-1, 3));
    const double a = rng.uniform(0, 1), gm = rng.uniform(0, 3);
    EXPECT_NEAR(focal_value(logits, targets, a, gm), static_cast<double>(focal_ref(logits, targets, a, gm)), 1e-12);
  }
}

TEST(FocalLoss, GammaZeroHalfAlphaIsHalfCrossEntropy) {
  const Tensor logits = Tensor::matrix({{0.3, -1.2}, {2.0, 0.5}});
  const std::vector<int> targets{1, -1};
  double bce = 0.0;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 2; ++k) {
      const double p = sigmoid_of(logits.at(i, k));
      bce += targets[i] == static_cast<int>(k) ? -std::log(p) : -std::log(1 - p);
    }
  EXPECT_NEAR(focal_value(logits, targets, 0.5, 0.0), 0.5 * bce, 1e-14);
}

TEST(FocalLoss, NormalizerDividesTheSum) {
  const Tensor logits = Tensor::matrix({{0.3, -1.2}, {2.0, 0.5}});
  const std::vector<int> targets{0, 1};
  Graph g(false);
  const double v = g.value(focal_loss(g, g.constant(logits), targets, 0.25, 2.0, 4.0))[0];
  EXPECT_NEAR(v, focal_value(logits, targets, 0.25, 2.0) / 4.0, 1e-15);
}

TEST(FocalLoss, InvariantToJointRowPermutation) {
  Rng rng(2);
  const Tensor logits = ref::random_tensor(rng, {6, 3}, -4, 4);
  const std::vector<int> targets{0, -1, 2, -1, 1, 0};
  const std::vector<std::size_t> perm{5, 2, 0, 4, 1, 3};
  Tensor pl({6, 3});
  std::vector<int> pt(6);
  for (std::size_t i = 0; i < 6; ++i) {
    pt[i] = targets[perm[i]];
    for (std::size_t k = 0; k < 3; ++k) pl.at(i, k) = logits.at(perm[i], k);
  }
  EXPECT_NEAR(focal_value(logits, targets, 0.25, 2.0), focal_value(pl, pt, 0.25, 2.0), 1e-13);
}

TEST(FocalLoss, MonotoneInTheCorrectDirection) {
  double prev_pos = INFINITY, prev_neg = -INFINITY;
  for (double z = -8; z <= 8; z += 0.25) {
    const Tensor logits = Tensor::matrix({{z}});
    const double pos = focal_value(logits, {0}, 0.25, 2.0);
    const double neg = focal_value(logits, {-1}, 0.25, 2.0);
    EXPECT_LT(pos, prev_pos);
    EXPECT_GT(neg, prev_neg);
    prev_pos = pos;
    prev_neg = neg;
  }
}

TEST(FocalLoss, DownweightsEasyNegativesComparedWithCrossEntropy) {
  // A confident background prediction contributes far less than its BCE.
  const Tensor logits = Tensor::matrix({{-4.0}});
  const double bce = -std::log(1 - sigmoid_of(-4.0));
  EXPECT_LT(focal_value(logits, {-1}, 0.25, 2.0), 1e-3 * bce);
}

TEST(FocalLoss, RejectsInvalidArguments) {
  const Tensor logits({2, 2});
  EXPECT_THROW(focal_value(logits, {0, 0}, 1.5, 2.0), std::invalid_argument);
  EXPECT_THROW(focal_value(logits, {0, 0}, 0.25, -1.0), std::invalid_argument);
  EXPECT_THROW(focal_value(logits, {0}, 0.25, 2.0), DimensionError);
}

TEST(FocalClassCost, PositiveMinusNegativeTerm) {
  for (double z : {-3.0, -0.5, 0.0, 1.0, 4.0}) {
    const double p = sigmoid_of(z);
    const double expect = 0.25 * (1 - p) * (1 - p) * -std::log(p + 1e-8) - 0.75 * p * p * -std::log(1 - p + 1e-8);
    EXPECT_NEAR(focal_class_cost(z, 0.25, 2.0), expect, 1e-14);
  }
  EXPECT_LT(focal_class_cost(3.0, 0.25, 2.0), focal_class_cost(-3.0, 0.25, 2.0));
}

TEST(MatchCost, MatchesElementwiseFormula) {
  Rng rng(3);
  const Tensor logits = ref::random_tensor(rng, {4, 3}, -3, 3);
  const std::vector<Box> boxes{{0.3, 0.3, 0.2, 0.2}, {0.6, 0.5, 0.3, 0.4}, {0.1, 0.9, 0.1, 0.1}, {0.5, 0.5, 0.5, 0.5}};
  const auto gts = some_truths();
  const LossConfig cfg;
  const Tensor c = match_cost(logits, boxes, gts, cfg);
  ASSERT_EQ(c.shape(), (Shape{4, 2}));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      const Box& b = boxes[i];
      const Box& t = gts[j].box;
      const double l1 = std::abs(b.cx - t.cx) + std::abs(b.cy - t.cy) + std::abs(b.w - t.w) + std::abs(b.h - t.h);
      const double expect = 2.0 * focal_class_cost(logits.at(i, static_cast<std::size_t>(gts[j].class_id)), 0.25, 2.0) +
                            5.0 * l1 + 2.0 * (1.0 - giou(b, t));
      EXPECT_NEAR(c.at(i, j), expect, 1e-13);
    }
  std::vector<GroundTruth> bad{{{0.5, 0.5, 0.1, 0.1}, 3}};
  EXPECT_THROW(match_cost(logits, boxes, bad, cfg), std::invalid_argument);
}

TEST(BoxLosses, MatchPairwiseSums) {
  const Tensor boxes = Tensor::matrix({{0.3, 0.35, 0.2, 0.25}, {0.9, 0.9, 0.1, 0.1}, {0.65, 0.6, 0.3, 0.3}});
  const auto gts = some_truths();
  Assignment a;
  a.pairs = {{0, 0}, {2, 1}};
  a.unmatched = {1};
  Graph g(false);
  const Var b = g.constant(boxes);
  const double l1 = g.value(l1_box_loss(g, b, a, gts, 2.0))[0];
  const double gi = g.value(giou_box_loss(g, b, a, gts, 2.0))[0];
  double el1 = 0.0, egi = 0.0;
  for (auto [p, t] : a.pairs) {
    const Box pb{boxes.at(p, 0), boxes.at(p, 1), boxes.at(p, 2), boxes.at(p, 3)};
    el1 += std::abs(pb.cx - gts[t].box.cx) + std::abs(pb.cy - gts[t].box.cy) + std::abs(pb.w - gts[t].box.w) +
           std::abs(pb.h - gts[t].box.h);
    egi += 1.0 - giou(pb, gts[t].box);
  }
  EXPECT_NEAR(l1, el1 / 2.0, 1e-15);
  EXPECT_NEAR(gi, egi / 2.0, 1e-15);
}

TEST(DetectionLoss, TotalIsWeightedSumOfComponents) {
  Rng rng(4);
  Graph g(false);
  HeadOutput out;
  for (int l = 0; l < 3; ++l) {
    Tensor boxes({5, 4});
    for (std::size_t i = 0; i < 5; ++i) {
      boxes.at(i, 0) = rng.uniform(0.2, 0.8);
      boxes.at(i, 1) = rng.uniform(0.2, 0.8);
      boxes.at(i, 2) = rng.uniform(0.1, 0.4);
      boxes.at(i, 3) = rng.uniform(0.1, 0.4);
    }
    out.layers.push_back(LayerPrediction{g.constant(ref::random_tensor(rng, {5, 3}, -3, 3)), g.constant(boxes), {}});
  }
  const auto gts = some_truths();
  const LossConfig cfg;
  const DetectionLoss loss = detection_loss(g, out, gts, cfg);
  ASSERT_EQ(loss.breakdown.layers.size(), 3u);
  ASSERT_EQ(loss.assignments.size(), 3u);
  double total = 0.0, cls = 0.0;
  for (const LossComponents& c : loss.breakdown.layers) {
    EXPECT_NEAR(c.total, 2.0 * c.cls + 5.0 * c.l1 + 2.0 * c.giou, 1e-13);
    total += c.total;
    cls += c.cls;
  }
  EXPECT_NEAR(loss.breakdown.total, total, 1e-12);
  EXPECT_NEAR(loss.breakdown.cls, cls, 1e-13);

  // Each layer's assignment is the optimal matching of its own cost matrix.
  for (std::size_t l = 0; l < 3; ++l) {
    const Tensor cost = match_cost(g.value(out.layers[l].logits), boxes_of(g, out.layers[l].boxes), gts, cfg);
    EXPECT_EQ(loss.assignments[l], hungarian_match(cost));
  }
}

TEST(DetectionLoss, NoGroundTruthIsPureBackgroundFocal) {
  Rng rng(5);
  Graph g(false);
  const Tensor logits = ref::random_tensor(rng, {4, 3}, -3, 3);
  HeadOutput out;
  out.layers.push_back(
      LayerPrediction{g.constant(logits), g.constant(Tensor({4, 4}, 0.5)), {}});
  const DetectionLoss loss = detection_loss(g, out, {}, LossConfig{});
  EXPECT_EQ(loss.breakdown.l1, 0.0);
  EXPECT_EQ(loss.breakdown.giou, 0.0);
  EXPECT_NEAR(loss.breakdown.cls, focal_value(logits, {-1, -1, -1, -1}, 0.25, 2.0), 1e-15);
  EXPECT_EQ(loss.assignments[0].unmatched.size(), 4u);
}

TEST(DetectionLoss, FixedAssignmentsAreUsed) {
  Rng rng(6);
  Graph g(false);
  HeadOutput out;
  out.layers.push_back(LayerPrediction{g.constant(ref::random_tensor(rng, {3, 3}, -3, 3)),
                                       g.constant(Tensor::matrix({{0.3, 0.3, 0.2, 0.2}, {0.5, 0.5, 0.2, 0.2}, {0.7, 0.6, 0.3, 0.2}})),
                                       {}});
  Assignment fixed;
  fixed.pairs = {{1, 0}, {0, 1}};
  fixed.unmatched = {2};
  const std::vector<Assignment> assignments{fixed};
  const DetectionLoss loss = detection_loss(g, out, some_truths(), LossConfig{}, &assignments);
  EXPECT_EQ(loss.assignments[0], fixed);
  const std::vector<Assignment> wrong(2, fixed);
  EXPECT_THROW(detection_loss(g, out, some_truths(), LossConfig{}, &wrong), std::invalid_argument);
}

TEST(DetectionLoss, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  ParamSet ps;
  const auto logits = ps.add("logits", ref::random_tensor(rng, {4, 3}, -2, 2));
  Tensor raw({4, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 4; ++c) raw.at(i, c) = c < 2 ? rng.uniform(0.2, 0.8) : rng.uniform(0.1, 0.4);
  const auto boxes = ps.add("boxes", raw);
  const auto gts = some_truths();
  // Freeze the matching found at the starting point.
  std::vector<Assignment> fixed;
  {
    Graph g(false);
    HeadOutput out;
    Var b = g.parameter(static_cast<const Parameter&>(ps[boxes]));
    out.layers.push_back(LayerPrediction{g.parameter(static_cast<const Parameter&>(ps[logits])), b, {}});
    fixed = detection_loss(g, out, gts, LossConfig{}).assignments;
  }
  const GradCheckResult r = grad_check(
      [&](Graph& g) {
        HeadOutput out;
        out.layers.push_back(LayerPrediction{g.parameter(ps[logits]), g.parameter(ps[boxes]), {}});
        return detection_loss(g, out, gts, LossConfig{}, &fixed).total;
      },
      {&ps[logits], &ps[boxes]});
  EXPECT_LT(r.max_relative_error, 1e-6);
}

TEST(DetectionLoss, InvariantToPredictionAndTruthOrder) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 6;
    const Tensor logits = ref::random_tensor(rng, {n, 3}, -4, 2);
    const Tensor boxes = random_boxes(rng, n);
    std::vector<GroundTruth> gts;
    const Tensor gt_boxes = random_boxes(rng, 3);
    for (std::size_t j = 0; j < 3; ++j)
      gts.push_back({{gt_boxes.at(j, 0), gt_boxes.at(j, 1), gt_boxes.at(j, 2), gt_boxes.at(j, 3)},
                     static_cast<int>(rng.integer(0, 2))});
    const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    Tensor pl({n, 3}), pb({n, 4});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < 3; ++k) pl.at(i, k) = logits.at(perm[i], k);
      for (std::size_t k = 0; k < 4; ++k) pb.at(i, k) = boxes.at(perm[i], k);
    }
    const std::vector<GroundTruth> pg{gts[2], gts[0], gts[1]};
    const double base = single_layer_loss(logits, boxes, gts, LossConfig{});
    EXPECT_NEAR(single_layer_loss(pl, pb, pg, LossConfig{}), base, 1e-12) << trial;
  }
}

// With sum reduction the loss is a constant plus the matched cost, so adding
// a ground truth whose every cost entry is non-negative cannot lower it. Low
// logits keep every class cost positive.
TEST(DetectionLoss, DuplicatingATruthNeverLowersTheSummedLoss) {
  Rng rng(9);
  LossConfig cfg;
  cfg.normalize = false;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 6;
    const Tensor logits = ref::random_tensor(rng, {n, 3}, -6, -1);
    const Tensor boxes = random_boxes(rng, n);
    std::vector<GroundTruth> gts;
    const auto m = static_cast<std::size_t>(rng.integer(1, 4));
    const Tensor gt_boxes = random_boxes(rng, m);
    for (std::size_t j = 0; j < m; ++j)
      gts.push_back({{gt_boxes.at(j, 0), gt_boxes.at(j, 1), gt_boxes.at(j, 2), gt_boxes.at(j, 3)},
                     static_cast<int>(rng.integer(0, 2))});
    const double before = single_layer_loss(logits, boxes, gts, cfg);
    std::vector<GroundTruth> more = gts;
    more.push_back(gts[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(m) - 1))]);
    EXPECT_GE(single_layer_loss(logits, boxes, more, cfg), before - 1e-9) << trial;
  }
}
