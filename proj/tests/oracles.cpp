#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "csdn/attention.hpp"
#include "csdn/matching.hpp"
#include "reference.hpp"

namespace csdn::testing {

namespace {

struct Rect {
  double x1, y1, x2, y2;
};

Rect rect_of(const Box& b) { return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2}; }

double rect_area(const Rect& r) { return std::max(0.0, r.x2 - r.x1) * std::max(0.0, r.y2 - r.y1); }

double overlap_1d(double a1, double a2, double b1, double b2) {
  return std::max(0.0, std::min(a2, b2) - std::max(a1, b1));
}

void enumerate(const Tensor& c, std::size_t gt, std::vector<std::size_t>& cur, std::vector<char>& used, double acc,
               double tol, BruteAssignment& best, bool& found) {
  if (gt == c.cols()) {
    if (!found || acc < best.cost - tol || (std::abs(acc - best.cost) <= tol && cur < best.preds)) {
      best.cost = found ? std::min(acc, best.cost) : acc;
      best.preds = cur;
      found = true;
    }
    return;
  }
  for (std::size_t p = 0; p < c.rows(); ++p) {
    if (used[p]) continue;
    used[p] = 1;
    cur.push_back(p);
    enumerate(c, gt + 1, cur, used, acc + c.at(p, gt), tol, best, found);
    cur.pop_back();
    used[p] = 0;
  }
}

// Per image, detections of one class in descending confidence (stable) claim
// the best-IoU free ground truth of that class when it reaches the threshold.
std::vector<ScoredFlag> oracle_flags(const std::vector<ImageResult>& images, int cls, double thr) {
  std::vector<ScoredFlag> out;
  for (const ImageResult& img : images) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < img.detections.size(); ++i) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return img.detections[a].confidence > img.detections[b].confidence;
    });
    std::vector<bool> used(img.ground_truth.size(), false);
    for (std::size_t i : order) {
      const Detection& d = img.detections[i];
      if (d.class_id != cls) continue;
      int best = -1;
      double best_iou = -1.0;
      for (std::size_t j = 0; j < img.ground_truth.size(); ++j) {
        if (used[j] || img.ground_truth[j].class_id != cls) continue;
        const double v = oracle_iou(d.box, img.ground_truth[j].box);
        if (v > best_iou) {
          best_iou = v;
          best = static_cast<int>(j);
        }
      }
      const bool tp = best >= 0 && best_iou >= thr;
      if (tp) used[static_cast<std::size_t>(best)] = true;
      out.push_back({d.confidence, tp});
    }
  }
  return out;
}

Detection make_detection(const Box& b, int cls, double conf) {
  Detection d;
  d.box = b;
  d.class_id = cls;
  d.confidence = conf;
  return d;
}

}  // namespace

double oracle_iou(const Box& a, const Box& b) {
  const Rect ra = rect_of(a), rb = rect_of(b);
  const double inter = overlap_1d(ra.x1, ra.x2, rb.x1, rb.x2) * overlap_1d(ra.y1, ra.y2, rb.y1, rb.y2);
  const double uni = rect_area(ra) + rect_area(rb) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double oracle_giou(const Box& a, const Box& b) {
  const Rect ra = rect_of(a), rb = rect_of(b);
  const double inter = overlap_1d(ra.x1, ra.x2, rb.x1, rb.x2) * overlap_1d(ra.y1, ra.y2, rb.y1, rb.y2);
  const double uni = rect_area(ra) + rect_area(rb) - inter;
  const Rect hull{std::min(ra.x1, rb.x1), std::min(ra.y1, rb.y1), std::max(ra.x2, rb.x2), std::max(ra.y2, rb.y2)};
  const double c = rect_area(hull);
  if (c <= 0) return 0.0;
  return (uni > 0 ? inter / uni : 0.0) - (c - uni) / c;
}

std::vector<std::size_t> oracle_nms(const std::vector<Detection>& dets, double conf, double thr) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i].confidence >= conf) idx.push_back(i);
  // Selection sort by confidence, ties by index.
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = a + 1; b < idx.size(); ++b) {
      const Detection& x = dets[idx[a]];
      const Detection& y = dets[idx[b]];
      if (y.confidence > x.confidence || (y.confidence == x.confidence && idx[b] < idx[a])) std::swap(idx[a], idx[b]);
    }
  std::vector<std::size_t> kept;
  for (std::size_t i : idx) {
    bool suppressed = false;
    for (std::size_t k : kept)
      if (dets[k].class_id == dets[i].class_id && oracle_iou(dets[k].box, dets[i].box) > thr) suppressed = true;
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

BruteAssignment brute_force_assignment(const Tensor& cost, double tolerance) {
  BruteAssignment best;
  bool found = false;
  std::vector<std::size_t> cur;
  std::vector<char> used(cost.rows(), 0);
  enumerate(cost, 0, cur, used, 0.0, tolerance, best, found);
  return best;
}

double oracle_ap(const std::vector<ScoredFlag>& flags, std::size_t num_gt) {
  std::set<double> cutoffs;
  for (const ScoredFlag& f : flags) cutoffs.insert(f.confidence);
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    double best = 0.0;
    for (double tau : cutoffs) {
      std::size_t tp = 0, n = 0;
      for (const ScoredFlag& f : flags)
        if (f.confidence >= tau) {
          ++n;
          tp += f.true_positive ? 1 : 0;
        }
      const double recall = static_cast<double>(tp) / static_cast<double>(num_gt);
      if (recall >= level) best = std::max(best, static_cast<double>(tp) / static_cast<double>(n));
    }
    sum += best;
  }
  return sum / 101.0;
}

EvalResult oracle_evaluate(const std::vector<ImageResult>& images, std::size_t classes) {
  EvalResult r;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t gt = 0, dets = 0;
    for (const ImageResult& img : images) {
      for (const GroundTruth& g : img.ground_truth) gt += g.class_id == static_cast<int>(c);
      for (const Detection& d : img.detections) dets += d.class_id == static_cast<int>(c);
    }
    if (gt == 0 && dets == 0) continue;
    ++counted;
    double s = 0.0;
    for (int t = 0; t < 10; ++t) {
      const double ap = gt ? oracle_ap(oracle_flags(images, static_cast<int>(c), 0.5 + 0.05 * t), gt) : 0.0;
      if (t == 0) r.map50 += ap;
      s += ap;
    }
    r.map5095 += s / 10.0;
  }
  if (counted) {
    r.map50 /= static_cast<double>(counted);
    r.map5095 /= static_cast<double>(counted);
  }
  return r;
}

std::vector<ImageResult> random_image_set(Rng& rng, std::size_t count, std::size_t classes) {
  const auto top = static_cast<std::int64_t>(classes) - 1;
  std::vector<ImageResult> images(count);
  for (ImageResult& img : images) {
    const auto ngt = rng.integer(0, 4);
    for (int j = 0; j < ngt; ++j)
      img.ground_truth.push_back(
          {{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3)},
           static_cast<int>(rng.integer(0, top))});
    for (const GroundTruth& g : img.ground_truth) {
      const auto copies = rng.integer(0, 2);
      for (int k = 0; k < copies; ++k) {
        Box b = g.box;
        b.cx += rng.uniform(-0.05, 0.05);
        b.w *= rng.uniform(0.8, 1.2);
        const int cls = rng.uniform() < 0.85 ? g.class_id : static_cast<int>(rng.integer(0, top));
        img.detections.push_back(make_detection(b, cls, std::round(rng.uniform() * 10) / 10));
      }
    }
    const auto noise = rng.integer(0, 2);
    for (int k = 0; k < noise; ++k)
      img.detections.push_back(make_detection({rng.uniform(0, 1), rng.uniform(0, 1), 0.1, 0.1},
                                              static_cast<int>(rng.integer(0, top)),
                                              std::round(rng.uniform() * 10) / 10));
  }
  return images;
}

void CheckOutcome::fail(const std::string& what) {
  if (failures++ == 0) first_failure = what;
}

std::string CheckOutcome::summary() const {
  std::ostringstream s;
  s << trials << " trials, " << failures << " mismatches";
  if (max_error > 0.0) s << ", max error " << max_error;
  if (!first_failure.empty()) s << " (first: " << first_failure << ")";
  return s.str();
}

CheckOutcome check_neighbor_all_true(std::size_t trials, std::uint64_t seed) {
  CheckOutcome out;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(mix_seed(seed, t));
    const std::size_t heads = static_cast<std::size_t>(rng.integer(1, 4));
    const std::size_t d = heads * static_cast<std::size_t>(rng.integer(1, 4));
    const std::size_t n = static_cast<std::size_t>(rng.integer(1, 8));
    ParamSet ps;
    const AttentionParams p = AttentionParams::create(ps, "attn", d, heads, rng);
    const Tensor x = reference::random_tensor(rng, {n, d});
    // Nested boxes around one centre all overlap each other.
    std::vector<Box> boxes;
    for (std::size_t i = 0; i < n; ++i) boxes.push_back(Box{0.5, 0.5, rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)});
    const NeighborMask mask = neighbor_mask(boxes);
    Graph g(false);
    const QuerySet q{g.constant(x), g.constant(boxes_tensor(boxes))};
    const Tensor& a = g.value(neighbor_attention(g, ps, p, q, mask));
    const Tensor& b = g.value(self_attention(g, ps, p, q.embeddings));
    ++out.trials;
    if (mask.allowed != BoolMatrix(n, n, true)) {
      out.fail("mask not all-true in trial " + std::to_string(t));
      continue;
    }
    double err = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) err = std::max(err, std::abs(a[i] - b[i]));
    out.max_error = std::max(out.max_error, err);
    if (!(err <= 1e-12)) out.fail("trial " + std::to_string(t) + " differs by " + std::to_string(err));
  }
  return out;
}

CheckOutcome check_hungarian(std::size_t trials, std::uint64_t seed) {
  CheckOutcome out;
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto m = static_cast<std::size_t>(rng.integer(1, 7));
    const auto n = m + static_cast<std::size_t>(rng.integer(0, 8 - static_cast<std::int64_t>(m)));
    Tensor c({n, m});
    const bool integral = t % 2 == 0;  // small integers force many ties
    for (double& v : c.values()) v = integral ? static_cast<double>(rng.integer(0, 3)) : rng.uniform(-5, 5);
    const BruteAssignment best = brute_force_assignment(c, integral ? 0.0 : 5e-9);
    const Assignment a = hungarian_match(c);
    ++out.trials;
    const double err = std::abs(assignment_cost(c, a) - best.cost);
    out.max_error = std::max(out.max_error, err);
    bool same = a.pairs.size() == m;
    for (std::size_t j = 0; same && j < m; ++j) same = a.pairs[j].second == j && a.pairs[j].first == best.preds[j];
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i)
      if (std::find(best.preds.begin(), best.preds.end(), i) == best.preds.end()) rest.push_back(i);
    same = same && a.unmatched == rest;
    if (!same || err > 1e-9) out.fail("instance " + std::to_string(t) + " (" + std::to_string(n) + "x" + std::to_string(m) + ")");
  }
  return out;
}

CheckOutcome check_nms(std::size_t trials, std::uint64_t seed) {
  CheckOutcome out;
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<Detection> d(static_cast<std::size_t>(rng.integer(0, 12)));
    for (Detection& x : d) {
      x.box = Box{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)};
      x.class_id = static_cast<int>(rng.integer(0, 1));
      x.confidence = std::round(rng.uniform(0, 1) * 10) / 10;  // coarse, so ties occur
    }
    const double thr = rng.uniform(0.2, 0.8);
    const std::vector<Detection> kept = nms(d, 0.25, thr);
    const std::vector<std::size_t> expect = oracle_nms(d, 0.25, thr);
    ++out.trials;
    bool same = kept.size() == expect.size();
    for (std::size_t i = 0; same && i < kept.size(); ++i)
      same = kept[i].box == d[expect[i]].box && kept[i].confidence == d[expect[i]].confidence &&
             kept[i].class_id == d[expect[i]].class_id;
    if (!same) out.fail("set " + std::to_string(t));
  }
  return out;
}

CheckOutcome check_evaluate(std::size_t trials, std::uint64_t seed) {
  CheckOutcome out;
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::vector<ImageResult> images = random_image_set(rng, 6, 3);
    const EvalResult r = evaluate(images, 3);
    const EvalResult o = oracle_evaluate(images, 3);
    ++out.trials;
    const double err = std::max(std::abs(r.map50 - o.map50), std::abs(r.map5095 - o.map5095));
    out.max_error = std::max(out.max_error, err);
    if (!(err <= 1e-12) || r.map5095 > r.map50 + 1e-15) out.fail("scene set " + std::to_string(t));
  }
  return out;
}

CheckOutcome check_one_hot_gate(std::size_t trials, std::uint64_t seed) {
  CheckOutcome out;
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto n = static_cast<std::size_t>(rng.integer(1, 8)), d = static_cast<std::size_t>(rng.integer(1, 8));
    std::array<Tensor, kGateSlots> branch;
    for (Tensor& b : branch) b = reference::random_tensor(rng, {n, d}, -10, 10);
    Tensor gates({n, kGateSlots});
    std::vector<std::size_t> pick(n);
    for (std::size_t i = 0; i < n; ++i) {
      pick[i] = static_cast<std::size_t>(rng.integer(0, kGateSlots - 1));
      gates.at(i, pick[i]) = 1.0;
    }
    Graph g(false);
    const Tensor& y = g.value(
        fuse_with_gates(g, g.constant(gates), {g.constant(branch[0]), g.constant(branch[1]), g.constant(branch[2])}));
    ++out.trials;
    bool exact = true;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) exact = exact && y.at(i, j) == branch[pick[i]].at(i, j);
    if (!exact) out.fail("trial " + std::to_string(t));
  }
  return out;
}

CheckOutcome check_box_pairs(std::size_t pairs, std::uint64_t seed) {
  CheckOutcome out;
  Rng rng(seed);
  auto random_box = [&] {
    return Box{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.01, 0.6), rng.uniform(0.01, 0.6)};
  };
  for (std::size_t t = 0; t < pairs; ++t) {
    const Box a = random_box(), b = random_box();
    const double u = iou(a, b), v = giou(a, b);
    ++out.trials;
    const double err = std::max(std::abs(u - oracle_iou(a, b)), std::abs(v - oracle_giou(a, b)));
    out.max_error = std::max(out.max_error, err);
    const bool ok = u >= 0.0 && u <= 1.0 && v > -1.0 && v <= 1.0 && v <= u && u == iou(b, a) && v == giou(b, a) &&
                    err <= 1e-12;
    if (!ok) out.fail("pair " + std::to_string(t));
  }
  return out;
}

CheckOutcome check_bilinear_grid(std::size_t maps, std::uint64_t seed) {
  CheckOutcome out;
  Rng rng(seed);
  for (std::size_t t = 0; t < maps; ++t) {
    const auto h = static_cast<std::size_t>(rng.integer(1, 12)), w = static_cast<std::size_t>(rng.integer(1, 12));
    const auto d = static_cast<std::size_t>(rng.integer(1, 6));
    const Tensor map = reference::random_tensor(rng, {h, w, d}, -5, 5);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::vector<double> v = bilinear_sample(map, static_cast<double>(x), static_cast<double>(y));
        ++out.trials;
        for (std::size_t c = 0; c < d; ++c)
          if (v[c] != map[(y * w + x) * d + c]) {
            out.fail("map " + std::to_string(t) + " at (" + std::to_string(x) + ", " + std::to_string(y) + ")");
            break;
          }
      }
  }
  return out;
}

}  // namespace csdn::testing
