#include "csdn/evaluation.hpp"

#include <algorithm>
#include <numeric>

namespace csdn {

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

std::vector<bool> match_detections(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                                   double iou_threshold) {
  std::vector<bool> flags(dets.size(), false);
  std::vector<char> taken(gts.size(), 0);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    double best = -1.0;
    std::size_t best_j = gts.size();
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (taken[j] || gts[j].class_id != dets[i].class_id) continue;
      const double v = iou(dets[i].box, gts[j].box);
      if (v > best) {
        best = v;
        best_j = j;
      }
    }
    if (best_j < gts.size() && best >= iou_threshold) {
      taken[best_j] = 1;
      flags[i] = true;
    }
  }
  return flags;
}

std::optional<double> average_precision(std::span<const ScoredFlag> flags, std::size_t num_gt) {
  if (num_gt == 0) {
    if (flags.empty()) return std::nullopt;
    return 0.0;
  }
  std::vector<std::size_t> order(flags.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return flags[a].confidence > flags[b].confidence; });

  // Precision/recall after each group of equal confidence.
  std::vector<double> precision, recall;
  std::size_t tp = 0, seen = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const ScoredFlag& f = flags[order[k]];
    ++seen;
    if (f.true_positive) ++tp;
    const bool group_end = k + 1 == order.size() || flags[order[k + 1]].confidence != f.confidence;
    if (!group_end) continue;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(seen));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
  }
  // Envelope: best precision at any later (higher-recall) point.
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);

  double sum = 0.0;
  std::size_t k = 0;
  for (std::size_t r = 0; r < kRecallPoints; ++r) {
    const double level = static_cast<double>(r) / static_cast<double>(kRecallPoints - 1);
    while (k < recall.size() && recall[k] < level) ++k;
    if (k < recall.size()) sum += precision[k];
  }
  return sum / static_cast<double>(kRecallPoints);
}

EvalResult evaluate(std::span<const ImageResult> images, std::size_t num_classes, double pr_conf_threshold) {
  const std::vector<double> thresholds = coco_iou_thresholds();
  // flags[t][class] across images
  std::vector<std::vector<std::vector<ScoredFlag>>> flags(thresholds.size(),
                                                          std::vector<std::vector<ScoredFlag>>(num_classes));
  std::vector<std::size_t> num_gt(num_classes, 0);
  std::size_t pr_tp = 0, pr_count = 0, total_gt = 0;

  for (const ImageResult& img : images) {
    std::vector<Detection> dets = img.detections;
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
    for (const GroundTruth& gt : img.ground_truth) {
      if (gt.class_id < 0 || static_cast<std::size_t>(gt.class_id) >= num_classes)
        throw std::invalid_argument("evaluate: ground-truth class out of range");
      ++num_gt[static_cast<std::size_t>(gt.class_id)];
      ++total_gt;
    }
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      const std::vector<bool> tp = match_detections(dets, img.ground_truth, thresholds[t]);
      for (std::size_t i = 0; i < dets.size(); ++i) {
        if (dets[i].class_id < 0 || static_cast<std::size_t>(dets[i].class_id) >= num_classes)
          throw std::invalid_argument("evaluate: detection class out of range");
        flags[t][static_cast<std::size_t>(dets[i].class_id)].push_back({dets[i].confidence, tp[i]});
      }
      if (t == 0) {
        for (std::size_t i = 0; i < dets.size(); ++i) {
          if (dets[i].confidence < pr_conf_threshold) continue;
          ++pr_count;
          if (tp[i]) ++pr_tp;
        }
      }
    }
  }

  EvalResult r;
  r.precision = pr_count ? static_cast<double>(pr_tp) / static_cast<double>(pr_count) : 0.0;
  r.recall = total_gt ? static_cast<double>(pr_tp) / static_cast<double>(total_gt) : 0.0;
  double sum50 = 0.0, sum5095 = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    ClassAp ca;
    ca.class_id = static_cast<int>(c);
    ca.num_gt = num_gt[c];
    ca.ap50 = average_precision(flags[0][c], num_gt[c]);
    if (ca.ap50) {
      double s = 0.0;
      for (std::size_t t = 0; t < thresholds.size(); ++t) s += *average_precision(flags[t][c], num_gt[c]);
      ca.ap5095 = s / static_cast<double>(thresholds.size());
      sum50 += *ca.ap50;
      sum5095 += *ca.ap5095;
      ++counted;
    }
    r.per_class.push_back(ca);
  }
  if (counted) {
    r.map50 = sum50 / static_cast<double>(counted);
    r.map5095 = sum5095 / static_cast<double>(counted);
  }
  return r;
}

}  // namespace csdn
