#pragma once

#include <optional>
#include <span>
#include <vector>

#include "csdn/geometry.hpp"
#include "csdn/loss.hpp"

namespace csdn {

// Greedy matching of one image's detections (sorted by descending
// confidence) to its ground truths: each detection takes the unmatched
// same-class ground truth of highest IoU when that IoU reaches the
// threshold. Returns one true-positive flag per detection.
std::vector<bool> match_detections(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                                   double iou_threshold);

struct ScoredFlag {
  double confidence = 0.0;
  bool true_positive = false;
};

inline constexpr std::size_t kRecallPoints = 101;

// 101-point interpolated AP: mean over r in {0, .01, ..., 1} of the best
// precision at recall >= r. Detections of equal confidence enter the
// precision-recall curve together. Returns nullopt when there is neither a
// ground truth nor a detection (the class is left out of the mean) and 0
// when there are detections but no ground truth.
std::optional<double> average_precision(std::span<const ScoredFlag> flags, std::size_t num_gt);

struct ClassAp {
  int class_id = 0;
  std::size_t num_gt = 0;
  std::optional<double> ap50;
  std::optional<double> ap5095;
};

struct EvalResult {
  double precision = 0.0;
  double recall = 0.0;
  double map50 = 0.0;
  double map5095 = 0.0;
  std::vector<ClassAp> per_class;
};

struct ImageResult {
  std::vector<Detection> detections;  // post-NMS
  std::vector<GroundTruth> ground_truth;
};

// mAP50 and mAP@[.5:.05:.95] over classes; precision and recall at IoU .5
// over detections with confidence >= pr_conf_threshold (precision is 0 when
// there are none).
EvalResult evaluate(std::span<const ImageResult> images, std::size_t num_classes,
                    double pr_conf_threshold = kDefaultConfThreshold);

// IoU thresholds .50, .55, ..., .95.
std::vector<double> coco_iou_thresholds();

}  // namespace csdn
