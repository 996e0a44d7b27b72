#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "csdn/attention.hpp"
#include "csdn/evaluation.hpp"
#include "csdn/head.hpp"
#include "csdn/loss.hpp"
#include "csdn/optimizer.hpp"

namespace csdn {

struct Sample {
  FeaturePyramid pyramid;
  std::vector<GroundTruth> objects;
};

// Source of training or evaluation samples. sample() must be deterministic in
// (index, epoch); evaluation sets ignore the epoch.
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::size_t size() const = 0;
  virtual Sample sample(std::size_t index, std::size_t epoch) const = 0;
};

struct EvalSettings {
  double conf_threshold = kDefaultConfThreshold;  // precision/recall operating point
  double iou_threshold = kDefaultNmsIouThreshold;  // NMS
  double map_conf_threshold = 0.001;               // detections entering AP
};

struct TrainConfig {
  AdamWConfig optim;
  LossConfig loss;
  EvalSettings eval;
  std::size_t epochs = 24;
  std::size_t batch_size = 4;
  // Linear warmup to optim.lr over this many steps, constant afterwards.
  std::size_t warmup_steps = 100;
  double grad_clip = 0.1;  // 0 disables
  std::uint64_t shuffle_seed = 0;
  // Stop after the first epoch whose held-out mAP50 reaches this; 0 disables.
  double stop_at_map50 = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based; 0 is the untrained model
  std::size_t step = 0;   // optimizer steps taken so far
  double lr = 0.0;
  LossComponents train_loss;  // mean over the epoch's samples
  std::optional<EvalResult> eval;
  double seconds = 0.0;
};

// One line per record: "epoch=... step=... loss=... cls=... l1=... giou=...
// P=... R=... mAP50=... mAP50-95=...". Floats use round-trip precision.
std::string format_record(const EpochRecord& r);

struct TrainResult {
  std::vector<EpochRecord> records;
  bool stopped_early = false;
};

// Decodes the final-layer predictions, clipping box corners to the image: per
// query the arg-max class with its sigmoid score as confidence.
std::vector<Detection> decode_detections(const Graph& g, const LayerPrediction& pred);
std::vector<Detection> predict(HeadModel& model, const FeaturePyramid& pyramid, double conf_threshold,
                               double iou_threshold);

EvalResult evaluate_model(HeadModel& model, const Dataset& data, const EvalSettings& settings);

double learning_rate_at(const TrainConfig& cfg, std::size_t step);

using RecordSink = std::function<void(const EpochRecord&)>;

// Deep-supervised training with AdamW. Each epoch visits the training set in a
// seeded permutation; when an evaluation set is given it is scored after
// every epoch (and once before training). Throws TrainingDivergence with the
// step index when the loss becomes non-finite.
TrainResult train(HeadModel& model, const Dataset& train_set, const Dataset* eval_set, const TrainConfig& cfg,
                  const RecordSink& sink = {});

}  // namespace csdn
