#include "csdn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "csdn/rng.hpp"

namespace csdn {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string format_record(const EpochRecord& r) {
  std::string s = "epoch=" + std::to_string(r.epoch) + " step=" + std::to_string(r.step) + " lr=" + num(r.lr) +
                  " loss=" + num(r.train_loss.total) + " cls=" + num(r.train_loss.cls) + " l1=" + num(r.train_loss.l1) +
                  " giou=" + num(r.train_loss.giou);
  if (r.eval) {
    s += " P=" + num(r.eval->precision) + " R=" + num(r.eval->recall) + " mAP50=" + num(r.eval->map50) +
         " mAP50-95=" + num(r.eval->map5095);
  }
  return s;
}

std::vector<Detection> decode_detections(const Graph& g, const LayerPrediction& pred) {
  const Tensor& logits = g.value(pred.logits);
  const std::vector<Box> boxes = boxes_of(g, pred.boxes);
  std::vector<Detection> out;
  out.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    Detection d;
    const Corners c = to_corners(boxes[i]);
    d.box = from_corners(Corners{std::clamp(c.x1, 0.0, 1.0), std::clamp(c.y1, 0.0, 1.0), std::clamp(c.x2, 0.0, 1.0),
                                 std::clamp(c.y2, 0.0, 1.0)});
    d.class_scores.resize(logits.cols());
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      d.class_scores[c] = 1.0 / (1.0 + std::exp(-logits.at(i, c)));
      if (c == 0 || d.class_scores[c] > d.confidence) {
        d.confidence = d.class_scores[c];
        d.class_id = static_cast<int>(c);
      }
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Detection> predict(HeadModel& model, const FeaturePyramid& pyramid, double conf_threshold,
                               double iou_threshold) {
  Graph g(false);
  HeadOutput out = head_forward(g, model, pyramid);
  const std::vector<Detection> raw = decode_detections(g, out.final());
  return nms(raw, conf_threshold, iou_threshold);
}

EvalResult evaluate_model(HeadModel& model, const Dataset& data, const EvalSettings& settings) {
  std::vector<ImageResult> images;
  images.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    Sample s = data.sample(i, 0);
    images.push_back(ImageResult{predict(model, s.pyramid, settings.map_conf_threshold, settings.iou_threshold),
                                 std::move(s.objects)});
  }
  return evaluate(images, model.config.classes, settings.conf_threshold);
}

double learning_rate_at(const TrainConfig& cfg, std::size_t step) {
  if (cfg.warmup_steps == 0 || step >= cfg.warmup_steps) return cfg.optim.lr;
  return cfg.optim.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
}

TrainResult train(HeadModel& model, const Dataset& train_set, const Dataset* eval_set, const TrainConfig& cfg,
                  const RecordSink& sink) {
  if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");
  if (cfg.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  using clock = std::chrono::steady_clock;
  TrainResult result;

  auto emit = [&](EpochRecord r) {
    if (sink) sink(r);
    result.records.push_back(std::move(r));
  };

  {
    EpochRecord r0;
    const auto t0 = clock::now();
    if (eval_set) r0.eval = evaluate_model(model, *eval_set, cfg.eval);
    r0.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    emit(std::move(r0));
  }

  std::size_t step = 0;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(cfg.shuffle_seed, epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i - 1)))]);

    LossComponents sum;
    double lr = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      model.params.zero_grad();
      for (std::size_t k = begin; k < end; ++k) {
        const Sample s = train_set.sample(order[k], epoch);
        Graph g(true);
        HeadOutput out = head_forward(g, model, s.pyramid);
        for (const LayerPrediction& l : out.layers)
          if (!g.value(l.logits).all_finite() || !g.value(l.boxes).all_finite())
            throw TrainingDivergence("non-finite predictions at step " + std::to_string(step), step);
        DetectionLoss loss = detection_loss(g, out, s.objects, cfg.loss);
        if (!std::isfinite(loss.breakdown.total))
          throw TrainingDivergence("non-finite loss at step " + std::to_string(step), step);
        g.backward(loss.total);
        sum.total += loss.breakdown.total;
        sum.cls += loss.breakdown.cls;
        sum.l1 += loss.breakdown.l1;
        sum.giou += loss.breakdown.giou;
      }
      const double inv = 1.0 / static_cast<double>(end - begin);
      for (Parameter& p : model.params)
        if (p.value.has_grad())
          for (double& gv : p.value.grad()) gv *= inv;
      if (cfg.grad_clip > 0.0) clip_grad_norm(model.params, cfg.grad_clip);
      AdamWConfig oc = cfg.optim;
      lr = oc.lr = learning_rate_at(cfg, step);
      try {
        adamw_step(model.params, oc);
      } catch (const TrainingDivergence& e) {
        throw TrainingDivergence(std::string(e.what()) + " at step " + std::to_string(step), step);
      }
      for (const Parameter& p : model.params)
        if (!p.value.all_finite())
          throw TrainingDivergence("parameter '" + p.name + "' became non-finite at step " + std::to_string(step), step);
      ++step;
    }

    EpochRecord r;
    r.epoch = epoch;
    r.step = step;
    r.lr = lr;
    const double n = static_cast<double>(order.size());
    r.train_loss = LossComponents{sum.total / n, sum.cls / n, sum.l1 / n, sum.giou / n};
    if (eval_set) r.eval = evaluate_model(model, *eval_set, cfg.eval);
    r.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    const bool stop = cfg.stop_at_map50 > 0.0 && r.eval && r.eval->map50 >= cfg.stop_at_map50;
    emit(std::move(r));
    if (stop) {
      result.stopped_early = true;
      break;
    }
  }
  model.params.zero_grad();
  return result;
}

}  // namespace csdn
