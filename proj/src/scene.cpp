#include "csdn/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "csdn/rng.hpp"

namespace csdn {

namespace {

constexpr double kEdgeProfile = 0.1353352832366127;  // exp(-2)

Box clamp_inside(Box b) {
  b.w = std::clamp(b.w, 1e-3, 1.0);
  b.h = std::clamp(b.h, 1e-3, 1.0);
  b.cx = std::clamp(b.cx, b.w / 2, 1.0 - b.w / 2);
  b.cy = std::clamp(b.cy, b.h / 2, 1.0 - b.h / 2);
  return b;
}

}  // namespace

void SceneParams::validate() const {
  if (classes == 0) throw std::invalid_argument("scene: classes must be positive");
  if (min_objects < 1 || max_objects < min_objects || max_objects > kMaxSceneObjects)
    throw std::invalid_argument("scene: object count range must lie in [1, 20]");
  if (!(min_scale > 0.0) || !(max_scale >= min_scale) || max_scale > 0.9)
    throw std::invalid_argument("scene: scale range must satisfy 0 < min <= max <= 0.9");
  if (!(max_aspect >= 1.0)) throw std::invalid_argument("scene: max_aspect must be >= 1");
  if (!(overlap_rate >= 0.0 && overlap_rate <= 1.0)) throw std::invalid_argument("scene: overlap_rate in [0, 1]");
}

Scene gen_scene(std::uint64_t seed, const SceneParams& params, std::size_t image_size) {
  params.validate();
  Rng rng(seed);
  Scene s;
  s.seed = seed;
  s.image_size = image_size;
  const auto count = static_cast<std::size_t>(
      rng.integer(static_cast<std::int64_t>(params.min_objects), static_cast<std::int64_t>(params.max_objects)));
  const double log_aspect = std::log(params.max_aspect);
  for (std::size_t i = 0; i < count; ++i) {
    const bool may_overlap = rng.uniform() < params.overlap_rate;
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      const double scale = rng.uniform(params.min_scale, params.max_scale);
      const double aspect = std::exp(rng.uniform(-log_aspect, log_aspect));
      Box b;
      b.w = std::min(0.95, scale * std::sqrt(aspect));
      b.h = std::min(0.95, scale / std::sqrt(aspect));
      b.cx = rng.uniform(b.w / 2, 1.0 - b.w / 2);
      b.cy = rng.uniform(b.h / 2, 1.0 - b.h / 2);
      bool ok = true;
      if (!may_overlap)
        for (const GroundTruth& o : s.objects)
          if (iou(o.box, b) > 0.0) {
            ok = false;
            break;
          }
      if (!ok) continue;
      const int cls = static_cast<int>(rng.integer(0, static_cast<std::int64_t>(params.classes) - 1));
      s.objects.push_back(GroundTruth{b, cls});
      placed = true;
    }
    if (!placed && !s.objects.empty()) break;
  }
  if (s.objects.empty()) throw std::runtime_error("gen_scene: could not place any object");
  return s;
}

void FeatureParams::validate() const {
  if (geometry_channels >= channels) throw std::invalid_argument("features: no channels left for class signatures");
  if (level_sizes.empty()) throw std::invalid_argument("features: at least one pyramid level");
  for (std::size_t i = 0; i < level_sizes.size(); ++i) {
    if (level_sizes[i] == 0) throw std::invalid_argument("features: level size must be positive");
    if (i > 0 && level_sizes[i] >= level_sizes[i - 1])
      throw std::invalid_argument("features: level sizes must strictly decrease");
  }
  if (!(noise >= 0.0)) throw std::invalid_argument("features: noise must be >= 0");
}

Tensor class_signatures(const FeatureParams& fp, std::size_t classes) {
  const std::size_t c = fp.channels - fp.geometry_channels;
  Tensor sig({classes, c});
  Rng rng(mix_seed(fp.signature_seed, 0x5167));
  for (std::size_t k = 0; k < classes; ++k) {
    double norm = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double v = rng.normal();
      sig.at(k, j) = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < c; ++j) sig.at(k, j) /= norm;
  }
  return sig;
}

double box_profile(const Box& b, double x, double y) {
  const double u = (x - b.cx) / (b.w / 2);
  const double v = (y - b.cy) / (b.h / 2);
  return std::exp(-2.0 * (u * u + v * v));
}

FeaturePyramid synth_features(const Scene& scene, const FeatureParams& fp, std::size_t classes,
                              std::uint64_t noise_seed) {
  fp.validate();
  const Tensor sig = class_signatures(fp, classes);
  const std::size_t cc = fp.channels - fp.geometry_channels;
  Rng rng(noise_seed);
  FeaturePyramid pyr;
  for (std::size_t size : fp.level_sizes) {
    FeatureMap m;
    m.height = m.width = size;
    m.stride = scene.image_size / size;
    m.values = Tensor({size * size, fp.channels});
    std::vector<double> dominant(size * size, 0.0);
    std::vector<int> owner(size * size, -1);
    for (std::size_t o = 0; o < scene.objects.size(); ++o) {
      const GroundTruth& obj = scene.objects[o];
      if (obj.class_id < 0 || static_cast<std::size_t>(obj.class_id) >= classes)
        throw std::invalid_argument("synth_features: class out of range");
      const Box& b = obj.box;
      // Profile falls below 1e-4 beyond 2.2 half-widths.
      const auto lo = [&](double c, double half) {
        return static_cast<std::size_t>(std::max(0.0, std::floor((c - 2.2 * half) * size)));
      };
      const auto hi = [&](double c, double half) {
        return std::min(size, static_cast<std::size_t>(std::max(0.0, std::ceil((c + 2.2 * half) * size))));
      };
      const std::size_t x0 = lo(b.cx, b.w / 2), x1 = hi(b.cx, b.w / 2);
      const std::size_t y0 = lo(b.cy, b.h / 2), y1 = hi(b.cy, b.h / 2);
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) {
          const double px = (static_cast<double>(x) + 0.5) / static_cast<double>(size);
          const double py = (static_cast<double>(y) + 0.5) / static_cast<double>(size);
          const double p = box_profile(b, px, py);
          const std::size_t idx = y * size + x;
          double* row = m.values.data() + idx * fp.channels;
          const double a = fp.amplitude * p;
          for (std::size_t j = 0; j < cc; ++j) row[j] += a * sig.at(static_cast<std::size_t>(obj.class_id), j);
          if (p > dominant[idx]) {
            dominant[idx] = p;
            owner[idx] = static_cast<int>(o);
          }
        }
    }
    if (fp.geometry_channels > 0) {
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const std::size_t idx = y * size + x;
          if (owner[idx] < 0) continue;
          const Box& b = scene.objects[static_cast<std::size_t>(owner[idx])].box;
          const double px = (static_cast<double>(x) + 0.5) / static_cast<double>(size);
          const double py = (static_cast<double>(y) + 0.5) / static_cast<double>(size);
          const double s = fp.amplitude * std::min(1.0, dominant[idx] / kEdgeProfile);
          const double geo[4] = {4.0 * (b.cx - px), 4.0 * (b.cy - py), 2.0 * b.w, 2.0 * b.h};
          double* row = m.values.data() + idx * fp.channels + cc;
          for (std::size_t j = 0; j < fp.geometry_channels; ++j) row[j] += s * geo[j % 4];
        }
    }
    if (fp.noise > 0.0)
      for (double& v : m.values.values()) v += fp.noise * rng.normal();
    pyr.levels.push_back(std::move(m));
  }
  return pyr;
}

SyntheticDataset::SyntheticDataset(DatasetParams params, std::uint64_t split)
    : params_(std::move(params)), split_(split) {
  params_.scene.validate();
  params_.features.validate();
  params_.scene.classes = std::max<std::size_t>(params_.scene.classes, 1);
}

Scene SyntheticDataset::scene(std::size_t index) const {
  return gen_scene(mix_seed(params_.seed, split_, index), params_.scene);
}

Sample SyntheticDataset::sample(std::size_t index, std::size_t epoch) const {
  if (index >= params_.size) throw std::out_of_range("SyntheticDataset: index out of range");
  Scene s = scene(index);
  const std::uint64_t variant = params_.augment ? epoch : 0;
  if (params_.augment && epoch > 0) {
    Rng rng(mix_seed(params_.seed ^ 0x6a09e667f3bcc909ull, split_ * 1000003ull + index, epoch));
    for (GroundTruth& o : s.objects) {
      Box b = o.box;
      b.cx += params_.jitter_shift * b.w * rng.normal();
      b.cy += params_.jitter_shift * b.h * rng.normal();
      b.w *= std::exp(params_.jitter_scale * rng.normal());
      b.h *= std::exp(params_.jitter_scale * rng.normal());
      o.box = clamp_inside(b);
    }
  }
  Sample out;
  out.pyramid = synth_features(s, params_.features, params_.scene.classes,
                               mix_seed(params_.seed ^ 0xbb67ae8584caa73bull, split_ * 1000003ull + index, variant));
  out.objects = std::move(s.objects);
  return out;
}

}  // namespace csdn
