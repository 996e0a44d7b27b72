#pragma once

#include <cstdint>
#include <vector>

#include "csdn/attention.hpp"
#include "csdn/loss.hpp"
#include "csdn/trainer.hpp"

namespace csdn {

inline constexpr std::size_t kMaxSceneObjects = 20;

struct SceneParams {
  std::size_t classes = 8;
  std::size_t min_objects = 1;
  std::size_t max_objects = 6;
  double min_scale = 0.08;  // sqrt(w*h)
  double max_scale = 0.30;
  double max_aspect = 1.6;  // w/h sampled log-uniformly in [1/max_aspect, max_aspect]
  // Probability that a new object may overlap earlier ones; 0 keeps every
  // pair of boxes disjoint.
  double overlap_rate = 0.3;

  void validate() const;
};

struct Scene {
  std::vector<GroundTruth> objects;
  std::size_t image_size = 256;
  std::uint64_t seed = 0;
};

Scene gen_scene(std::uint64_t seed, const SceneParams& params, std::size_t image_size = 256);

struct FeatureParams {
  std::size_t channels = 64;
  // Last channels carry per-object geometry (centre offset and size); the
  // rest carry the class signature.
  std::size_t geometry_channels = 4;
  std::vector<std::size_t> level_sizes{32, 16, 8};
  double amplitude = 1.0;
  double noise = 0.1;
  std::uint64_t signature_seed = 0;

  void validate() const;
};

// Unit-norm class signatures over the non-geometry channels, [classes x c].
Tensor class_signatures(const FeatureParams& fp, std::size_t classes);

// Gaussian profile of a box evaluated at normalized point (x, y): 1 at the
// centre and exp(-2) on the box edge along each axis.
double box_profile(const Box& b, double x, double y);

// Renders the scene onto each level at its pixel centres. noise_seed drives
// the additive Gaussian noise.
FeaturePyramid synth_features(const Scene& scene, const FeatureParams& fp, std::size_t classes,
                              std::uint64_t noise_seed);

struct DatasetParams {
  SceneParams scene;
  FeatureParams features;
  std::size_t size = 512;
  std::uint64_t seed = 0;
  bool augment = false;
  double jitter_shift = 0.02;  // fraction of box size
  double jitter_scale = 0.05;  // relative
};

class SyntheticDataset : public Dataset {
 public:
  // split separates the scene streams of train and eval sets built from the
  // same seed.
  SyntheticDataset(DatasetParams params, std::uint64_t split);

  std::size_t size() const override { return params_.size; }
  Sample sample(std::size_t index, std::size_t epoch) const override;
  Scene scene(std::size_t index) const;

 private:
  DatasetParams params_;
  std::uint64_t split_;
};

}  // namespace csdn
