#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "csdn/head.hpp"
#include "csdn/scene.hpp"
#include "csdn/trainer.hpp"

namespace csdn {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  HeadConfig head;
  TrainConfig train;
  SceneParams scene;
  FeatureParams features;  // channels follow head.embed_dim
  std::size_t train_scenes = 512;
  std::size_t eval_scenes = 128;
  std::uint64_t data_seed = 0;
  bool augment = true;
  double jitter_shift = 0.02;
  double jitter_scale = 0.05;
  std::uint64_t seed = 0;  // model init and data order
  std::string output_dir = "runs";

  // Applies the derived fields (feature channels, classes, pyramid levels,
  // shuffle seed) and checks cross-field consistency.
  void finalize();

  DatasetParams dataset(bool train_split) const;
};

// Format: "[section]" headers and "key = value" lines; '#' starts a comment.
// Keys left out keep their defaults. Unknown sections/keys, malformed values
// and duplicates raise ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Canonical text: every key, fixed order, round-trip float formatting.
std::string canonical_text(const RunConfig& cfg);

// Applies a single "section.key=value" override.
void set_config_value(RunConfig& cfg, const std::string& dotted_key, const std::string& value);

}  // namespace csdn
