#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "csdn/config.hpp"
#include "csdn/head.hpp"

namespace csdn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, magic, version, truncated, length, shape, config };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Layout (little-endian): "CSDN", u32 version, u64 total file length,
// u64 config length + canonical config text, u64 record count, then per
// parameter: u64 name length, name, u32 rank, u64 dims, f64 values.
std::string encode_checkpoint(const HeadModel& model, const RunConfig& cfg);
void checkpoint_save(const std::string& path, const HeadModel& model, const RunConfig& cfg);

struct LoadedCheckpoint {
  RunConfig config;
  HeadModel model;
};

// Rebuilds the model from the embedded config and fills in the stored
// values. Nothing is returned unless the whole file validates.
LoadedCheckpoint decode_checkpoint(const std::string& bytes);
LoadedCheckpoint checkpoint_load(const std::string& path);

}  // namespace csdn
