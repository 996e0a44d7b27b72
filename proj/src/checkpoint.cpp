#include "csdn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace csdn {

namespace {

using Kind = CheckpointError::Kind;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& b) : bytes_(b) {}

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError(Kind::truncated, "checkpoint: truncated file");
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::uint64_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const HeadModel& model, const RunConfig& cfg) {
  std::string out = "CSDN";
  put_u32(out, kCheckpointVersion);
  const std::size_t length_at = out.size();
  put_u64(out, 0);
  const std::string text = canonical_text(cfg);
  put_u64(out, text.size());
  out += text;
  put_u64(out, model.params.size());
  for (const Parameter& p : model.params) {
    put_u64(out, p.name.size());
    out += p.name;
    put_u32(out, static_cast<std::uint32_t>(p.value.shape().size()));
    for (std::size_t d : p.value.shape()) put_u64(out, d);
    for (double v : p.value.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  std::string len;
  put_u64(len, out.size());
  std::memcpy(out.data() + length_at, len.data(), 8);
  return out;
}

void checkpoint_save(const std::string& path, const HeadModel& model, const RunConfig& cfg) {
  const std::string bytes = encode_checkpoint(model, cfg);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(Kind::io, "checkpoint: cannot write '" + path + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError(Kind::io, "checkpoint: write failed for '" + path + "'");
}

LoadedCheckpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || bytes.compare(0, 4, "CSDN") != 0) {
    if (bytes.size() < 4 && std::string("CSDN").compare(0, bytes.size(), bytes) == 0)
      throw CheckpointError(Kind::truncated, "checkpoint: truncated file");
    throw CheckpointError(Kind::magic, "checkpoint: bad magic bytes");
  }
  r.str(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError(Kind::version, "checkpoint: unsupported format version " + std::to_string(version));
  const std::uint64_t total = r.u64();
  if (total > bytes.size()) throw CheckpointError(Kind::truncated, "checkpoint: truncated file");
  if (total != bytes.size()) throw CheckpointError(Kind::length, "checkpoint: trailing bytes after declared length");

  RunConfig cfg;
  try {
    cfg = parse_config(r.str(r.u64()));
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::config, std::string("checkpoint: embedded ") + e.what());
  }
  HeadModel model = HeadModel::create(cfg.head, cfg.seed);
  const std::uint64_t count = r.u64();
  if (count != model.params.size())
    throw CheckpointError(Kind::shape, "checkpoint: " + std::to_string(count) + " parameters stored, config implies " +
                                          std::to_string(model.params.size()));
  for (Parameter& p : model.params) {
    const std::string name = r.str(r.u64());
    if (name != p.name) throw CheckpointError(Kind::shape, "checkpoint: expected parameter '" + p.name + "', found '" + name + "'");
    const std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u64());
    if (shape != p.value.shape())
      throw CheckpointError(Kind::shape, "checkpoint: parameter '" + name + "' has shape " + shape_string(shape) +
                                             ", config implies " + shape_string(p.value.shape()));
    r.need(8 * p.value.size());
    for (double& v : p.value.values()) v = std::bit_cast<double>(r.u64());
  }
  if (r.remaining() != 0) throw CheckpointError(Kind::length, "checkpoint: unexpected bytes after the last record");
  return LoadedCheckpoint{std::move(cfg), std::move(model)};
}

LoadedCheckpoint checkpoint_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(Kind::io, "checkpoint: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace csdn
