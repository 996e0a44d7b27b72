#include "csdn/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

namespace csdn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
}

std::string fmt_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, trim(item)));
  if (out.empty()) throw ConfigError("config: '" + key + "' expects a comma-separated list");
  return out;
}

struct Entry {
  const char* section;
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <typename M>
Entry size_entry(const char* sec, const char* key, M member) {
  return {sec, key, [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, const std::string& k, const std::string& v) {
            member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_u64(k, v));
          }};
}

template <typename M>
Entry double_entry(const char* sec, const char* key, M member) {
  return {sec, key, [member](const RunConfig& c) { return fmt_double(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_double(k, v); }};
}

template <typename M>
Entry bool_entry(const char* sec, const char* key, M member) {
  return {sec, key, [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)) ? "true" : "false"; },
          [member](RunConfig& c, const std::string& k, const std::string& v) { member(c) = parse_bool(k, v); }};
}

#define CSDN_REF(expr) [](RunConfig& c) -> auto& { return expr; }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      size_entry("head", "num_layers", CSDN_REF(c.head.num_layers)),
      size_entry("head", "num_queries", CSDN_REF(c.head.num_queries)),
      size_entry("head", "embed_dim", CSDN_REF(c.head.embed_dim)),
      size_entry("head", "heads", CSDN_REF(c.head.heads)),
      size_entry("head", "classes", CSDN_REF(c.head.classes)),
      Entry{"head", "topology", [](const RunConfig& c) { return c.head.topology.str(); },
            [](RunConfig& c, const std::string&, const std::string& v) {
              try {
                c.head.topology = Topology::parse(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("config: ") + e.what());
              }
            }},
      bool_entry("head", "position_encoding", CSDN_REF(c.head.position_encoding)),
      size_entry("head", "deform_heads", CSDN_REF(c.head.deform_heads)),
      size_entry("head", "deform_points", CSDN_REF(c.head.deform_points)),
      size_entry("head", "ffn_hidden", CSDN_REF(c.head.ffn_hidden)),

      size_entry("data", "train_scenes", CSDN_REF(c.train_scenes)),
      size_entry("data", "eval_scenes", CSDN_REF(c.eval_scenes)),
      size_entry("data", "seed", CSDN_REF(c.data_seed)),
      size_entry("data", "min_objects", CSDN_REF(c.scene.min_objects)),
      size_entry("data", "max_objects", CSDN_REF(c.scene.max_objects)),
      double_entry("data", "min_scale", CSDN_REF(c.scene.min_scale)),
      double_entry("data", "max_scale", CSDN_REF(c.scene.max_scale)),
      double_entry("data", "max_aspect", CSDN_REF(c.scene.max_aspect)),
      double_entry("data", "overlap_rate", CSDN_REF(c.scene.overlap_rate)),
      Entry{"data", "level_sizes", [](const RunConfig& c) { return fmt_sizes(c.features.level_sizes); },
            [](RunConfig& c, const std::string& k, const std::string& v) { c.features.level_sizes = parse_sizes(k, v); }},
      size_entry("data", "geometry_channels", CSDN_REF(c.features.geometry_channels)),
      double_entry("data", "amplitude", CSDN_REF(c.features.amplitude)),
      double_entry("data", "noise", CSDN_REF(c.features.noise)),
      bool_entry("data", "augment", CSDN_REF(c.augment)),
      double_entry("data", "jitter_shift", CSDN_REF(c.jitter_shift)),
      double_entry("data", "jitter_scale", CSDN_REF(c.jitter_scale)),

      double_entry("loss", "focal_alpha", CSDN_REF(c.train.loss.focal_alpha)),
      double_entry("loss", "focal_gamma", CSDN_REF(c.train.loss.focal_gamma)),
      double_entry("loss", "cost_class", CSDN_REF(c.train.loss.cost_class)),
      double_entry("loss", "cost_l1", CSDN_REF(c.train.loss.cost_l1)),
      double_entry("loss", "cost_giou", CSDN_REF(c.train.loss.cost_giou)),
      double_entry("loss", "weight_class", CSDN_REF(c.train.loss.weight_class)),
      double_entry("loss", "weight_l1", CSDN_REF(c.train.loss.weight_l1)),
      double_entry("loss", "weight_giou", CSDN_REF(c.train.loss.weight_giou)),
      bool_entry("loss", "normalize", CSDN_REF(c.train.loss.normalize)),

      double_entry("optim", "lr", CSDN_REF(c.train.optim.lr)),
      double_entry("optim", "beta1", CSDN_REF(c.train.optim.beta1)),
      double_entry("optim", "beta2", CSDN_REF(c.train.optim.beta2)),
      double_entry("optim", "eps", CSDN_REF(c.train.optim.eps)),
      double_entry("optim", "weight_decay", CSDN_REF(c.train.optim.weight_decay)),
      // "Standard scheduling" read as linear warmup then constant rate.
      size_entry("optim", "warmup_steps", CSDN_REF(c.train.warmup_steps)),
      double_entry("optim", "grad_clip", CSDN_REF(c.train.grad_clip)),
      size_entry("optim", "batch_size", CSDN_REF(c.train.batch_size)),
      size_entry("optim", "epochs", CSDN_REF(c.train.epochs)),
      double_entry("optim", "stop_at_map50", CSDN_REF(c.train.stop_at_map50)),

      double_entry("eval", "conf_threshold", CSDN_REF(c.train.eval.conf_threshold)),
      double_entry("eval", "iou_threshold", CSDN_REF(c.train.eval.iou_threshold)),
      double_entry("eval", "map_conf_threshold", CSDN_REF(c.train.eval.map_conf_threshold)),

      size_entry("run", "seed", CSDN_REF(c.seed)),
      Entry{"run", "output_dir", [](const RunConfig& c) { return c.output_dir; },
            [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }},
  };
  return table;
}

#undef CSDN_REF

const Entry& find_entry(const std::string& section, const std::string& key) {
  for (const Entry& e : entries())
    if (section == e.section && key == e.key) return e;
  throw ConfigError("config: unknown key '" + section + "." + key + "'");
}

}  // namespace

void RunConfig::finalize() {
  features.channels = head.embed_dim;
  features.signature_seed = data_seed;
  scene.classes = head.classes;
  head.pyramid_levels = features.level_sizes.size();
  train.shuffle_seed = seed;
  try {
    head.validate();
    scene.validate();
    features.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (train_scenes == 0) throw ConfigError("config: data.train_scenes must be positive");
  if (train.batch_size == 0) throw ConfigError("config: optim.batch_size must be positive");
  if (!(train.optim.lr > 0.0)) throw ConfigError("config: optim.lr must be positive");
  for (std::size_t s : features.level_sizes)
    if (256 % s != 0) throw ConfigError("config: data.level_sizes must divide the 256-pixel image");
}

DatasetParams RunConfig::dataset(bool train_split) const {
  DatasetParams p;
  p.scene = scene;
  p.features = features;
  p.size = train_split ? train_scenes : eval_scenes;
  p.seed = data_seed;
  p.augment = train_split && augment;
  p.jitter_shift = jitter_shift;
  p.jitter_scale = jitter_scale;
  return p;
}

void set_config_value(RunConfig& cfg, const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  if (dot == std::string::npos) throw ConfigError("config: expected section.key, got '" + dotted_key + "'");
  find_entry(dotted_key.substr(0, dot), dotted_key.substr(dot + 1)).set(cfg, dotted_key, value);
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::string section;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = " (line " + std::to_string(lineno) + ")";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config: malformed section header" + where);
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const Entry& e : entries()) known = known || section == e.section;
      if (!known) throw ConfigError("config: unknown section '" + section + "'" + where);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: expected key = value" + where);
    if (section.empty()) throw ConfigError("config: key outside of a section" + where);
    const std::string key = trim(line.substr(0, eq));
    const std::string full = section + "." + key;
    if (!seen.insert(full).second) throw ConfigError("config: duplicate key '" + full + "'" + where);
    find_entry(section, key).set(cfg, full, trim(line.substr(eq + 1)));
  }
  cfg.finalize();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string canonical_text(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const Entry& e : entries()) {
    if (section != e.section) {
      if (!section.empty()) out += "\n";
      section = e.section;
      out += "[" + section + "]\n";
    }
    out += std::string(e.key) + " = " + e.get(cfg) + "\n";
  }
  return out;
}

}  // namespace csdn
