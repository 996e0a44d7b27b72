#include "csdn/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "csdn/optimizer.hpp"
#include "csdn/rng.hpp"
#include "csdn/scene.hpp"

namespace csdn {

namespace {

constexpr const char* kTsvHeader = "label\ttopology\tlayers\tffn_hidden\tparameters\tseed\tstatus\tP\tR\tmAP50\tmAP50-95\n";

constexpr std::uint64_t kTrainSplit = 1;
constexpr std::uint64_t kEvalSplit = 2;

std::string fmt(double v, int digits = 4) {
  if (std::isnan(v)) return "nan";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string fmt_exact(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

template <typename F>
double mean_of(const ReportRow& row, F field) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const SeedOutcome& s : row.seeds)
    if (s.eval) {
      sum += field(*s.eval);
      ++n;
    }
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

SeedOutcome run_seed(const RunConfig& cfg) {
  SeedOutcome out;
  out.seed = cfg.seed;
  try {
    TrainedRun run = train_run(cfg);
    out.eval = run.final_eval;
    out.epochs_run = run.result.records.empty() ? 0 : run.result.records.back().epoch;
  } catch (const TrainingDivergence& e) {
    out.failure = e.what();
  }
  return out;
}

}  // namespace

SyntheticDataset training_dataset(const RunConfig& cfg) { return SyntheticDataset(cfg.dataset(true), kTrainSplit); }

SyntheticDataset held_out_dataset(const RunConfig& cfg) { return SyntheticDataset(cfg.dataset(false), kEvalSplit); }

TrainedRun train_run(const RunConfig& cfg, const RecordSink& sink) {
  RunConfig c = cfg;
  c.finalize();
  const SyntheticDataset train_set = training_dataset(c);
  const SyntheticDataset eval_set = held_out_dataset(c);
  TrainedRun run{HeadModel::create(c.head, c.seed), {}, {}};
  const bool has_eval = c.eval_scenes > 0;
  run.result = train(run.model, train_set, has_eval ? &eval_set : nullptr, c.train, sink);
  if (has_eval && !run.result.records.empty() && run.result.records.back().eval)
    run.final_eval = *run.result.records.back().eval;
  return run;
}

std::size_t parameter_count(const HeadConfig& head) { return HeadModel::create(head, 0).params.scalar_count(); }

std::size_t budget_ffn_hidden(HeadConfig head, std::size_t target) {
  head.ffn_hidden = 8;
  const double c8 = static_cast<double>(parameter_count(head));
  head.ffn_hidden = 16;
  const double slope = (static_cast<double>(parameter_count(head)) - c8) / 8.0;
  const double ideal = 8.0 + (static_cast<double>(target) - c8) / slope;
  const auto guess = static_cast<std::size_t>(std::max(1.0, std::round(ideal / 8.0)));
  std::size_t best = 8;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t k = guess > 1 ? guess - 1 : 1; k <= guess + 1; ++k) {
    head.ffn_hidden = 8 * k;
    const double gap = std::abs(static_cast<double>(parameter_count(head)) - static_cast<double>(target));
    if (gap < best_gap) {
      best_gap = gap;
      best = 8 * k;
    }
  }
  return best;
}

HeadConfig grad_check_head_config(const std::string& topology) {
  HeadConfig h;
  h.num_layers = 1;
  h.num_queries = 4;
  h.embed_dim = 16;
  h.heads = 2;
  h.classes = 3;
  h.topology = Topology::parse(topology);
  h.deform_heads = 2;
  h.deform_points = 2;
  h.pyramid_levels = 2;
  h.ffn_hidden = 24;
  return h;
}

GradCheckResult grad_check_head(const HeadConfig& head, std::uint64_t seed, double epsilon) {
  head.validate();
  SceneParams sp;
  sp.classes = head.classes;
  sp.min_objects = 2;
  sp.max_objects = 3;
  sp.min_scale = 0.2;
  sp.max_scale = 0.4;
  const Scene scene = gen_scene(mix_seed(seed, 0x6763), sp);
  FeatureParams fp;
  fp.channels = head.embed_dim;
  fp.level_sizes.clear();
  for (std::size_t l = 0; l < head.pyramid_levels; ++l) fp.level_sizes.push_back(std::size_t{8} >> l);
  fp.signature_seed = seed;
  const FeaturePyramid pyr = synth_features(scene, fp, head.classes, mix_seed(seed, 0x6e6f));

  HeadModel model = HeadModel::create(head, seed);
  // Move the query boxes off their regular grid so no pair sits on an IoU
  // boundary, and give the zero-initialized maps some weight.
  Rng rng(mix_seed(seed, 0x7065));
  for (Parameter& p : model.params)
    for (double& v : p.value.values()) v += 0.05 * rng.normal();

  LossConfig lc;
  std::vector<Assignment> frozen;
  {
    Graph g(false);
    const HeadOutput out = head_forward(g, model, pyr);
    frozen = detection_loss(g, out, scene.objects, lc).assignments;
  }
  const ScalarFn f = [&](Graph& g) {
    const HeadOutput out = head_forward(g, model, pyr);
    return detection_loss(g, out, scene.objects, lc, &frozen).total;
  };
  std::vector<Parameter*> params;
  for (Parameter& p : model.params) params.push_back(&p);
  return grad_check(f, params, epsilon);
}

std::size_t ReportRow::succeeded() const {
  return static_cast<std::size_t>(std::count_if(seeds.begin(), seeds.end(), [](const SeedOutcome& s) { return s.eval.has_value(); }));
}
double ReportRow::mean_precision() const { return mean_of(*this, [](const EvalResult& e) { return e.precision; }); }
double ReportRow::mean_recall() const { return mean_of(*this, [](const EvalResult& e) { return e.recall; }); }
double ReportRow::mean_map50() const { return mean_of(*this, [](const EvalResult& e) { return e.map50; }); }
double ReportRow::mean_map5095() const { return mean_of(*this, [](const EvalResult& e) { return e.map5095; }); }

double ReportRow::stderr_map50() const {
  const std::size_t n = succeeded();
  if (n < 2) return 0.0;
  const double m = mean_map50();
  double ss = 0.0;
  for (const SeedOutcome& s : seeds)
    if (s.eval) ss += (s.eval->map50 - m) * (s.eval->map50 - m);
  return std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

Report run_ablation(const RunConfig& base, const std::vector<std::string>& topologies,
                    const std::vector<std::uint64_t>& seeds, bool match_budget, const ProgressSink& progress) {
  RunConfig b = base;
  b.finalize();
  Report rep;
  rep.title = "attention topology ablation";
  rep.config_text = canonical_text(b);
  rep.seeds = seeds;
  const std::size_t target = parameter_count(b.head);
  for (const std::string& t : topologies) {
    RunConfig cfg = b;
    try {
      cfg.head.topology = Topology::parse(t);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("ablation: ") + e.what());
    }
    if (match_budget) cfg.head.ffn_hidden = budget_ffn_hidden(cfg.head, target);
    cfg.finalize();
    ReportRow row;
    row.label = cfg.head.topology.str();
    row.topology = row.label;
    row.layers = cfg.head.num_layers;
    row.ffn_hidden = cfg.head.ffn_width();
    row.parameters = parameter_count(cfg.head);
    for (std::uint64_t s : seeds) {
      cfg.seed = s;
      cfg.finalize();
      row.seeds.push_back(run_seed(cfg));
      if (progress) {
        const SeedOutcome& o = row.seeds.back();
        progress(row.label + " seed=" + std::to_string(s) +
                 (o.eval ? " mAP50=" + fmt(o.eval->map50) : " FAILED: " + o.failure));
      }
    }
    rep.rows.push_back(std::move(row));
  }
  rep.footnotes = ablation_footnotes(rep);
  return rep;
}

Report sweep_layers(const RunConfig& base, const std::vector<std::size_t>& depths,
                    const std::vector<std::uint64_t>& seeds, const ProgressSink& progress) {
  RunConfig b = base;
  b.finalize();
  Report rep;
  rep.title = "decoder depth sweep";
  rep.config_text = canonical_text(b);
  rep.seeds = seeds;
  for (std::size_t depth : depths) {
    RunConfig cfg = b;
    cfg.head.num_layers = depth;
    cfg.finalize();
    ReportRow row;
    row.label = std::to_string(depth) + " layers";
    row.topology = cfg.head.topology.str();
    row.layers = depth;
    row.ffn_hidden = cfg.head.ffn_width();
    row.parameters = parameter_count(cfg.head);
    for (std::uint64_t s : seeds) {
      cfg.seed = s;
      cfg.finalize();
      row.seeds.push_back(run_seed(cfg));
      if (progress) {
        const SeedOutcome& o = row.seeds.back();
        progress(row.label + " seed=" + std::to_string(s) +
                 (o.eval ? " mAP50=" + fmt(o.eval->map50) : " FAILED: " + o.failure));
      }
    }
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

std::vector<std::string> ablation_footnotes(const Report& r) {
  std::vector<std::string> notes;
  auto find = [&](const std::string& label) -> const ReportRow* {
    for (const ReportRow& row : r.rows)
      if (row.label == label) return &row;
    return nullptr;
  };
  const ReportRow* sd = find("s+d");
  const ReportRow* base = find("s-d");
  if (sd && base) {
    const double a = sd->mean_map50(), b = base->mean_map50();
    const bool ok = a < b;
    notes.push_back(std::string(ok ? "ordering holds" : "ordering FAILS") + ": s+d mean mAP50 " + fmt(a) +
                    (ok ? " < " : " >= ") + "s-d mean mAP50 " + fmt(b));
  }
  const ReportRow* full = find("n+b+d");
  if (full) {
    for (const char* single : {"b+d", "n+d", "s+d"}) {
      const ReportRow* other = find(single);
      if (!other) continue;
      const double a = full->mean_map50();
      const double bound = other->mean_map50() - other->stderr_map50();
      const bool ok = a >= bound;
      notes.push_back(std::string(ok ? "ordering holds" : "ordering FAILS") + ": n+b+d mean mAP50 " + fmt(a) +
                      (ok ? " >= " : " < ") + std::string(single) + " mean minus one standard error " + fmt(bound));
    }
  }
  return notes;
}

std::string format_tsv(const Report& r) {
  std::ostringstream out;
  out << "# " << r.title << "\n";
  out << "# seeds:";
  for (std::size_t i = 0; i < r.seeds.size(); ++i) out << (i ? "," : " ") << r.seeds[i];
  out << "\n";
  std::istringstream cfg(r.config_text);
  for (std::string line; std::getline(cfg, line);) out << "# config: " << line << "\n";
  for (const std::string& n : r.footnotes) out << "# note: " << n << "\n";
  out << kTsvHeader;
  for (const ReportRow& row : r.rows)
    for (const SeedOutcome& s : row.seeds) {
      out << row.label << '\t' << row.topology << '\t' << row.layers << '\t' << row.ffn_hidden << '\t' << row.parameters
          << '\t' << s.seed << '\t';
      if (s.eval)
        out << "ok\t" << fmt_exact(s.eval->precision) << '\t' << fmt_exact(s.eval->recall) << '\t'
            << fmt_exact(s.eval->map50) << '\t' << fmt_exact(s.eval->map5095) << '\n';
      else
        out << "FAILED\t\t\t\t\n";
    }
  return out.str();
}

Report parse_tsv(const std::string& text) {
  Report r;
  std::istringstream in(text);
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string body = line.size() > 2 ? line.substr(2) : "";
      if (body.rfind("config: ", 0) == 0) {
        r.config_text += body.substr(8) + "\n";
      } else if (body == "config:") {
        r.config_text += "\n";
      } else if (body.rfind("note: ", 0) == 0) {
        r.footnotes.push_back(body.substr(6));
      } else if (body.rfind("seeds:", 0) == 0) {
        const std::string list = body.size() > 7 ? body.substr(7) : "";
        if (!list.empty())
          for (const std::string& s : split(list, ',')) r.seeds.push_back(std::stoull(s));
      } else if (r.title.empty()) {
        r.title = body;
      }
      continue;
    }
    if (!header_seen) {
      if (line + "\n" != kTsvHeader) throw std::invalid_argument("report: unexpected header '" + line + "'");
      header_seen = true;
      continue;
    }
    const std::vector<std::string> f = split(line, '\t');
    if (f.size() != 11) throw std::invalid_argument("report: malformed row '" + line + "'");
    if (r.rows.empty() || r.rows.back().label != f[0]) {
      ReportRow row;
      row.label = f[0];
      row.topology = f[1];
      row.layers = std::stoul(f[2]);
      row.ffn_hidden = std::stoul(f[3]);
      row.parameters = std::stoul(f[4]);
      r.rows.push_back(std::move(row));
    }
    SeedOutcome s;
    s.seed = std::stoull(f[5]);
    if (f[6] == "ok") {
      EvalResult e;
      e.precision = std::stod(f[7]);
      e.recall = std::stod(f[8]);
      e.map50 = std::stod(f[9]);
      e.map5095 = std::stod(f[10]);
      s.eval = e;
    } else {
      s.failure = "FAILED";
    }
    r.rows.back().seeds.push_back(std::move(s));
  }
  if (!header_seen) throw std::invalid_argument("report: no table found");
  return r;
}

std::string format_text(const Report& r) {
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"Config", "Layers", "Params", "P", "R", "mAP50", "mAP50-95", "+/-SE", "Runs"});
  for (const ReportRow& row : r.rows) {
    const std::size_t ok = row.succeeded();
    if (ok == 0) {
      cells.push_back({row.label, std::to_string(row.layers), std::to_string(row.parameters), "FAILED", "", "", "", "",
                       "0/" + std::to_string(row.seeds.size())});
      continue;
    }
    cells.push_back({row.label, std::to_string(row.layers), std::to_string(row.parameters),
                     fmt(row.mean_precision()), fmt(row.mean_recall()), fmt(row.mean_map50()),
                     fmt(row.mean_map5095()), fmt(row.stderr_map50()),
                     std::to_string(ok) + "/" + std::to_string(row.seeds.size()) +
                         (ok < row.seeds.size() ? " (FAILED " + std::to_string(row.seeds.size() - ok) + ")" : "")});
  }
  std::vector<std::size_t> width(cells[0].size(), 0);
  for (const auto& row : cells)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());

  std::ostringstream out;
  out << r.title << "\n";
  out << "seeds:";
  for (std::size_t i = 0; i < r.seeds.size(); ++i) out << (i ? "," : " ") << r.seeds[i];
  out << "\n\n";
  for (std::size_t k = 0; k < cells.size(); ++k) {
    for (std::size_t i = 0; i < cells[k].size(); ++i) {
      const std::string& c = cells[k][i];
      if (i == 0)
        out << c << std::string(width[i] - c.size(), ' ');
      else
        out << "  " << std::string(width[i] - c.size(), ' ') << c;
    }
    out << "\n";
    if (k == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w + 2;
      out << std::string(total - 2, '-') << "\n";
    }
  }
  if (!r.footnotes.empty()) {
    out << "\n";
    for (std::size_t i = 0; i < r.footnotes.size(); ++i) out << "[" << i + 1 << "] " << r.footnotes[i] << "\n";
  }
  out << "\nconfiguration:\n" << r.config_text;
  return out.str();
}

}  // namespace csdn
