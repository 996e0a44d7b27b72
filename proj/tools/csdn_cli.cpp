#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "csdn/checkpoint.hpp"
#include "csdn/config.hpp"
#include "csdn/experiments.hpp"
#include "csdn/optimizer.hpp"
#include "csdn/scene.hpp"

namespace fs = std::filesystem;
using namespace csdn;

namespace {

// Exit codes by failure category.
enum Exit : int {
  kOk = 0,
  kRuntime = 1,
  kConfig = 2,
  kCheckpoint = 3,
  kDivergence = 4,
  kCheckFailed = 5,
};

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string topology;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config,-c", c.config_path, "Run configuration file");
  cmd->add_option("--set", c.overrides, "Override a key, e.g. --set optim.lr=3e-4");
  cmd->add_option("--seed", c.seed, "Run seed");
  cmd->add_option("--out,-o", c.out, "Output directory");
  cmd->add_option("--topology", c.topology, "Topology override, e.g. n+b+d or s-d");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  for (const std::string& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (!c.topology.empty()) set_config_value(cfg, "head.topology", c.topology);
  cfg.finalize();
  return cfg;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
  f << text;
}

std::string metrics_line(const EvalResult& e) {
  std::ostringstream s;
  s.precision(6);
  s << std::fixed << "P=" << e.precision << " R=" << e.recall << " mAP50=" << e.map50 << " mAP50-95=" << e.map5095;
  return s.str();
}

std::vector<std::uint64_t> seed_list(std::size_t count, std::uint64_t first) {
  std::vector<std::uint64_t> s;
  for (std::size_t i = 0; i < count; ++i) s.push_back(first + i);
  return s;
}

int cmd_train(const Common& c) {
  const RunConfig cfg = resolve(c);
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  write_file(dir / "config.ini", canonical_text(cfg));
  std::ofstream log(dir / "metrics.log", std::ios::app);
  TrainedRun run = train_run(cfg, [&](const EpochRecord& r) {
    const std::string line = format_record(r);
    log << line << "\n";
    log.flush();
    std::cout << line << " (" << r.seconds << " s)" << std::endl;
  });
  checkpoint_save((dir / "checkpoint.bin").string(), run.model, cfg);
  std::cout << "final: " << metrics_line(run.final_eval) << "\n";
  std::cout << "wrote " << (dir / "checkpoint.bin").string() << "\n";
  return kOk;
}

int cmd_eval(const std::string& path, const std::size_t eval_scenes) {
  LoadedCheckpoint ck = checkpoint_load(path);
  RunConfig cfg = ck.config;
  if (eval_scenes) cfg.eval_scenes = eval_scenes;
  const SyntheticDataset data = held_out_dataset(cfg);
  const EvalResult e = evaluate_model(ck.model, data, cfg.train.eval);
  std::cout << metrics_line(e) << "\n";
  for (const ClassAp& c : e.per_class) {
    std::cout << "class " << c.class_id << " gt=" << c.num_gt;
    if (c.ap50) std::cout << " AP50=" << *c.ap50 << " AP50-95=" << *c.ap5095;
    std::cout << "\n";
  }
  return kOk;
}

void emit_report(const Report& r, const fs::path& dir, const std::string& stem) {
  fs::create_directories(dir);
  write_file(dir / (stem + ".tsv"), format_tsv(r));
  const std::string text = format_text(r);
  write_file(dir / (stem + ".txt"), text);
  std::cout << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated query-attention detection head: training, evaluation and ablations"};
  app.require_subcommand(1);

  Common common;
  auto* train = app.add_subcommand("train", "Train one configuration and save a checkpoint");
  add_common(train, common);

  std::string ck_path;
  std::size_t eval_scenes = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on its held-out split");
  eval->add_option("checkpoint", ck_path, "Checkpoint file")->required();
  eval->add_option("--eval-scenes", eval_scenes, "Override the number of held-out scenes");

  std::size_t seeds = 5;
  std::vector<std::string> topologies;
  bool no_budget = false;
  auto* ablate = app.add_subcommand("ablate", "Run the topology ablation matrix");
  add_common(ablate, common);
  ablate->add_option("--seeds", seeds, "Number of seeds, starting at --seed (default 0)");
  ablate->add_option("--topologies", topologies, "Topologies to run (default: all seven)")->delimiter(',');
  ablate->add_flag("--no-budget", no_budget, "Keep the configured FFN width for every topology");

  std::vector<std::size_t> depths{2, 4, 6};
  auto* sweep = app.add_subcommand("sweep-layers", "Train the configured topology at several depths");
  add_common(sweep, common);
  sweep->add_option("--seeds", seeds, "Number of seeds, starting at --seed (default 0)");
  sweep->add_option("--layers", depths, "Depths to sweep")->delimiter(',');

  std::string gc_topology = "n+b+d";
  std::uint64_t gc_seed = 0;
  std::size_t gc_seeds = 1;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of a small head's loss gradient");
  gc->add_option("--topology", gc_topology, "Topology");
  gc->add_option("--seed", gc_seed, "First seed");
  gc->add_option("--seeds", gc_seeds, "Number of seeds");
  gc->add_option("--eps", gc_eps, "Finite-difference step");
  gc->add_option("--tol", gc_tol, "Maximum accepted relative error");

  std::string report_path;
  auto* report = app.add_subcommand("report", "Render a TSV report as an aligned table");
  report->add_option("tsv", report_path, "Report file written by ablate or sweep-layers")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(common);
    if (eval->parsed()) return cmd_eval(ck_path, eval_scenes);
    if (ablate->parsed()) {
      const RunConfig cfg = resolve(common);
      if (topologies.empty()) topologies = ablation_topologies();
      const Report r = run_ablation(cfg, topologies, seed_list(seeds, common.seed.value_or(0)), !no_budget,
                                    [](const std::string& s) { std::cerr << s << std::endl; });
      emit_report(r, cfg.output_dir, "ablation");
      return kOk;
    }
    if (sweep->parsed()) {
      const RunConfig cfg = resolve(common);
      const Report r = sweep_layers(cfg, depths, seed_list(seeds, common.seed.value_or(0)),
                                    [](const std::string& s) { std::cerr << s << std::endl; });
      emit_report(r, cfg.output_dir, "sweep_layers");
      return kOk;
    }
    if (gc->parsed()) {
      const HeadConfig head = grad_check_head_config(gc_topology);
      double worst = 0.0;
      for (std::uint64_t s = gc_seed; s < gc_seed + gc_seeds; ++s) {
        const GradCheckResult r = grad_check_head(head, s, gc_eps);
        std::cout << "seed " << s << ": max relative error " << r.max_relative_error << " over " << r.coordinates
                  << " coordinates (worst " << r.worst_parameter << "[" << r.worst_index << "])\n";
        worst = std::max(worst, r.max_relative_error);
      }
      const bool ok = worst < gc_tol;
      std::cout << (ok ? "PASS" : "FAIL") << " max relative error " << worst << " (tolerance " << gc_tol << ")\n";
      return ok ? kOk : kCheckFailed;
    }
    if (report->parsed()) {
      std::ifstream f(report_path);
      if (!f) throw std::runtime_error("cannot open '" + report_path + "'");
      std::stringstream ss;
      ss << f.rdbuf();
      std::cout << format_text(parse_tsv(ss.str()));
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kCheckpoint;
  } catch (const TrainingDivergence& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kRuntime;
}
