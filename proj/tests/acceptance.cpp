// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csdn/checkpoint.hpp"
#include "csdn/config.hpp"
#include "csdn/experiments.hpp"
#include "grad_suite.hpp"
#include "oracles.hpp"

using namespace csdn;
using namespace csdn::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;
};

constexpr double kGradTolerance = 1e-4;
constexpr std::uint64_t kGradSeeds = 50;
constexpr double kGradBudgetSeconds = 300.0;
constexpr double kConvergenceTarget = 0.80;
constexpr std::size_t kConvergenceEpochs = 50;
constexpr double kConvergenceBudgetSeconds = 1800.0;
const std::vector<std::uint64_t> kAblationSeeds{0, 1, 2, 3, 4};
const std::vector<std::string> kTopologies{"s-d", "n-d", "b-d", "s+d", "b+d", "n+d", "n+b+d"};
const std::vector<std::size_t> kDepths{2, 4, 6};
// A sweep depth has converged when its held-out mAP50 reaches this.
constexpr double kSweepTarget = 0.5;

// Reduced benchmark shared by the ablation, layer sweep and determinism runs.
RunConfig benchmark_config() {
  RunConfig c;
  c.head.num_queries = 30;
  c.train_scenes = 128;
  c.eval_scenes = 64;
  c.train.epochs = 15;
  c.train.optim.lr = 1e-3;
  c.train.warmup_steps = 50;
  c.finalize();
  return c;
}

void log(const std::string& line) { std::cout << "  " << line << std::endl; }

Verdict criterion_gradients() {
  const auto t0 = Clock::now();
  Verdict v;
  double worst = 0.0;
  std::size_t checks = 0;
  auto record = [&](const std::string& name, std::uint64_t seed, const GradCheckResult& r) {
    ++checks;
    worst = std::max(worst, r.max_relative_error);
    if (!(r.max_relative_error < kGradTolerance) && v.pass) {
      v.pass = false;
      v.detail = name + " seed " + std::to_string(seed) + " error " + std::to_string(r.max_relative_error) +
                 " at " + r.worst_parameter + "; ";
    }
  };
  for (const GradCase& c : gradient_cases())
    for (std::uint64_t s = 0; s < kGradSeeds; ++s) record(c.name, s, c.run(s));
  const HeadConfig head = grad_check_head_config("n+b+d");
  for (std::uint64_t s = 0; s < kGradSeeds; ++s) record("n+b+d layer", s, grad_check_head(head, s));
  const double elapsed = seconds_since(t0);
  if (elapsed >= kGradBudgetSeconds) v.pass = false;
  std::ostringstream d;
  d << gradient_cases().size() << " operations + n+b+d layer, " << kGradSeeds << " seeds each, " << checks
    << " checks, max relative error " << worst << ", " << elapsed << " s";
  v.detail += d.str();
  return v;
}

Verdict from_checks(const std::vector<std::pair<std::string, CheckOutcome>>& checks) {
  Verdict v;
  for (const auto& [name, c] : checks) {
    v.pass = v.pass && c.ok() && c.trials > 0;
    v.detail += (v.detail.empty() ? "" : "; ") + name + ": " + c.summary();
  }
  return v;
}

Verdict criterion_oracles() {
  return from_checks({{"neighbor all-true", check_neighbor_all_true(200, 11)},
                      {"hungarian", check_hungarian(1000, 12)},
                      {"nms", check_nms(1000, 13)},
                      {"evaluate", check_evaluate(100, 14)},
                      {"one-hot gate", check_one_hot_gate(1000, 15)}});
}

Verdict criterion_geometry() {
  return from_checks({{"box pairs", check_box_pairs(100000, 21)}, {"bilinear grid", check_bilinear_grid(200, 22)}});
}

bool same_metrics(const EvalResult& a, const EvalResult& b) {
  return a.precision == b.precision && a.recall == b.recall && a.map50 == b.map50 && a.map5095 == b.map5095;
}

// Round-trips the trained model through the checkpoint encoding and
// re-evaluates it on the held-out split.
bool reloaded_eval_matches(const TrainedRun& run, const RunConfig& cfg) {
  LoadedCheckpoint loaded = decode_checkpoint(encode_checkpoint(run.model, cfg));
  const SyntheticDataset eval_set = held_out_dataset(loaded.config);
  return same_metrics(evaluate_model(loaded.model, eval_set, loaded.config.train.eval), run.final_eval);
}

Verdict criterion_convergence() {
  RunConfig c;
  c.train.epochs = kConvergenceEpochs;
  c.train.stop_at_map50 = kConvergenceTarget;
  c.finalize();
  const auto t0 = Clock::now();
  double best = 0.0;
  std::size_t best_epoch = 0;
  const TrainedRun run = train_run(c, [&](const EpochRecord& r) {
    log(format_record(r));
    if (r.eval && r.eval->map50 > best) {
      best = r.eval->map50;
      best_epoch = r.epoch;
    }
  });
  const double elapsed = seconds_since(t0);
  const bool reload_ok = reloaded_eval_matches(run, c);
  Verdict v;
  v.pass = best >= kConvergenceTarget && elapsed < kConvergenceBudgetSeconds && reload_ok;
  std::ostringstream d;
  d << "n+b+d, " << c.head.num_layers << " layers, " << c.train_scenes << " scenes, lr " << c.train.optim.lr
    << ": best mAP50 " << best << " at epoch " << best_epoch << " of " << run.result.records.size() - 1
    << ", " << elapsed << " s; reloaded checkpoint evaluation " << (reload_ok ? "identical" : "DIFFERS");
  v.detail = d.str();
  return v;
}

Verdict criterion_ablation() {
  const auto t0 = Clock::now();
  const Report rep = run_ablation(benchmark_config(), kTopologies, kAblationSeeds, true, log);
  std::istringstream table(format_text(rep));
  for (std::string line; std::getline(table, line);) log(line);
  Verdict v;
  std::set<std::string> labels;
  for (const ReportRow& row : rep.rows) labels.insert(row.label);
  if (labels.size() != kTopologies.size()) {
    v.pass = false;
    v.detail = "table has " + std::to_string(labels.size()) + " topologies; ";
  }
  std::size_t failed = 0;
  for (const std::string& note : rep.footnotes)
    if (note.find("FAILS") != std::string::npos) ++failed;
  if (rep.footnotes.size() != 4 || failed > 0) v.pass = false;
  v.detail += std::to_string(rep.footnotes.size() - failed) + " of " + std::to_string(rep.footnotes.size()) +
              " orderings hold over " + std::to_string(kAblationSeeds.size()) + " seeds";
  for (const std::string& note : rep.footnotes)
    if (note.find("FAILS") != std::string::npos) v.detail += "; " + note;
  v.detail += "; " + std::to_string(static_cast<int>(seconds_since(t0))) + " s";
  return v;
}

Verdict criterion_sweep() {
  const Report rep = sweep_layers(benchmark_config(), kDepths, {0}, log);
  std::istringstream table(format_text(rep));
  for (std::string line; std::getline(table, line);) log(line);
  Verdict v;
  std::ostringstream d;
  std::size_t previous = 0;
  for (const ReportRow& row : rep.rows) {
    const bool converged = row.succeeded() == row.seeds.size() && row.mean_map50() >= kSweepTarget;
    v.pass = v.pass && converged && row.parameters >= previous;
    previous = row.parameters;
    d << row.layers << " layers: " << row.parameters << " parameters, mAP50 " << row.mean_map50()
      << (converged ? "" : " (not converged)") << "; ";
  }
  v.pass = v.pass && rep.rows.size() == kDepths.size();
  d << "convergence threshold " << kSweepTarget;
  v.detail = d.str();
  return v;
}

std::string joined_records(const TrainResult& r) {
  std::string out;
  for (const EpochRecord& rec : r.records) out += format_record(rec) + "\n";
  return out;
}

Verdict criterion_determinism() {
  RunConfig c = benchmark_config();
  c.train.epochs = 3;
  c.finalize();
  const TrainedRun a = train_run(c);
  const TrainedRun b = train_run(c);
  const std::string bytes_a = encode_checkpoint(a.model, c), bytes_b = encode_checkpoint(b.model, c);
  const std::string log_a = joined_records(a.result), log_b = joined_records(b.result);
  const bool same_eval = reloaded_eval_matches(a, c);
  Verdict v;
  v.pass = bytes_a == bytes_b && log_a == log_b && same_eval;
  v.detail = "checkpoints " + std::string(bytes_a == bytes_b ? "identical" : "DIFFER") + " (" +
             std::to_string(bytes_a.size()) + " bytes), metric logs " + (log_a == log_b ? "identical" : "DIFFER") +
             " (" + std::to_string(a.result.records.size()) + " records), reloaded checkpoint evaluation " +
             (same_eval ? "identical" : "DIFFERS");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria (1-7)")->check(CLI::Range(1, 7));
  CLI11_PARSE(app, argc, argv);

  using Criterion = Verdict (*)();
  const std::vector<std::pair<std::string, Criterion>> criteria{
      {"gradient suite", criterion_gradients},      {"oracle equivalences", criterion_oracles},
      {"geometry properties", criterion_geometry},  {"convergence", criterion_convergence},
      {"ablation ordering", criterion_ablation},    {"layer sweep", criterion_sweep},
      {"determinism", criterion_determinism}};
  std::cout.precision(6);
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    all = all && v.pass;
    std::cout << "criterion " << number << " (" << criteria[i].first << "): " << (v.pass ? "PASS" : "FAIL") << " - "
              << v.detail << std::endl;
  }
  return all ? EXIT_SUCCESS : EXIT_FAILURE;
}
