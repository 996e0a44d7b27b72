#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "csdn/config.hpp"
#include "csdn/grad_check.hpp"
#include "csdn/head.hpp"
#include "csdn/trainer.hpp"

namespace csdn {

struct TrainedRun {
  HeadModel model;
  TrainResult result;
  EvalResult final_eval;
};

// The training and held-out splits described by a finalized config.
SyntheticDataset training_dataset(const RunConfig& cfg);
SyntheticDataset held_out_dataset(const RunConfig& cfg);

// Builds the datasets and model described by cfg, trains and evaluates.
TrainedRun train_run(const RunConfig& cfg, const RecordSink& sink = {});

// Parameter budget policy: the FFN hidden width (multiple of 8, at least 8)
// whose total parameter count is closest to target.
std::size_t budget_ffn_hidden(HeadConfig head, std::size_t target);
std::size_t parameter_count(const HeadConfig& head);

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::optional<EvalResult> eval;  // empty when the run failed
  std::string failure;
  std::size_t epochs_run = 0;
};

struct ReportRow {
  std::string label;
  std::string topology;
  std::size_t layers = 0;
  std::size_t ffn_hidden = 0;
  std::size_t parameters = 0;
  std::vector<SeedOutcome> seeds;

  std::size_t succeeded() const;
  // Means over successful seeds; NaN when none succeeded.
  double mean_precision() const;
  double mean_recall() const;
  double mean_map50() const;
  double mean_map5095() const;
  double stderr_map50() const;
};

struct Report {
  std::string title;
  std::string config_text;  // canonical text of the base config
  std::vector<std::uint64_t> seeds;
  std::vector<ReportRow> rows;
  std::vector<std::string> footnotes;
};

using ProgressSink = std::function<void(const std::string&)>;

// Trains every topology with every seed on identical data. Unless
// match_budget is false, each topology's FFN width is chosen so its
// parameter count matches the base config's. A run that diverges is
// recorded as FAILED and the matrix continues.
Report run_ablation(const RunConfig& base, const std::vector<std::string>& topologies,
                    const std::vector<std::uint64_t>& seeds, bool match_budget = true,
                    const ProgressSink& progress = {});

// Trains the base topology at each depth.
Report sweep_layers(const RunConfig& base, const std::vector<std::size_t>& depths,
                    const std::vector<std::uint64_t>& seeds, const ProgressSink& progress = {});

// Ordering checks of the attention ablation, as report footnotes.
std::vector<std::string> ablation_footnotes(const Report& r);

// Small head for finite-difference checks: width 16, one layer, 4 queries,
// two pyramid levels.
HeadConfig grad_check_head_config(const std::string& topology);

// Checks the deep-supervised loss of a head on a seeded toy scene against
// central differences over every parameter; the matching is computed once
// and frozen.
GradCheckResult grad_check_head(const HeadConfig& head, std::uint64_t seed, double epsilon = 1e-5);

std::string format_tsv(const Report& r);
std::string format_text(const Report& r);
// Parses format_tsv output back.
Report parse_tsv(const std::string& text);

}  // namespace csdn
