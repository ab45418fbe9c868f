#pragma once

#include <functional>
#include <string>
#include <vector>

#include "aas/config.hpp"
#include "aas/engine.hpp"

namespace aas {

inline constexpr const char* kVersion = "aas 0.1.0";

// Run directory layout:
//   manifest.json                          written before the first stage
//   metrics.csv                            one row per stage
//   scatter/stage_<k>_<hash>.csv           training set used in stage k
//   checkpoints/ckpt_<hash>_stage_<k>.json every checkpoint_every stages and on abort
//   summary.json                           after the last stage

struct RunSummary {
  std::string method, problem, config_hash;
  int stages = 0;
  double final_error = 0.0;
  double min_var = 0.0;
  double final_sliced_w = 0.0;
  double wallclock = 0.0;
};

using StageCallback = std::function<void(const StageRecord&)>;

/// Trains and writes the run directory. A training abort leaves a checkpoint
/// and the rows so far, then rethrows.
RunSummary run_training(const RunConfig& cfg, Method method, const StageCallback& on_stage = {});

std::string metrics_header();
std::string metrics_row(const StageRecord& r, bool wallclock);
std::vector<StageRecord> read_metrics(const std::string& path);
RunSummary read_summary(const std::string& dir);

/// Checkpoint as JSON text and back. `load_checkpoint` restores parameters,
/// moments, random streams and the stage counter into `state`.
std::string checkpoint_json(const TrainState& state, const std::string& config_hash);
void load_checkpoint(const std::string& text, TrainState& state);

struct Comparison {
  std::vector<std::string> methods, problems;  // sorted
  std::vector<std::vector<double>> error;     // methods x problems, NaN for no run
  std::string csv() const;
  std::string table() const;
};
/// Median final error over runs sharing a method and problem.
Comparison compare_runs(const std::vector<std::string>& dirs);

enum class ExportKind { ErrorCurve, VarianceCurve, Scatter };
ExportKind parse_export_kind(const std::string& s);
/// Writes <dir>/export/<what>.csv and returns its path.
std::string export_run(const std::string& dir, ExportKind what);

}  // namespace aas
