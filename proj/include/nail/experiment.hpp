#pragma once

#include "nail/dataset.hpp"
#include "nail/metrics.hpp"
#include "nail/solver.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nail {

/// Full sweep description: dataset source, masking rates, variant list and
/// hyperparameter grids, repeated over seeded splits.
struct ExperimentConfig {
  std::optional<std::filesystem::path> manifest;
  std::optional<SyntheticSpec> synthetic;
  double mask_r = 0.5;
  double mask_s = 0.5;
  std::vector<Variant> variants{Variant::NAIL};
  std::vector<double> lambda_grid;  // default {10^i : i = -3..3}
  std::vector<double> mu_grid;      // default {10^i : i = -3..3}
  std::vector<double> rk_grid;      // default {0.2, 0.5, 0.8}
  int repeats = 10;
  double train_fraction = 0.7;
  std::uint64_t base_seed = 0;
  std::filesystem::path out_dir;
  int workers = 1;
  int max_outer = 500;
  double tol = 1e-5;
  bool strict_paper = false;  // clamps the label factor at 0
  std::optional<Index> subsample;
  KernelSpec kernel = KernelSpec::gaussian();
  LossConfig loss;

  void apply_grid_defaults();
  void validate() const;
};

/// One (variant, grid cell, repeat) outcome. hs/ap score the training rows'
/// hidden label entries; val_ap ranks the held-out validation rows and drives
/// model selection. runtime_seconds is informational only and never enters
/// the deterministic CSV reports.
struct RunResult {
  Variant variant = Variant::NAIL;
  double lambda = 0.0;
  double mu = 0.0;
  double rk = 0.0;
  int repeat = 0;
  std::uint64_t seed = 0;
  int iterations = 0;
  bool converged = false;
  FitStatus status = FitStatus::MaxOuterReached;
  double hs = 0.0;
  double ap = 0.0;
  double val_ap = 0.0;
  double runtime_seconds = 0.0;
  std::vector<ObjectiveBreakdown> objective_curve;
};

struct CellSummary {
  Variant variant = Variant::NAIL;
  double lambda = 0.0;
  double mu = 0.0;
  double rk = 0.0;
  int repeats = 0;
  double hs_mean = 0.0, hs_std = 0.0;
  double ap_mean = 0.0, ap_std = 0.0;
  double val_ap_mean = 0.0, val_ap_std = 0.0;
};

struct EvalReport {
  ExperimentConfig config;
  std::vector<RunResult> runs;       // deterministic order
  std::vector<CellSummary> cells;    // variant x grid order
  std::vector<CellSummary> best;     // one per variant, by val_ap_mean
};

/// Runs the full protocol: per repeat, derive a seed, split rows, mask the
/// training portion, then fit/predict/score every variant x grid cell.
/// Grid cells run on `workers` threads; outputs are independent of the
/// worker count. Solver divergence is recorded per cell, never fatal.
EvalReport run_experiment(const ExperimentConfig& cfg);

/// Writes results.csv, summary.csv, summary.json and curves.csv under dir.
void emit_report(const EvalReport& report, const std::filesystem::path& dir);

/// Parses the JSON mirror of ExperimentConfig.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Parses a SyntheticSpec from its JSON file.
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

}  // namespace nail
