#pragma once

#include "nail/dataset.hpp"
#include "nail/kernels.hpp"
#include "nail/losses.hpp"
#include "nail/model_state.hpp"

#include <string>
#include <vector>

namespace nail {

/// Model variants. NAIL uses the configured (default gaussian) kernel; the
/// others run with the linear kernel. NAIL_1 swaps the L2,1/focal losses for
/// squared error, NAIL_2 drops the decorrelation penalty, NAIL_3 freezes the
/// view and pair weights at uniform.
enum class Variant { NAIL, NAIL_L, NAIL_1, NAIL_2, NAIL_3 };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant variant);

struct ArmijoParams {
  double shrink = 0.5;
  double slope = 1e-4;
  int max_backtracks = 30;
};

struct SolverConfig {
  double lambda = 1.0;
  double mu = 0.1;
  double rk = 0.5;  // latent ratio; k = max(1, floor(rk * min_v d_v))
  KernelSpec kernel = KernelSpec::gaussian();
  Variant variant = Variant::NAIL;
  bool label_weights_signed = true;  // false = strict nonnegative label factor
  int max_outer = 500;
  double tol = 1e-5;  // relative objective change
  int inner_steps = 5;
  ArmijoParams armijo;
  std::uint64_t seed = 0;
  LossConfig loss;

  Index latent_dim(const MultiViewDataset& ds) const;
  void validate() const;
};

enum class FitStatus { Converged, MaxOuterReached, Diverged };

struct IterationRecord {
  ObjectiveBreakdown objective;
  /// Smoothed objective at iteration entry, after the F step, and after each
  /// U^v step, all under that iteration's alpha/beta/bandwidths.
  std::vector<double> substep_objectives;
  Vector alpha;
  Matrix beta;
  int line_search_failures = 0;
};

struct FitTrace {
  ObjectiveBreakdown initial;
  std::vector<IterationRecord> iterations;
  FitStatus status = FitStatus::MaxOuterReached;
  bool converged = false;
  int iterations_used = 0;
};

struct FitResult {
  ModelState state;
  FitTrace trace;
};

struct Prediction {
  Matrix scores;  // sigmoid(F U^{m+1})
  Matrix labels;  // 1 where score > threshold (strict)
};

/// Seed-deterministic random initialization scaled to the observed data.
ModelState init_state(const MultiViewDataset& ds, const SolverConfig& cfg);

/// Projected-gradient steps on the reconstruction + label slice w.r.t. F.
/// `frozen` carries the per-factor kernel specs for the current outer
/// iteration; `step_hint` warm-starts the line search across calls.
ModelState update_F(const ModelState& state, const MultiViewDataset& ds,
                    const SolverConfig& cfg, const std::vector<KernelSpec>& frozen,
                    double* step_hint = nullptr, int* line_search_failures = nullptr);

/// Projected-gradient steps on factor v (0-based; v == m is the label factor).
ModelState update_U(const ModelState& state, const MultiViewDataset& ds,
                    const SolverConfig& cfg, Index v, const std::vector<KernelSpec>& frozen,
                    double* step_hint = nullptr, int* line_search_failures = nullptr);

/// Closed-form view weights: alpha_v = e_v^{1/(s-1)} / sum_w e_w^{1/(s-1)}.
Vector update_alpha(const Vector& errors, double s);

/// Row-L2-normalizes the off-diagonal HSIC values into pair weights; rows
/// below 1e-12 fall back to uniform 1/sqrt(m).
Matrix update_beta(const Matrix& pairwise_hsic_values);

/// Symmetric matrix of HSIC values between all factor pairs.
Matrix pairwise_hsic(const std::vector<Matrix>& factors, const std::vector<KernelSpec>& specs);

/// Per-factor kernel specs for one outer iteration: the variant's kernel with
/// gaussian bandwidths resolved by the median heuristic and held fixed.
std::vector<KernelSpec> freeze_bandwidths(const ModelState& state, const SolverConfig& cfg);

/// Variant-aware objective (what fit() actually optimizes and records).
ObjectiveBreakdown variant_objective(const ModelState& state, const MultiViewDataset& ds,
                                     const SolverConfig& cfg,
                                     const std::vector<KernelSpec>& frozen);

/// Block-coordinate descent on the joint objective until the relative change
/// drops below tol or max_outer is reached.
FitResult fit(const MultiViewDataset& ds, const SolverConfig& cfg);

Prediction predict(const ModelState& state, double threshold = 0.5);

}  // namespace nail
