#pragma once

#include "nail/common.hpp"

#include <filesystem>
#include <utility>
#include <vector>

namespace nail {

/// Row-wise removal rates for the masking protocol. Identical seed means
/// identical masks, byte for byte.
struct MaskSpec {
  double feature_removal_rate = 0.0;  // r, fraction of rows removed per view
  double label_removal_rate = 0.0;    // s, fraction of pos/neg hidden per label
  std::uint64_t seed = 0;
};

/// Generator spec for synthetic fixtures with a planted factorization.
struct SyntheticSpec {
  Index n = 100;
  Index m = 2;
  Index l = 4;
  Index k_true = 3;
  std::vector<Index> view_dims;    // d_v per view
  std::vector<double> noise_std;   // per view; single entry broadcasts
  Index noisy_view_count = 0;      // trailing views replaced by pure noise
  double positive_rate = 0.25;     // target label density, matched to +-0.02
  std::uint64_t seed = 0;
};

/// Multi-view features with weak labels and explicit observation masks.
///
/// Masked-out entries are stored as 0 and never enter any loss; the masks are
/// the single source of truth for observedness. Entries hidden by
/// apply_label_mask keep their ground truth in (eval_truth, eval_mask) so
/// completion quality can be scored without a side channel. All fields are
/// treated as immutable after construction; operations return new datasets.
struct MultiViewDataset {
  std::vector<Matrix> views;          // X^v, n x d_v, masked entries zeroed
  std::vector<Matrix> feature_masks;  // O_X^v in {0,1}
  Matrix labels;                      // Y in {0,1}, unobserved entries zeroed
  Matrix label_mask;                  // O_Y in {0,1}
  Matrix eval_truth;                  // ground truth of hidden label entries
  Matrix eval_mask;                   // 1 where a label was hidden by masking

  Index n = 0;  // samples
  Index m = 0;  // views
  Index l = 0;  // labels

  std::vector<Index> view_dims() const;
  /// Checks the structural invariants; throws DataError on violation.
  void validate() const;
};

/// Planted ground truth returned by synthesize() for oracle tests.
struct PlantedModel {
  Matrix F;               // n x k_true, nonnegative
  std::vector<Matrix> U;  // m view factors plus the label factor (signed)
  double label_bias = 0.0;
};

/// Reads a dataset from a JSON manifest {"views": [...], "labels": "..."};
/// paths are relative to the manifest. CSVs carry no header and use the
/// token NaN for missing entries.
MultiViewDataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes manifest + CSVs under `dir` (view files v1.csv.., labels y.csv).
/// Masked entries are emitted as NaN. Values round-trip bit-identically.
void save_dataset(const MultiViewDataset& ds, const std::filesystem::path& dir);

/// Marks floor(r*n) whole sample rows unobserved in each view, keeping at
/// least one fully observed view per sample (rejection up to 1000 draws,
/// then deterministic repair).
MultiViewDataset apply_feature_mask(const MultiViewDataset& ds, const MaskSpec& spec);

/// Hides floor(s*#pos) positive and floor(s*#neg) negative entries per label
/// column; hidden values move to the evaluation shadow.
MultiViewDataset apply_label_mask(const MultiViewDataset& ds, const MaskSpec& spec);

/// Disjoint row partition of sizes floor(fraction*n) and the remainder.
std::pair<MultiViewDataset, MultiViewDataset> split_rows(const MultiViewDataset& ds,
                                                         double train_fraction,
                                                         std::uint64_t seed);

/// Keeps `count` rows drawn without replacement.
MultiViewDataset subsample_rows(const MultiViewDataset& ds, Index count, std::uint64_t seed);

/// Generates a dataset from a planted nonnegative factorization. Labels are
/// Bernoulli draws of sigmoid(F* U*^{m+1} + b) with b bisected until the
/// realized density is within +-0.02 of spec.positive_rate.
std::pair<MultiViewDataset, PlantedModel> synthesize(const SyntheticSpec& spec);

}  // namespace nail
