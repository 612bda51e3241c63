#pragma once

#include "nail/common.hpp"
#include "nail/dataset.hpp"

namespace nail {

/// Selector for held-out label entries plus their ground truth.
struct EvalMask {
  Matrix selector;  // 1 where an entry is scored
  Matrix truth;     // ground truth at selected entries

  static EvalMask from_dataset(const MultiViewDataset& ds) {
    return {ds.eval_mask, ds.eval_truth};
  }
};

/// Fraction of selected entries where the binary prediction equals the truth.
double hamming_score(const Matrix& pred, const Matrix& truth, const Matrix& mask);
double hamming_score(const Matrix& pred, const EvalMask& eval);

/// Per-label ranking precision over the selected entries, macro-averaged over
/// labels with at least one selected positive. Tied scores are handled by
/// averaging over all orderings consistent with the sort (computed in closed
/// form), so the result equals the exhaustive permutation average.
double average_precision(const Matrix& scores, const Matrix& truth, const Matrix& mask);
double average_precision(const Matrix& scores, const EvalMask& eval);

}  // namespace nail
