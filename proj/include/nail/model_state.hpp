#pragma once

#include "nail/common.hpp"

#include <vector>

namespace nail {

/// Factorization variables. U holds the m view factors followed by the label
/// factor (index m). View factors and F are entrywise nonnegative; the label
/// factor is signed unless the strict nonnegative mode is on. alpha lives on
/// the m-simplex; beta is (m+1)x(m+1), nonnegative, zero diagonal, rows
/// L2-normalized (or the uniform fallback).
struct ModelState {
  Matrix F;
  std::vector<Matrix> U;
  Vector alpha;
  Matrix beta;

  Index latent_dim() const { return F.cols(); }
  Index view_count() const { return static_cast<Index>(U.size()) - 1; }
  const Matrix& label_factor() const { return U.back(); }
};

}  // namespace nail
