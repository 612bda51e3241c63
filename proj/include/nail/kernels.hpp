#pragma once

#include "nail/common.hpp"

namespace nail {

enum class KernelKind { Linear, Gaussian };

/// Kernel over the rows of a weight matrix. A non-positive bandwidth means
/// "auto": the median pairwise distance, recomputed from the input.
struct KernelSpec {
  KernelKind kind = KernelKind::Gaussian;
  double bandwidth = 0.0;

  static KernelSpec linear() { return {KernelKind::Linear, 0.0}; }
  static KernelSpec gaussian(double bandwidth = 0.0) {
    return {KernelKind::Gaussian, bandwidth};
  }
};

/// Median of the k(k-1)/2 pairwise row distances; 1.0 when the median is 0.
double median_bandwidth(const Matrix& U);

/// Gram matrix over the rows of U. Linear: U U^T. Gaussian:
/// K_ij = exp(-|u_i - u_j|^2 / (2 sigma^2)).
Matrix gram(const Matrix& U, const KernelSpec& spec);

/// Empirical HSIC between the rows of U and Uprime:
/// (k-1)^{-2} tr(K H K' H), clamped at 0 against negative round-off.
double hsic(const Matrix& U, const Matrix& Uprime, const KernelSpec& spec,
            const KernelSpec& spec_prime);

/// d hsic / dU with Uprime held constant. For the gaussian kernel the
/// bandwidth is resolved once (from `spec` or the median heuristic) and
/// treated as a constant, so the gradient is exact for that frozen sigma.
Matrix hsic_gradient(const Matrix& U, const Matrix& Uprime, const KernelSpec& spec,
                     const KernelSpec& spec_prime);

}  // namespace nail
