#include "nail/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace nail {

namespace {

void require_rows(const Matrix& U) {
  if (U.rows() < 2) throw ConfigError("kernel input needs at least 2 rows");
}

double resolve_bandwidth(const Matrix& U, const KernelSpec& spec) {
  return spec.bandwidth > 0.0 ? spec.bandwidth : median_bandwidth(U);
}

/// H A H with H = I - (1/k) 1 1^T, computed by double centering.
Matrix center(const Matrix& a) {
  const Vector row_mean = a.rowwise().mean();
  const Vector col_mean = a.colwise().mean().transpose();
  const double total = a.mean();
  Matrix out = a;
  out.colwise() -= row_mean;
  out.rowwise() -= col_mean.transpose();
  out.array() += total;
  return out;
}

}  // namespace

double median_bandwidth(const Matrix& U) {
  require_rows(U);
  const Index k = U.rows();
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(k * (k - 1) / 2));
  for (Index i = 0; i < k; ++i) {
    for (Index j = i + 1; j < k; ++j) {
      dist.push_back((U.row(i) - U.row(j)).norm());
    }
  }
  std::sort(dist.begin(), dist.end());
  const std::size_t half = dist.size() / 2;
  const double median =
      dist.size() % 2 == 1 ? dist[half] : 0.5 * (dist[half - 1] + dist[half]);
  return median > 0.0 ? median : 1.0;
}

Matrix gram(const Matrix& U, const KernelSpec& spec) {
  require_rows(U);
  if (spec.kind == KernelKind::Linear) {
    return U * U.transpose();
  }
  const double sigma = resolve_bandwidth(U, spec);
  const Index k = U.rows();
  Matrix out(k, k);
  const double scale = -0.5 / (sigma * sigma);
  for (Index i = 0; i < k; ++i) {
    out(i, i) = 1.0;
    for (Index j = i + 1; j < k; ++j) {
      const double value = std::exp(scale * (U.row(i) - U.row(j)).squaredNorm());
      out(i, j) = value;
      out(j, i) = value;
    }
  }
  return out;
}

double hsic(const Matrix& U, const Matrix& Uprime, const KernelSpec& spec,
            const KernelSpec& spec_prime) {
  if (U.rows() != Uprime.rows()) throw ConfigError("hsic inputs must share row count");
  require_rows(U);
  const Index k = U.rows();
  const Matrix kc = center(gram(U, spec));
  const Matrix kp = gram(Uprime, spec_prime);
  const double norm = static_cast<double>(k - 1);
  const double value = kc.cwiseProduct(kp).sum() / (norm * norm);
  return std::max(value, 0.0);
}

Matrix hsic_gradient(const Matrix& U, const Matrix& Uprime, const KernelSpec& spec,
                     const KernelSpec& spec_prime) {
  if (U.rows() != Uprime.rows()) throw ConfigError("hsic inputs must share row count");
  require_rows(U);
  const Index k = U.rows();
  const double norm = static_cast<double>(k - 1);
  const double c = 1.0 / (norm * norm);
  const Matrix middle = center(gram(Uprime, spec_prime));  // H K' H
  if (spec.kind == KernelKind::Linear) {
    return 2.0 * c * middle * U;
  }
  const double sigma = resolve_bandwidth(U, spec);
  KernelSpec frozen = KernelSpec::gaussian(sigma);
  const Matrix w = middle.cwiseProduct(gram(U, frozen));
  const Vector row_sums = w.rowwise().sum();
  Matrix grad = w * U;
  grad -= row_sums.asDiagonal() * U;
  return (2.0 * c / (sigma * sigma)) * grad;
}

}  // namespace nail
