#include "nail/losses.hpp"

#include <cmath>

namespace nail {

void LossConfig::validate() const {
  if (gamma < 0.0) throw ConfigError("gamma must be nonnegative");
  if (a < 0.0 || a > 1.0) throw ConfigError("a must be in [0,1]");
  if (s <= 0.0 || s >= 1.0) throw ConfigError("s must be in (0,1)");
  if (eps21 <= 0.0 || eps_p <= 0.0) throw ConfigError("smoothing constants must be positive");
}

namespace {

void require_same_shape(const Matrix& R, const Matrix& O) {
  if (R.rows() != O.rows() || R.cols() != O.cols()) {
    throw ConfigError("residual and mask shapes differ");
  }
}

double clamp_probability(double p, double eps) {
  return std::min(std::max(p, eps), 1.0 - eps);
}

}  // namespace

double masked_l21(const Matrix& R, const Matrix& O) {
  require_same_shape(R, O);
  return R.cwiseProduct(O).rowwise().norm().sum();
}

double masked_l21_smoothed(const Matrix& R, const Matrix& O, double eps) {
  require_same_shape(R, O);
  return (R.cwiseProduct(O).rowwise().squaredNorm().array() + eps * eps)
      .sqrt()
      .sum();
}

Matrix l21_grad(const Matrix& R, const Matrix& O, double eps) {
  require_same_shape(R, O);
  Matrix masked = R.cwiseProduct(O);
  const Vector norms = masked.rowwise().norm();
  for (Index i = 0; i < masked.rows(); ++i) {
    masked.row(i) /= norms(i) + eps;
  }
  return masked;
}

double focal_loss(double y, double p, const LossConfig& cfg) {
  p = clamp_probability(p, cfg.eps_p);
  const double q = y == 1.0 ? p : 1.0 - p;
  const double weight = y == 1.0 ? cfg.a : 1.0 - cfg.a;
  return -weight * std::pow(1.0 - q, cfg.gamma) * std::log(q);
}

double focal_loss_dz(double y, double p, const LossConfig& cfg) {
  p = clamp_probability(p, cfg.eps_p);
  const double q = y == 1.0 ? p : 1.0 - p;
  const double weight = y == 1.0 ? cfg.a : 1.0 - cfg.a;
  const double dq_dp = y == 1.0 ? 1.0 : -1.0;
  // d/dq [-(1-q)^g log q] = g (1-q)^{g-1} log q - (1-q)^g / q
  double dfl_dq = -std::pow(1.0 - q, cfg.gamma) / q;
  if (cfg.gamma > 0.0) {
    dfl_dq += cfg.gamma * std::pow(1.0 - q, cfg.gamma - 1.0) * std::log(q);
  }
  return weight * dfl_dq * dq_dp * p * (1.0 - p);
}

double label_term(const Matrix& F, const Matrix& U, const Matrix& Y, const Matrix& OY,
                  const LossConfig& cfg) {
  if (F.cols() != U.rows() || Y.rows() != F.rows() || Y.cols() != U.cols()) {
    throw ConfigError("label term shapes are inconsistent");
  }
  require_same_shape(Y, OY);
  const Matrix Z = F * U;
  double total = 0.0;
  for (Index i = 0; i < Y.rows(); ++i) {
    for (Index j = 0; j < Y.cols(); ++j) {
      if (OY(i, j) == 0.0) continue;
      total += focal_loss(Y(i, j), sigmoid(Z(i, j)), cfg);
    }
  }
  return total;
}

std::pair<Matrix, Matrix> label_term_grads(const Matrix& F, const Matrix& U, const Matrix& Y,
                                           const Matrix& OY, const LossConfig& cfg) {
  if (F.cols() != U.rows() || Y.rows() != F.rows() || Y.cols() != U.cols()) {
    throw ConfigError("label term shapes are inconsistent");
  }
  require_same_shape(Y, OY);
  const Matrix Z = F * U;
  Matrix dz = Matrix::Zero(Y.rows(), Y.cols());
  for (Index i = 0; i < Y.rows(); ++i) {
    for (Index j = 0; j < Y.cols(); ++j) {
      if (OY(i, j) == 0.0) continue;
      dz(i, j) = focal_loss_dz(Y(i, j), sigmoid(Z(i, j)), cfg);
    }
  }
  return {dz * U.transpose(), F.transpose() * dz};
}

ObjectiveBreakdown objective(const ModelState& state, const MultiViewDataset& ds,
                             const LossConfig& cfg, double lambda, double mu,
                             const std::vector<KernelSpec>& kernels) {
  const Index m = ds.m;
  if (state.alpha.size() != m) throw ConfigError("alpha has wrong length");
  if (state.beta.rows() != m + 1 || state.beta.cols() != m + 1) {
    throw ConfigError("beta has wrong shape");
  }
  if (static_cast<Index>(kernels.size()) != m + 1) {
    throw ConfigError("one kernel spec per factor is required");
  }
  ObjectiveBreakdown out;
  for (Index v = 0; v < m; ++v) {
    const auto& X = ds.views[static_cast<std::size_t>(v)];
    const auto& O = ds.feature_masks[static_cast<std::size_t>(v)];
    const Matrix R = X - state.F * state.U[static_cast<std::size_t>(v)];
    out.reconstruction += std::pow(state.alpha(v), cfg.s) * masked_l21(R, O);
  }
  out.label = lambda * label_term(state.F, state.U.back(), ds.labels, ds.label_mask, cfg);
  if (mu != 0.0) {
    double penalty = 0.0;
    for (Index v = 0; v <= m; ++v) {
      for (Index w = 0; w <= m; ++w) {
        if (v == w || state.beta(v, w) == 0.0) continue;
        penalty += state.beta(v, w) *
                   hsic(state.U[static_cast<std::size_t>(v)], state.U[static_cast<std::size_t>(w)],
                        kernels[static_cast<std::size_t>(v)], kernels[static_cast<std::size_t>(w)]);
      }
    }
    out.hsic = mu * penalty;
  }
  return out;
}

ObjectiveBreakdown objective(const ModelState& state, const MultiViewDataset& ds,
                             const LossConfig& cfg, double lambda, double mu,
                             const KernelSpec& kernel) {
  return objective(state, ds, cfg, lambda, mu,
                   std::vector<KernelSpec>(static_cast<std::size_t>(ds.m) + 1, kernel));
}

}  // namespace nail
