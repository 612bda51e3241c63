#pragma once

#include "nail/common.hpp"
#include "nail/dataset.hpp"
#include "nail/kernels.hpp"
#include "nail/model_state.hpp"

#include <utility>
#include <vector>

namespace nail {

struct LossConfig {
  double gamma = 2.0;   // focal focusing exponent
  double a = 0.5;       // class-balance weight for positives
  double s = 0.5;       // view-weight exponent
  double eps21 = 1e-8;  // L2,1 smoothing constant
  double eps_p = 1e-12; // probability clamp

  void validate() const;
};

struct ObjectiveBreakdown {
  double reconstruction = 0.0;  // alpha-weighted
  double label = 0.0;           // lambda-weighted
  double hsic = 0.0;            // mu-weighted
  double total() const { return reconstruction + label + hsic; }
};

/// Sum of row L2 norms of the masked residual: sum_i |(O . R)_i|_2.
double masked_l21(const Matrix& R, const Matrix& O);

/// Smooth surrogate sum_i sqrt(|(O . R)_i|^2 + eps^2), used by line searches.
double masked_l21_smoothed(const Matrix& R, const Matrix& O, double eps);

/// Row-i gradient (O . R)_i / (|(O . R)_i| + eps); zero on masked entries.
Matrix l21_grad(const Matrix& R, const Matrix& O, double eps);

/// Focal loss -a_y (1-q)^gamma log q with q the probability of the true
/// class; p is clamped into [eps_p, 1-eps_p] first.
double focal_loss(double y, double p, const LossConfig& cfg);

/// d focal_loss / d logit at p = sigmoid(logit).
double focal_loss_dz(double y, double p, const LossConfig& cfg);

/// Sum of focal losses over observed label entries, p = sigmoid(F U).
double label_term(const Matrix& F, const Matrix& U, const Matrix& Y, const Matrix& OY,
                  const LossConfig& cfg);

/// Gradients of label_term with respect to F and U.
std::pair<Matrix, Matrix> label_term_grads(const Matrix& F, const Matrix& U, const Matrix& Y,
                                           const Matrix& OY, const LossConfig& cfg);

/// Full objective: sum_v alpha_v^s |O^v . (X^v - F U^v)|_{2,1}
///   + lambda * label_term + mu * sum_{v != v'} beta_vv' hsic(U^v, U^v').
/// The HSIC double sum runs over all m+1 factors. `kernels` carries one spec
/// per factor (a single spec is broadcast).
ObjectiveBreakdown objective(const ModelState& state, const MultiViewDataset& ds,
                             const LossConfig& cfg, double lambda, double mu,
                             const std::vector<KernelSpec>& kernels);
ObjectiveBreakdown objective(const ModelState& state, const MultiViewDataset& ds,
                             const LossConfig& cfg, double lambda, double mu,
                             const KernelSpec& kernel);

}  // namespace nail
