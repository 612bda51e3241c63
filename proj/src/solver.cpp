#include "nail/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nail {

namespace {

constexpr std::uint64_t kStreamInitF = 0xF0;
constexpr std::uint64_t kStreamInitU = 0xF1;

struct Resolved {
  KernelSpec kernel;
  double mu = 0.0;
  bool auto_alpha = true;
  bool auto_beta = true;
  bool squared_losses = false;  // NAIL_1
};

Resolved resolve(const SolverConfig& cfg) {
  Resolved r;
  r.kernel = cfg.variant == Variant::NAIL ? cfg.kernel : KernelSpec::linear();
  r.mu = cfg.variant == Variant::NAIL_2 ? 0.0 : cfg.mu;
  r.squared_losses = cfg.variant == Variant::NAIL_1;
  if (cfg.variant == Variant::NAIL_3) {
    r.auto_alpha = false;
    r.auto_beta = false;
  }
  return r;
}

double view_weight(const ModelState& state, const LossConfig& loss, Index v) {
  return std::pow(state.alpha(v), loss.s);
}

/// Reconstruction slice of one view under the variant's loss.
double recon_term(const ModelState& state, const MultiViewDataset& ds, const SolverConfig& cfg,
                  const Resolved& r, Index v) {
  const auto& X = ds.views[static_cast<std::size_t>(v)];
  const auto& O = ds.feature_masks[static_cast<std::size_t>(v)];
  const Matrix R = X - state.F * state.U[static_cast<std::size_t>(v)];
  const double raw = r.squared_losses ? R.cwiseProduct(O).squaredNorm()
                                      : masked_l21_smoothed(R, O, cfg.loss.eps21);
  return view_weight(state, cfg.loss, v) * raw;
}

double squared_label_term(const Matrix& F, const Matrix& U, const Matrix& Y, const Matrix& OY) {
  const Matrix Z = F * U;
  double total = 0.0;
  for (Index i = 0; i < Y.rows(); ++i) {
    for (Index j = 0; j < Y.cols(); ++j) {
      if (OY(i, j) == 0.0) continue;
      const double d = Y(i, j) - sigmoid(Z(i, j));
      total += d * d;
    }
  }
  return total;
}

std::pair<Matrix, Matrix> squared_label_grads(const Matrix& F, const Matrix& U, const Matrix& Y,
                                              const Matrix& OY) {
  const Matrix Z = F * U;
  Matrix dz = Matrix::Zero(Y.rows(), Y.cols());
  for (Index i = 0; i < Y.rows(); ++i) {
    for (Index j = 0; j < Y.cols(); ++j) {
      if (OY(i, j) == 0.0) continue;
      const double p = sigmoid(Z(i, j));
      dz(i, j) = -2.0 * (Y(i, j) - p) * p * (1.0 - p);
    }
  }
  return {dz * U.transpose(), F.transpose() * dz};
}

double label_slice(const ModelState& state, const MultiViewDataset& ds, const SolverConfig& cfg,
                   const Resolved& r) {
  if (cfg.lambda == 0.0) return 0.0;
  const double raw = r.squared_losses
                         ? squared_label_term(state.F, state.U.back(), ds.labels, ds.label_mask)
                         : label_term(state.F, state.U.back(), ds.labels, ds.label_mask, cfg.loss);
  return cfg.lambda * raw;
}

/// mu-weighted HSIC terms involving factor v; each unordered pair appears in
/// the double sum twice, hence the beta_vw + beta_wv weight.
double hsic_slice(const ModelState& state, const Resolved& r,
                  const std::vector<KernelSpec>& frozen, Index v) {
  if (r.mu == 0.0) return 0.0;
  const Index count = static_cast<Index>(state.U.size());
  double total = 0.0;
  for (Index w = 0; w < count; ++w) {
    if (w == v) continue;
    const double weight = state.beta(v, w) + state.beta(w, v);
    if (weight == 0.0) continue;
    total += weight * hsic(state.U[static_cast<std::size_t>(v)],
                           state.U[static_cast<std::size_t>(w)],
                           frozen[static_cast<std::size_t>(v)],
                           frozen[static_cast<std::size_t>(w)]);
  }
  return r.mu * total;
}

double full_hsic_term(const ModelState& state, const Resolved& r,
                      const std::vector<KernelSpec>& frozen) {
  if (r.mu == 0.0) return 0.0;
  const Index count = static_cast<Index>(state.U.size());
  const Matrix h = pairwise_hsic(state.U, frozen);
  double total = 0.0;
  for (Index v = 0; v < count; ++v) {
    for (Index w = 0; w < count; ++w) {
      if (v != w) total += state.beta(v, w) * h(v, w);
    }
  }
  return r.mu * total;
}

/// Smoothed objective under the current alpha/beta/bandwidths; the quantity
/// the sub-steps are guaranteed not to increase.
double smoothed_total(const ModelState& state, const MultiViewDataset& ds,
                      const SolverConfig& cfg, const Resolved& r,
                      const std::vector<KernelSpec>& frozen) {
  double total = 0.0;
  for (Index v = 0; v < ds.m; ++v) total += recon_term(state, ds, cfg, r, v);
  total += label_slice(state, ds, cfg, r);
  total += full_hsic_term(state, r, frozen);
  return total;
}

Matrix recon_grad_F(const ModelState& state, const MultiViewDataset& ds, const SolverConfig& cfg,
                    const Resolved& r) {
  Matrix grad = Matrix::Zero(state.F.rows(), state.F.cols());
  for (Index v = 0; v < ds.m; ++v) {
    const auto& X = ds.views[static_cast<std::size_t>(v)];
    const auto& O = ds.feature_masks[static_cast<std::size_t>(v)];
    const auto& U = state.U[static_cast<std::size_t>(v)];
    const Matrix R = X - state.F * U;
    const double w = view_weight(state, cfg.loss, v);
    if (r.squared_losses) {
      grad.noalias() -= 2.0 * w * R.cwiseProduct(O) * U.transpose();
    } else {
      grad.noalias() -= w * l21_grad(R, O, cfg.loss.eps21) * U.transpose();
    }
  }
  return grad;
}

Matrix hsic_grad_U(const ModelState& state, const Resolved& r,
                   const std::vector<KernelSpec>& frozen, Index v) {
  const auto& U = state.U[static_cast<std::size_t>(v)];
  Matrix grad = Matrix::Zero(U.rows(), U.cols());
  if (r.mu == 0.0) return grad;
  const Index count = static_cast<Index>(state.U.size());
  for (Index w = 0; w < count; ++w) {
    if (w == v) continue;
    const double weight = state.beta(v, w) + state.beta(w, v);
    if (weight == 0.0) continue;
    grad += weight * hsic_gradient(U, state.U[static_cast<std::size_t>(w)],
                                   frozen[static_cast<std::size_t>(v)],
                                   frozen[static_cast<std::size_t>(w)]);
  }
  return r.mu * grad;
}

struct StepOutcome {
  bool moved = false;
  bool stationary = false;
};

/// One projected-gradient step with Armijo backtracking along the projection
/// arc. Accepts when f(cand) <= f(x) - slope * <grad, x - cand>, which keeps
/// the slice objective non-increasing. On exhaustion the point is unchanged.
template <typename Eval>
StepOutcome armijo_step(Matrix& x, const Matrix& grad, double& value, Eval&& eval, bool clamp,
                        const ArmijoParams& params, double& step_hint) {
  StepOutcome outcome;
  double t = step_hint;
  for (int backtrack = 0; backtrack <= params.max_backtracks; ++backtrack) {
    Matrix cand = x - t * grad;
    if (clamp) cand = cand.cwiseMax(0.0);
    const double decrease = grad.cwiseProduct(x - cand).sum();
    if (decrease <= 0.0) {
      outcome.stationary = true;
      return outcome;
    }
    const double cand_value = eval(cand);
    if (cand_value <= value - params.slope * decrease) {
      x = std::move(cand);
      value = cand_value;
      step_hint = std::min(t * 2.0, 1e12);
      outcome.moved = true;
      return outcome;
    }
    t *= params.shrink;
  }
  step_hint = std::max(t, 1e-16);
  return outcome;
}

}  // namespace

Variant parse_variant(const std::string& name) {
  if (name == "NAIL") return Variant::NAIL;
  if (name == "NAIL-L") return Variant::NAIL_L;
  if (name == "NAIL-1") return Variant::NAIL_1;
  if (name == "NAIL-2") return Variant::NAIL_2;
  if (name == "NAIL-3") return Variant::NAIL_3;
  throw ConfigError("unknown variant: " + name);
}

std::string variant_name(Variant variant) {
  switch (variant) {
    case Variant::NAIL:
      return "NAIL";
    case Variant::NAIL_L:
      return "NAIL-L";
    case Variant::NAIL_1:
      return "NAIL-1";
    case Variant::NAIL_2:
      return "NAIL-2";
    case Variant::NAIL_3:
      return "NAIL-3";
  }
  throw ConfigError("unknown variant");
}

Index SolverConfig::latent_dim(const MultiViewDataset& ds) const {
  Index min_dim = std::numeric_limits<Index>::max();
  for (const auto& view : ds.views) min_dim = std::min(min_dim, view.cols());
  return std::max<Index>(1, static_cast<Index>(std::floor(rk * static_cast<double>(min_dim))));
}

void SolverConfig::validate() const {
  if (lambda < 0.0 || mu < 0.0) throw ConfigError("lambda and mu must be nonnegative");
  if (rk <= 0.0 || rk > 1.0) throw ConfigError("rk must be in (0,1]");
  if (max_outer < 1) throw ConfigError("max_outer must be positive");
  if (tol <= 0.0) throw ConfigError("tol must be positive");
  if (inner_steps < 1) throw ConfigError("inner_steps must be positive");
  if (armijo.shrink <= 0.0 || armijo.shrink >= 1.0) throw ConfigError("shrink must be in (0,1)");
  if (armijo.slope <= 0.0 || armijo.max_backtracks < 1) throw ConfigError("bad armijo params");
  loss.validate();
}

ModelState init_state(const MultiViewDataset& ds, const SolverConfig& cfg) {
  cfg.validate();
  ds.validate();
  const Index k = cfg.latent_dim(ds);
  ModelState state;

  double pooled_abs = 0.0;
  double pooled_count = 0.0;
  std::vector<double> view_scale(static_cast<std::size_t>(ds.m));
  for (Index v = 0; v < ds.m; ++v) {
    const auto& X = ds.views[static_cast<std::size_t>(v)];
    const auto& O = ds.feature_masks[static_cast<std::size_t>(v)];
    const double abs_sum = X.cwiseAbs().cwiseProduct(O).sum();
    const double count = O.sum();
    pooled_abs += abs_sum;
    pooled_count += count;
    const double mean_abs = count > 0.0 ? abs_sum / count : 0.0;
    view_scale[static_cast<std::size_t>(v)] =
        std::max(std::sqrt(mean_abs / static_cast<double>(k)), 1e-6);
  }
  const double pooled_mean = pooled_count > 0.0 ? pooled_abs / pooled_count : 0.0;
  const double f_scale = std::max(std::sqrt(pooled_mean / static_cast<double>(k)), 1e-6);

  {
    Rng rng(derive_seed(cfg.seed, kStreamInitF));
    state.F.resize(ds.n, k);
    for (Index i = 0; i < ds.n; ++i) {
      for (Index j = 0; j < k; ++j) state.F(i, j) = rng.uniform(0.0, f_scale);
    }
  }
  for (Index v = 0; v < ds.m; ++v) {
    Rng rng(derive_seed(cfg.seed, derive_seed(kStreamInitU, static_cast<std::uint64_t>(v))));
    const Index d = ds.views[static_cast<std::size_t>(v)].cols();
    Matrix u(k, d);
    for (Index i = 0; i < k; ++i) {
      for (Index j = 0; j < d; ++j) {
        u(i, j) = rng.uniform(0.0, view_scale[static_cast<std::size_t>(v)]);
      }
    }
    state.U.push_back(std::move(u));
  }
  {
    Rng rng(derive_seed(cfg.seed, derive_seed(kStreamInitU, static_cast<std::uint64_t>(ds.m))));
    const double scale = std::sqrt(0.5 / static_cast<double>(k));
    Matrix u(k, ds.l);
    for (Index i = 0; i < k; ++i) {
      for (Index j = 0; j < ds.l; ++j) u(i, j) = rng.uniform(0.0, scale);
    }
    state.U.push_back(std::move(u));
  }

  state.alpha = Vector::Constant(ds.m, 1.0 / static_cast<double>(ds.m));
  const double beta_uniform = 1.0 / std::sqrt(static_cast<double>(ds.m));
  state.beta = Matrix::Constant(ds.m + 1, ds.m + 1, beta_uniform);
  state.beta.diagonal().setZero();
  return state;
}

ModelState update_F(const ModelState& state, const MultiViewDataset& ds, const SolverConfig& cfg,
                    const std::vector<KernelSpec>& frozen, double* step_hint,
                    int* line_search_failures) {
  const Resolved r = resolve(cfg);
  ModelState next = state;
  double hint = step_hint ? *step_hint : 1.0;

  auto slice = [&](const Matrix& F) {
    ModelState probe = next;
    probe.F = F;
    double total = 0.0;
    for (Index v = 0; v < ds.m; ++v) total += recon_term(probe, ds, cfg, r, v);
    total += label_slice(probe, ds, cfg, r);
    return total;
  };

  double value = slice(next.F);
  for (int step = 0; step < cfg.inner_steps; ++step) {
    Matrix grad = recon_grad_F(next, ds, cfg, r);
    if (cfg.lambda != 0.0) {
      auto grads = r.squared_losses
                       ? squared_label_grads(next.F, next.U.back(), ds.labels, ds.label_mask)
                       : label_term_grads(next.F, next.U.back(), ds.labels, ds.label_mask,
                                          cfg.loss);
      grad += cfg.lambda * grads.first;
    }
    const auto outcome =
        armijo_step(next.F, grad, value, [&](const Matrix& c) { return slice(c); }, true,
                    cfg.armijo, hint);
    if (!outcome.moved) {
      if (!outcome.stationary && line_search_failures) ++*line_search_failures;
      break;
    }
  }
  if (step_hint) *step_hint = hint;
  return next;
}

ModelState update_U(const ModelState& state, const MultiViewDataset& ds, const SolverConfig& cfg,
                    Index v, const std::vector<KernelSpec>& frozen, double* step_hint,
                    int* line_search_failures) {
  if (v < 0 || v > ds.m) throw ConfigError("factor index out of range");
  const Resolved r = resolve(cfg);
  const bool label_block = v == ds.m;
  const bool clamp = !label_block || !cfg.label_weights_signed;
  ModelState next = state;
  double hint = step_hint ? *step_hint : 1.0;

  auto slice = [&](const Matrix& U) {
    ModelState probe = next;
    probe.U[static_cast<std::size_t>(v)] = U;
    double total = label_block ? label_slice(probe, ds, cfg, r) : recon_term(probe, ds, cfg, r, v);
    total += hsic_slice(probe, r, frozen, v);
    return total;
  };

  double value = slice(next.U[static_cast<std::size_t>(v)]);
  for (int step = 0; step < cfg.inner_steps; ++step) {
    Matrix grad;
    if (label_block) {
      auto grads = r.squared_losses
                       ? squared_label_grads(next.F, next.U.back(), ds.labels, ds.label_mask)
                       : label_term_grads(next.F, next.U.back(), ds.labels, ds.label_mask,
                                          cfg.loss);
      grad = cfg.lambda * grads.second;
    } else {
      const auto& X = ds.views[static_cast<std::size_t>(v)];
      const auto& O = ds.feature_masks[static_cast<std::size_t>(v)];
      const Matrix R = X - next.F * next.U[static_cast<std::size_t>(v)];
      const double w = view_weight(next, cfg.loss, v);
      if (r.squared_losses) {
        grad = -2.0 * w * next.F.transpose() * R.cwiseProduct(O);
      } else {
        grad = -w * next.F.transpose() * l21_grad(R, O, cfg.loss.eps21);
      }
    }
    grad += hsic_grad_U(next, r, frozen, v);
    const auto outcome =
        armijo_step(next.U[static_cast<std::size_t>(v)], grad, value,
                    [&](const Matrix& c) { return slice(c); }, clamp, cfg.armijo, hint);
    if (!outcome.moved) {
      if (!outcome.stationary && line_search_failures) ++*line_search_failures;
      break;
    }
  }
  if (step_hint) *step_hint = hint;
  return next;
}

Vector update_alpha(const Vector& errors, double s) {
  if (errors.size() < 1) throw ConfigError("empty error vector");
  if (s <= 0.0 || s >= 1.0) throw ConfigError("s must be in (0,1)");
  const double exponent = 1.0 / (s - 1.0);
  Vector weights(errors.size());
  for (Index v = 0; v < errors.size(); ++v) {
    weights(v) = std::pow(std::max(errors(v), 1e-12), exponent);
  }
  return weights / weights.sum();
}

Matrix update_beta(const Matrix& pairwise_hsic_values) {
  const Index count = pairwise_hsic_values.rows();
  if (count != pairwise_hsic_values.cols() || count < 2) {
    throw ConfigError("pairwise HSIC matrix must be square with >= 2 factors");
  }
  const double uniform = 1.0 / std::sqrt(static_cast<double>(count - 1));
  Matrix beta = Matrix::Zero(count, count);
  for (Index v = 0; v < count; ++v) {
    double norm_sq = 0.0;
    for (Index w = 0; w < count; ++w) {
      if (w != v) norm_sq += pairwise_hsic_values(v, w) * pairwise_hsic_values(v, w);
    }
    const double norm = std::sqrt(norm_sq);
    for (Index w = 0; w < count; ++w) {
      if (w == v) continue;
      beta(v, w) = norm < 1e-12 ? uniform : pairwise_hsic_values(v, w) / norm;
    }
  }
  return beta;
}

Matrix pairwise_hsic(const std::vector<Matrix>& factors, const std::vector<KernelSpec>& specs) {
  const Index count = static_cast<Index>(factors.size());
  if (specs.size() != factors.size()) throw ConfigError("one kernel spec per factor is required");
  Matrix h = Matrix::Zero(count, count);
  for (Index v = 0; v < count; ++v) {
    for (Index w = v + 1; w < count; ++w) {
      const double value = hsic(factors[static_cast<std::size_t>(v)],
                                factors[static_cast<std::size_t>(w)],
                                specs[static_cast<std::size_t>(v)],
                                specs[static_cast<std::size_t>(w)]);
      h(v, w) = value;
      h(w, v) = value;
    }
  }
  return h;
}

std::vector<KernelSpec> freeze_bandwidths(const ModelState& state, const SolverConfig& cfg) {
  const Resolved r = resolve(cfg);
  std::vector<KernelSpec> specs;
  specs.reserve(state.U.size());
  for (const auto& u : state.U) {
    if (r.kernel.kind == KernelKind::Gaussian) {
      specs.push_back(KernelSpec::gaussian(r.kernel.bandwidth > 0.0 ? r.kernel.bandwidth
                                                                    : median_bandwidth(u)));
    } else {
      specs.push_back(KernelSpec::linear());
    }
  }
  return specs;
}

ObjectiveBreakdown variant_objective(const ModelState& state, const MultiViewDataset& ds,
                                     const SolverConfig& cfg,
                                     const std::vector<KernelSpec>& frozen) {
  const Resolved r = resolve(cfg);
  ObjectiveBreakdown out;
  for (Index v = 0; v < ds.m; ++v) {
    const auto& X = ds.views[static_cast<std::size_t>(v)];
    const auto& O = ds.feature_masks[static_cast<std::size_t>(v)];
    const Matrix R = X - state.F * state.U[static_cast<std::size_t>(v)];
    const double raw =
        r.squared_losses ? R.cwiseProduct(O).squaredNorm() : masked_l21(R, O);
    out.reconstruction += view_weight(state, cfg.loss, v) * raw;
  }
  out.label = label_slice(state, ds, cfg, r);
  out.hsic = full_hsic_term(state, r, frozen);
  return out;
}

FitResult fit(const MultiViewDataset& ds, const SolverConfig& cfg) {
  cfg.validate();
  ds.validate();
  const Resolved r = resolve(cfg);

  FitResult result;
  result.state = init_state(ds, cfg);
  auto& state = result.state;
  auto& trace = result.trace;

  {
    const auto frozen = freeze_bandwidths(state, cfg);
    trace.initial = variant_objective(state, ds, cfg, frozen);
  }
  double previous = trace.initial.total();

  double f_hint = 1.0;
  std::vector<double> u_hints(state.U.size(), 1.0);

  for (int outer = 0; outer < cfg.max_outer; ++outer) {
    IterationRecord record;
    const auto frozen = freeze_bandwidths(state, cfg);

    record.substep_objectives.push_back(smoothed_total(state, ds, cfg, r, frozen));
    state = update_F(state, ds, cfg, frozen, &f_hint, &record.line_search_failures);
    record.substep_objectives.push_back(smoothed_total(state, ds, cfg, r, frozen));
    for (Index v = 0; v <= ds.m; ++v) {
      state = update_U(state, ds, cfg, v, frozen, &u_hints[static_cast<std::size_t>(v)],
                       &record.line_search_failures);
      record.substep_objectives.push_back(smoothed_total(state, ds, cfg, r, frozen));
    }

    if (r.auto_alpha) {
      Vector errors(ds.m);
      for (Index v = 0; v < ds.m; ++v) {
        const auto& X = ds.views[static_cast<std::size_t>(v)];
        const auto& O = ds.feature_masks[static_cast<std::size_t>(v)];
        const Matrix R = X - state.F * state.U[static_cast<std::size_t>(v)];
        errors(v) = r.squared_losses ? R.cwiseProduct(O).squaredNorm() : masked_l21(R, O);
      }
      state.alpha = update_alpha(errors, cfg.loss.s);
    }
    if (r.auto_beta && r.mu > 0.0) {
      state.beta = update_beta(pairwise_hsic(state.U, frozen));
    }

    record.objective = variant_objective(state, ds, cfg, frozen);
    record.alpha = state.alpha;
    record.beta = state.beta;
    const double current = record.objective.total();
    trace.iterations.push_back(std::move(record));

    if (!std::isfinite(current)) {
      trace.status = FitStatus::Diverged;
      break;
    }
    if (std::abs(current - previous) / std::max(previous, 1e-12) < cfg.tol) {
      trace.status = FitStatus::Converged;
      trace.converged = true;
      break;
    }
    previous = current;
  }

  trace.iterations_used = static_cast<int>(trace.iterations.size());
  return result;
}

Prediction predict(const ModelState& state, double threshold) {
  Prediction out;
  const Matrix z = state.F * state.U.back();
  out.scores = z.unaryExpr([](double value) { return sigmoid(value); });
  out.labels = (out.scores.array() > threshold).cast<double>().matrix();
  return out;
}

}  // namespace nail
