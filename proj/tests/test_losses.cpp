#include "doctest.h"

#include "nail/losses.hpp"

#include <cmath>

using namespace nail;

namespace {

Matrix random_matrix(Index rows, Index cols, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
  Rng rng(seed);
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) out(i, j) = rng.uniform(lo, hi);
  }
  return out;
}

double rel_error(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-12);
}

}  // namespace

TEST_CASE("masked_l21") {
  Matrix r(2, 2);
  r << 3, 4, 0, 0;
  CHECK(masked_l21(r, Matrix::Ones(2, 2)) == 5.0);
  CHECK(masked_l21(r, Matrix::Zero(2, 2)) == 0.0);
  Matrix partial(1, 2);
  partial << 1, 0;
  Matrix row(1, 2);
  row << 3, 4;
  CHECK(masked_l21(row, partial) == 3.0);
  CHECK_THROWS_AS(masked_l21(r, Matrix::Ones(3, 2)), ConfigError);
}

TEST_CASE("l21_grad") {
  const LossConfig cfg;
  SUBCASE("zero rows stay zero") {
    const Matrix g = l21_grad(Matrix::Zero(3, 2), Matrix::Ones(3, 2), cfg.eps21);
    CHECK(g == Matrix::Zero(3, 2));
  }
  SUBCASE("a row points along its unit direction") {
    Matrix r(1, 2);
    r << 3, 4;
    const Matrix g = l21_grad(r, Matrix::Ones(1, 2), cfg.eps21);
    CHECK(g(0, 0) == doctest::Approx(0.6).epsilon(1e-6));
    CHECK(g(0, 1) == doctest::Approx(0.8).epsilon(1e-6));
  }
  SUBCASE("masked entries get zero gradient") {
    Matrix r(1, 2);
    r << 3, 4;
    Matrix o(1, 2);
    o << 1, 0;
    const Matrix g = l21_grad(r, o, cfg.eps21);
    CHECK(g(0, 1) == 0.0);
    CHECK(g(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("finite differences on the smoothed loss") {
    const double eps = 1e-4;  // large enough to matter near small rows
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Matrix r = random_matrix(5, 4, 700 + seed);
      Matrix o = Matrix::Ones(5, 4);
      o(1, 2) = 0.0;
      o(4, 0) = 0.0;
      const Matrix analytic = l21_grad(r, o, eps);
      Matrix fd(5, 4);
      const double step = 1e-6;
      for (Index i = 0; i < 5; ++i) {
        for (Index j = 0; j < 4; ++j) {
          Matrix up = r, dn = r;
          up(i, j) += step;
          dn(i, j) -= step;
          fd(i, j) = (masked_l21_smoothed(up, o, eps) - masked_l21_smoothed(dn, o, eps)) /
                     (2 * step);
        }
      }
      CHECK(rel_error(analytic, fd) < 1e-4);
    }
  }
}

TEST_CASE("focal_loss") {
  LossConfig cfg;
  SUBCASE("perfect prediction costs nothing") {
    CHECK(focal_loss(1.0, 1.0, cfg) == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(focal_loss(0.0, 0.0, cfg) == doctest::Approx(0.0).epsilon(1e-10));
  }
  SUBCASE("y=1, p=0.5 at defaults") {
    CHECK(focal_loss(1.0, 0.5, cfg) ==
          doctest::Approx(0.5 * 0.25 * std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("gamma=0 halves the cross entropy") {
    cfg.gamma = 0.0;
    for (double p : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      CHECK(focal_loss(1.0, p, cfg) == doctest::Approx(-0.5 * std::log(p)).epsilon(1e-12));
      CHECK(focal_loss(0.0, p, cfg) ==
            doctest::Approx(-0.5 * std::log(1.0 - p)).epsilon(1e-12));
    }
  }
  SUBCASE("nonnegative and decreasing in the true-class probability") {
    cfg = LossConfig{};
    double prev = focal_loss(1.0, 0.01, cfg);
    CHECK(prev >= 0.0);
    for (double p = 0.02; p < 1.0; p += 0.01) {
      const double cur = focal_loss(1.0, p, cfg);
      CHECK(cur >= 0.0);
      CHECK(cur < prev);
      prev = cur;
    }
  }
}

TEST_CASE("label_term") {
  LossConfig cfg;
  SUBCASE("nothing observed, nothing counted") {
    const Matrix f = random_matrix(3, 2, 1);
    const Matrix u = random_matrix(2, 4, 2);
    CHECK(label_term(f, u, Matrix::Zero(3, 4), Matrix::Zero(3, 4), cfg) == 0.0);
  }
  SUBCASE("single observed entry at zero logit") {
    const Matrix f = Matrix::Zero(1, 2);
    const Matrix u = random_matrix(2, 1, 3);
    Matrix y(1, 1), oy(1, 1);
    y << 1;
    oy << 1;
    CHECK(label_term(f, u, y, oy, cfg) ==
          doctest::Approx(0.5 * 0.25 * std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("duplicated rows double the term") {
    const Matrix f = random_matrix(2, 3, 4);
    const Matrix u = random_matrix(3, 2, 5);
    const Matrix y = (random_matrix(2, 2, 6, 0.0, 1.0).array() > 0.5).cast<double>();
    const Matrix oy = Matrix::Ones(2, 2);
    const double once = label_term(f, u, y, oy, cfg);
    Matrix f2(4, 3), y2(4, 2);
    f2 << f, f;
    y2 << y, y;
    CHECK(label_term(f2, u, y2, Matrix::Ones(4, 2), cfg) ==
          doctest::Approx(2.0 * once).epsilon(1e-12));
  }
  SUBCASE("gamma=0 equals half the masked cross entropy") {
    cfg.gamma = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Matrix f = random_matrix(5, 3, 800 + seed);
      const Matrix u = random_matrix(3, 4, 900 + seed);
      const Matrix y = (random_matrix(5, 4, 1000 + seed, 0.0, 1.0).array() > 0.6).cast<double>();
      const Matrix oy = (random_matrix(5, 4, 1100 + seed, 0.0, 1.0).array() > 0.3).cast<double>();
      const Matrix z = f * u;
      double ce = 0.0;
      for (Index i = 0; i < 5; ++i) {
        for (Index j = 0; j < 4; ++j) {
          if (oy(i, j) == 0.0) continue;
          const double p = sigmoid(z(i, j));
          ce += y(i, j) == 1.0 ? -std::log(p) : -std::log(1.0 - p);
        }
      }
      CHECK(label_term(f, u, y, oy, cfg) == doctest::Approx(0.5 * ce).epsilon(1e-12));
    }
  }
}

TEST_CASE("label_term_grads") {
  LossConfig cfg;
  SUBCASE("all-unobserved gives zero gradients") {
    const Matrix f = random_matrix(3, 2, 1);
    const Matrix u = random_matrix(2, 4, 2);
    const auto [df, du] = label_term_grads(f, u, Matrix::Zero(3, 4), Matrix::Zero(3, 4), cfg);
    CHECK(df == Matrix::Zero(3, 2));
    CHECK(du == Matrix::Zero(2, 4));
  }
  SUBCASE("gamma=0 reduces to the scaled logistic gradient") {
    cfg.gamma = 0.0;
    const Matrix f = random_matrix(4, 3, 10);
    const Matrix u = random_matrix(3, 2, 11);
    const Matrix y = (random_matrix(4, 2, 12, 0.0, 1.0).array() > 0.5).cast<double>();
    const Matrix oy = Matrix::Ones(4, 2);
    const Matrix z = f * u;
    Matrix dz(4, 2);
    for (Index i = 0; i < 4; ++i) {
      for (Index j = 0; j < 2; ++j) dz(i, j) = 0.5 * (sigmoid(z(i, j)) - y(i, j));
    }
    const auto [df, du] = label_term_grads(f, u, y, oy, cfg);
    CHECK(rel_error(df, dz * u.transpose()) < 1e-12);
    CHECK(rel_error(du, f.transpose() * dz) < 1e-12);
  }
  SUBCASE("finite differences at gamma=2") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Matrix f = random_matrix(6, 3, 1200 + seed);
      const Matrix u = random_matrix(3, 4, 1300 + seed);
      const Matrix y = (random_matrix(6, 4, 1400 + seed, 0.0, 1.0).array() > 0.5).cast<double>();
      const Matrix oy =
          (random_matrix(6, 4, 1500 + seed, 0.0, 1.0).array() > 0.25).cast<double>();
      const auto [df, du] = label_term_grads(f, u, y, oy, cfg);
      const double step = 1e-5;
      Matrix fd_f(6, 3);
      for (Index i = 0; i < 6; ++i) {
        for (Index j = 0; j < 3; ++j) {
          Matrix up = f, dn = f;
          up(i, j) += step;
          dn(i, j) -= step;
          fd_f(i, j) =
              (label_term(up, u, y, oy, cfg) - label_term(dn, u, y, oy, cfg)) / (2 * step);
        }
      }
      CHECK(rel_error(df, fd_f) < 1e-4);
      Matrix fd_u(3, 4);
      for (Index i = 0; i < 3; ++i) {
        for (Index j = 0; j < 4; ++j) {
          Matrix up = u, dn = u;
          up(i, j) += step;
          dn(i, j) -= step;
          fd_u(i, j) =
              (label_term(f, up, y, oy, cfg) - label_term(f, dn, y, oy, cfg)) / (2 * step);
        }
      }
      CHECK(rel_error(du, fd_u) < 1e-4);
    }
  }
}

namespace {

/// Two-view fixture with a hand-built state for objective checks.
struct ObjectiveFixture {
  MultiViewDataset ds;
  ModelState state;

  explicit ObjectiveFixture(std::uint64_t seed) {
    const Index n = 6, k = 2;
    ds.n = n;
    ds.m = 2;
    ds.l = 3;
    state.F = random_matrix(n, k, seed, 0.0, 1.0);
    state.U.push_back(random_matrix(k, 4, seed + 1, 0.0, 1.0));
    state.U.push_back(random_matrix(k, 3, seed + 2, 0.0, 1.0));
    state.U.push_back(random_matrix(k, 3, seed + 3));
    ds.views.push_back(random_matrix(n, 4, seed + 4, 0.0, 2.0));
    ds.views.push_back(random_matrix(n, 3, seed + 5, 0.0, 2.0));
    ds.feature_masks.push_back(Matrix::Ones(n, 4));
    ds.feature_masks.push_back(Matrix::Ones(n, 3));
    ds.labels = (random_matrix(n, 3, seed + 6, 0.0, 1.0).array() > 0.5).cast<double>();
    ds.label_mask = Matrix::Ones(n, 3);
    ds.eval_truth = Matrix::Zero(n, 3);
    ds.eval_mask = Matrix::Zero(n, 3);
    state.alpha = Vector(2);
    state.alpha << 0.3, 0.7;
    state.beta = Matrix::Constant(3, 3, 1.0 / std::sqrt(2.0));
    state.beta.diagonal().setZero();
  }
};

}  // namespace

TEST_CASE("objective") {
  const LossConfig cfg;
  SUBCASE("lambda=mu=0 isolates the reconstruction term") {
    ObjectiveFixture fix(20);
    const auto bd = objective(fix.state, fix.ds, cfg, 0.0, 0.0, KernelSpec::linear());
    CHECK(bd.label == 0.0);
    CHECK(bd.hsic == 0.0);
    double expected = 0.0;
    for (Index v = 0; v < 2; ++v) {
      const Matrix r = fix.ds.views[static_cast<std::size_t>(v)] -
                       fix.state.F * fix.state.U[static_cast<std::size_t>(v)];
      expected += std::pow(fix.state.alpha(v), cfg.s) *
                  masked_l21(r, fix.ds.feature_masks[static_cast<std::size_t>(v)]);
    }
    CHECK(bd.reconstruction == doctest::Approx(expected).epsilon(1e-12));
    CHECK(bd.total() == bd.reconstruction);
  }
  SUBCASE("a perfect factorization has zero reconstruction") {
    ObjectiveFixture fix(21);
    for (Index v = 0; v < 2; ++v) {
      fix.ds.views[static_cast<std::size_t>(v)] =
          fix.state.F * fix.state.U[static_cast<std::size_t>(v)];
    }
    const auto bd = objective(fix.state, fix.ds, cfg, 0.0, 0.0, KernelSpec::linear());
    CHECK(bd.total() == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("constant-row factors contribute nothing to the penalty") {
    ObjectiveFixture fix(22);
    fix.state.U[0].row(0).setConstant(0.4);
    fix.state.U[0].row(1).setConstant(0.4);
    // U^1 now has equal rows; every HSIC pair involving it vanishes.
    fix.state.beta.setZero();
    fix.state.beta(0, 1) = 1.0;
    fix.state.beta(1, 0) = 1.0;
    const auto with_pair = objective(fix.state, fix.ds, cfg, 0.0, 2.0, KernelSpec::linear());
    CHECK(with_pair.hsic == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("permuting views together with weights leaves the value unchanged") {
    ObjectiveFixture fix(23);
    const auto base = objective(fix.state, fix.ds, cfg, 0.7, 1.3, KernelSpec::gaussian(1.0));

    ObjectiveFixture swapped = fix;
    std::swap(swapped.ds.views[0], swapped.ds.views[1]);
    std::swap(swapped.ds.feature_masks[0], swapped.ds.feature_masks[1]);
    std::swap(swapped.state.U[0], swapped.state.U[1]);
    std::swap(swapped.state.alpha(0), swapped.state.alpha(1));
    // Permute beta rows/columns with the same transposition (label row fixed).
    const Matrix b = fix.state.beta;
    Eigen::Vector3i perm(1, 0, 2);
    for (Index i = 0; i < 3; ++i) {
      for (Index j = 0; j < 3; ++j) {
        swapped.state.beta(i, j) = b(perm(i), perm(j));
      }
    }
    const auto permuted =
        objective(swapped.state, swapped.ds, cfg, 0.7, 1.3, KernelSpec::gaussian(1.0));
    CHECK(permuted.total() == doctest::Approx(base.total()).epsilon(1e-12));
  }
}
