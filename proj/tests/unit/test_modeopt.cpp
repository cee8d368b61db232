#include <gtest/gtest.h>

#include <cmath>

#include "orbdmrg/modeopt.hpp"
#include "orbdmrg/oracle.hpp"
#include "support.hpp"

using namespace orbdmrg;
using namespace orbdmrg::testing;

namespace {

SchmidtSpectrum spectrum_of(std::vector<double> s) {
  SchmidtSpectrum sp;
  sp.sigma = std::move(s);
  sp.sector.resize(sp.sigma.size());
  return sp;
}

// Normalised two-site block at the middle cut of a random MPS.
TwoSiteTensor random_block(int p, int D, Symmetry sym, std::uint64_t seed) {
  const int n = 4;
  Charge q = sym == Symmetry::per_species ? target_charge(std::vector<int>(p, 2), sym)
                                          : target_charge(std::vector<int>(p, 2), sym);
  auto psi = random_mps(n, p, sym, q, D, seed);
  canonicalize(psi, 1);
  auto theta = block_two_site(psi, 1);
  theta.assign(theta.flatten().normalized());
  return theta;
}

Matrix finite_difference(const TwoSiteTensor& theta, const Matrix& X, const Matrix& V, CostFunction c,
                         double h = 1e-5) {
  Matrix G(X.rows(), X.cols());
  for (int i = 0; i < X.rows(); ++i)
    for (int j = 0; j < X.cols(); ++j) {
      Complex g = 0;
      for (Complex e : {Complex(1, 0), Complex(0, 1)}) {
        Matrix Xp = X, Xm = X;
        Xp(i, j) += h * e;
        Xm(i, j) -= h * e;
        g += e * (isometry_cost(theta, Xp, V, c) - isometry_cost(theta, Xm, V, c)) / (2 * h);
      }
      G(i, j) = g;
    }
  return G;
}

Matrix local_on_site(int p, std::mt19937_64& rng) {
  Matrix U = Matrix::Zero(2 * p, 2 * p);
  U.topLeftCorner(p, p) = random_unitary(p, rng);
  U.bottomRightCorner(p, p) = random_unitary(p, rng);
  return U;
}

Matrix givens(double angle) {
  Matrix R(2, 2);
  R << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return R;
}

}  // namespace

TEST(Householder, SelectorGivesIdentity) {
  for (int b : {1, 2, 3}) {
    Matrix P = grassmann_selector(2 * b, b);
    Matrix U = householder_unitary(P);
    EXPECT_EQ(U, Matrix(Matrix::Identity(2 * b, 2 * b)));
  }
}

TEST(Householder, SwapExample) {
  Matrix X(2, 1);
  X << 0.0, 1.0;
  Matrix U = householder_unitary(X);
  Matrix ref(2, 2);
  ref << 0.0, 1.0, 1.0, 0.0;
  EXPECT_LE((U - ref).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Householder, RandomIsometries) {
  std::mt19937_64 rng(1);
  double unitarity = 0, columns = 0;
  for (int k = 0; k < 1000; ++k) {
    const int b = 1 + k % 3, a = 2 * b;
    Matrix X = random_isometry(a, b, rng);
    HouseholderResult r = householder(X, 8, k);
    unitarity = std::max(unitarity, unitarity_error(r.U));
    columns = std::max(columns, (r.U.leftCols(b) - X * r.V).cwiseAbs().maxCoeff());
    if (r.retries == 0) EXPECT_EQ(r.V, Matrix(Matrix::Identity(b, b)));
  }
  EXPECT_LE(unitarity, 1e-12);
  EXPECT_LE(columns, 1e-12);
}

TEST(Householder, SingularParametrisationIsRetried) {
  Matrix X = Matrix::Zero(4, 2);
  X(0, 0) = 1.0;
  X(2, 1) = 1.0;
  HouseholderResult r = householder(X, 8, 3);
  EXPECT_GT(r.retries, 0);
  EXPECT_LE(unitarity_error(r.U), 1e-12);
  EXPECT_LE((r.U.leftCols(2) - X * r.V).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(unitarity_error(r.V), 1e-12);
  EXPECT_THROW(householder(X, 0, 3), Error);

  Matrix Y = Matrix::Zero(2, 1);
  Y(0, 0) = std::cos(1e-9);
  Y(1, 0) = std::sin(1e-9);
  HouseholderResult near = householder(Y, 8, 4);
  EXPECT_LE(unitarity_error(near.U), 1e-12);
  EXPECT_LE((near.U.leftCols(1) - Y * near.V).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Cost, Identities) {
  const double s = 1.0 / std::sqrt(2.0);
  EXPECT_EQ(cost_f1(spectrum_of({1.0})), 1.0);
  EXPECT_EQ(cost_f4(spectrum_of({1.0})), -1.0);
  EXPECT_NEAR(cost_f1(spectrum_of({s, s})), std::sqrt(2.0), 4e-16);
  EXPECT_NEAR(cost_f4(spectrum_of({s, s})), -0.5, 2e-16);
}

TEST(Cost, BoundsAndPurity) {
  for (int k = 0; k < 20; ++k) {
    auto theta = random_block(1 + k % 2, 2 + k % 5, Symmetry::per_species, 100 + k);
    auto sp = theta.spectrum();
    EXPECT_GE(cost_f1(sp), 1.0 - 1e-12);
    EXPECT_GE(cost_f4(sp), -1.0 - 1e-12);
    EXPECT_LT(cost_f4(sp), 0.0);
    Matrix M = theta.natural();
    Matrix rho = M * M.adjoint();
    EXPECT_NEAR(cost_f4(sp), -(rho * rho).trace().real(), 1e-12);
    double sum = 0;
    for (double x : sp.sigma) sum += x;
    EXPECT_NEAR(cost_f1(sp), sum, 1e-14);
  }
}

TEST(Cost, CosetInvariance) {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 20; ++k) {
    const int p = 1 + k % 2;
    auto theta = random_block(p, 6, Symmetry::total_number, 200 + k);
    Matrix W = local_on_site(p, rng);
    for (CostFunction c : {CostFunction::f1, CostFunction::f4})
      EXPECT_NEAR(local_cost(theta, W, c), cost_value(theta.spectrum(), c), 1e-10);
  }
}

TEST(Gradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  double worst = 0;
  int cases = 0;
  for (int p : {1, 2})
    for (int D : {2, 8, 16})
      for (int k = 0; k < 17; ++k) {
        auto theta = random_block(p, D, Symmetry::total_number, 1000 * p + 10 * D + k);
        Matrix X = random_isometry(2 * p, p, rng);
        CostGradient g = grad_f4(theta, X, 8, k);
        Matrix fd = finite_difference(theta, X, g.V, CostFunction::f4);
        worst = std::max(worst, (g.gradient - fd).norm() / fd.norm());
        EXPECT_NEAR(g.value, isometry_cost(theta, X, g.V, CostFunction::f4), 1e-13);
        ++cases;
      }
  EXPECT_GE(cases, 100);
  EXPECT_LE(worst, 1e-6);
}

TEST(Gradient, NuclearNormMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (int p : {1, 2})
    for (int k = 0; k < 5; ++k) {
      auto theta = random_block(p, 4, Symmetry::total_number, 3000 + 10 * p + k);
      Matrix X = random_isometry(2 * p, p, rng);
      CostGradient g = cost_gradient(theta, X, CostFunction::f1, 8, k);
      Matrix fd = finite_difference(theta, X, g.V, CostFunction::f1);
      EXPECT_LE((g.gradient - fd).norm() / fd.norm(), 1e-6);
    }
}

TEST(Gradient, PerSpeciesEntries) {
  std::mt19937_64 rng(5);
  auto theta = random_block(2, 8, Symmetry::per_species, 41);
  LocalGeometry geo = local_geometry(theta, SymmetryRestriction::none);
  ASSERT_EQ(geo.kind, GrassmannKind::per_species);
  Matrix X = geo.random_unitary(rng) * grassmann_selector(4, 2);
  CostGradient g = grad_f4(theta, X, 8, 1);
  const double h = 1e-5;
  for (int s = 0; s < 2; ++s)
    for (int row : {s, 2 + s})
      for (Complex e : {Complex(1, 0), Complex(0, 1)}) {
        Matrix Xp = X, Xm = X;
        Xp(row, s) += h * e;
        Xm(row, s) -= h * e;
        double fd = (isometry_cost(theta, Xp, g.V, CostFunction::f4) - isometry_cost(theta, Xm, g.V, CostFunction::f4)) /
                    (2 * h);
        double an = e.real() != 0 ? g.gradient(row, s).real() : g.gradient(row, s).imag();
        EXPECT_NEAR(an, fd, 1e-6 * std::max(1.0, std::abs(fd)));
      }
}

TEST(Gradient, ProductStateAtIdentity) {
  for (int p : {1, 2}) {
    std::vector<int> states(4, 0);
    states[1] = p == 1 ? 1 : 2;
    states[2] = p == 1 ? 0 : 1;
    auto psi = product_mps(4, p, Symmetry::total_number, states);
    canonicalize(psi, 1);
    auto theta = block_two_site(psi, 1);
    Matrix P = grassmann_selector(2 * p, p);
    CostGradient g = grad_f4(theta, P, 8, 7);
    EXPECT_NEAR(g.value, -1.0, 1e-12);
    Matrix fd = finite_difference(theta, P, g.V, CostFunction::f4);
    EXPECT_LE((g.gradient - fd).norm(), 1e-6 * std::max(1.0, fd.norm()));
    LocalGeometry geo = local_geometry(theta, SymmetryRestriction::none);
    EXPECT_LE(geo.tangent(P, g.gradient).norm(), 1e-8);
  }
}

TEST(Gradient, VacuumBlockIsStationaryEverywhere) {
  std::mt19937_64 rng(6);
  auto psi = product_mps(4, 1, Symmetry::per_species, {1, 0, 0, 1});
  canonicalize(psi, 1);
  auto theta = block_two_site(psi, 1);
  for (int k = 0; k < 5; ++k) {
    Matrix X = random_isometry(2, 1, rng);
    CostGradient g = grad_f4(theta, X, 8, k);
    EXPECT_NEAR(g.value, -1.0, 1e-14);
    EXPECT_LE(g.gradient.norm(), 1e-8);
  }
}

TEST(Geometry, ChartAndStructure) {
  std::mt19937_64 rng(8);
  for (GrassmannKind kind : {GrassmannKind::full, GrassmannKind::per_species, GrassmannKind::spin_summed}) {
    LocalGeometry geo{2, kind};
    RealVector z = RealVector::Zero(geo.real_dims());
    EXPECT_EQ(geo.chart(z), grassmann_selector(4, 2));
    std::normal_distribution<double> g;
    for (int k = 0; k < z.size(); ++k) z(k) = g(rng);
    Matrix X = geo.chart(z);
    EXPECT_LE((X.adjoint() * X - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-13);
    Matrix U = householder(X, 8, 1, &geo).U;
    EXPECT_TRUE(geo.is_structured(U, 1e-12));
    EXPECT_TRUE(geo.is_structured(geo.random_unitary(rng), 1e-12));
  }
  EXPECT_EQ((LocalGeometry{2, GrassmannKind::spin_summed}.real_dims()), 2);
}

TEST(Optimize, ProductStateIsLeftAlone) {
  auto psi = product_mps(2, 2, Symmetry::per_species, {2, 1});
  auto theta = block_two_site(psi, 0);
  for (OptimizerMethod m : {OptimizerMethod::nelder_mead, OptimizerMethod::conjugate_gradient}) {
    LocalOptConfig cfg;
    cfg.method = m;
    cfg.cost = m == OptimizerMethod::nelder_mead ? CostFunction::f1 : CostFunction::f4;
    auto r = optimize_local_basis(theta, cfg);
    EXPECT_FALSE(r.accepted);
    EXPECT_EQ(r.U_loc, Matrix(Matrix::Identity(4, 4)));
    EXPECT_EQ(r.f_after, r.f_before);
  }
}

TEST(Optimize, RecoversGivensRotation) {
  for (double angle : {0.3, 0.7, 1.1, -0.4}) {
    auto psi = product_mps(2, 1, Symmetry::per_species, {1, 0});
    TruncationPolicy exact;
    apply_two_site_gate(psi, 0, gaussian_unitary(givens(angle)), exact);
    auto theta = block_two_site(psi, 0);
    const double f1_rotated = std::abs(std::cos(angle)) + std::abs(std::sin(angle));
    LocalOptConfig cfg;
    auto r = optimize_local_basis(theta, cfg);
    EXPECT_NEAR(r.f_before, f1_rotated, 1e-12);
    EXPECT_TRUE(r.accepted);
    EXPECT_NEAR(r.f_after, 1.0, 1e-6) << angle;
    EXPECT_EQ(r.parameters, 2);
    cfg.cost = CostFunction::f4;
    cfg.method = OptimizerMethod::conjugate_gradient;
    cfg.restriction = SymmetryRestriction::none;
    auto c = optimize_local_basis(theta, cfg);
    EXPECT_TRUE(c.accepted);
    EXPECT_NEAR(c.f_after, -1.0, 1e-6) << angle;
  }
}

TEST(Optimize, SpinSummedKeepsBlockForm) {
  std::mt19937_64 rng(9);
  // singlet-like: u (+) u applied to a doubly occupied site
  auto psi = product_mps(2, 2, Symmetry::per_species, {3, 0});
  Matrix u = random_unitary(2, rng);
  Matrix U = Matrix::Zero(4, 4);
  for (int s = 0; s < 2; ++s)
    for (int x = 0; x < 2; ++x)
      for (int y = 0; y < 2; ++y) U(2 * x + s, 2 * y + s) = u(x, y);
  TruncationPolicy exact;
  apply_two_site_gate(psi, 0, gaussian_unitary(U), exact);
  auto theta = block_two_site(psi, 0);
  LocalOptConfig cfg;
  auto r = optimize_local_basis(theta, cfg);
  EXPECT_EQ(r.parameters, 2);
  LocalGeometry geo{2, GrassmannKind::spin_summed};
  EXPECT_TRUE(geo.is_structured(r.U_loc, 1e-12));
  EXPECT_LE(r.f_after, r.f_before);
  EXPECT_TRUE(r.accepted);
  EXPECT_NEAR(r.f_after, 1.0, 1e-6);
  auto rotated = apply_two_site_gate(theta, gaussian_unitary(r.U_loc));
  EXPECT_NEAR(rotated.spectrum().weight(), 1.0, 1e-12);
}

TEST(Optimize, AcceptanceRuleAndDeterminism) {
  for (int k = 0; k < 10; ++k) {
    auto theta = random_block(k % 2 ? 2 : 1, 4, Symmetry::per_species, 500 + k);
    LocalOptConfig cfg;
    cfg.seed = k;
    cfg.restriction = k % 3 ? SymmetryRestriction::spin_summed : SymmetryRestriction::none;
    cfg.method = k % 2 ? OptimizerMethod::conjugate_gradient : OptimizerMethod::nelder_mead;
    cfg.cost = k % 2 ? CostFunction::f4 : CostFunction::f1;
    TruncationPolicy pol;
    pol.D_max = 3;
    auto r = optimize_local_basis(theta, cfg, pol);
    auto again = optimize_local_basis(theta, cfg, pol);
    EXPECT_EQ(r.U_loc, again.U_loc);
    EXPECT_EQ(r.trace, again.trace);
    EXPECT_FALSE(r.failed) << r.warning;
    if (r.accepted) {
      EXPECT_GE(r.f_before - r.f_after, cfg.delta_accept);
      EXPECT_NEAR(local_cost(theta, r.U_loc, cfg.cost), r.f_after, 1e-14);
      EXPECT_LE(r.eps_after, r.eps_before);
    } else {
      EXPECT_EQ(r.U_loc, Matrix(Matrix::Identity(r.U_loc.rows(), r.U_loc.cols())));
      EXPECT_EQ(r.f_after, r.f_before);
    }
  }
}

TEST(Optimize, HookKeepsEnergyAndImprovesCost) {
  std::mt19937_64 rng(10);
  const int n = 5;
  auto op = random_operator(n, 2, rng);
  auto psi = random_mps(n, 2, Symmetry::per_species, target_charge({2, 3}, Symmetry::per_species), 64, 11);
  DmrgEngine eng(op, psi);
  SweepOptions opt;
  eng.sweep(opt);
  eng.sweep(opt);
  const double e0 = eng.energy();
  int accepted = 0;
  LocalOptConfig cfg;
  auto hook = make_local_basis_hook(cfg, [&](const LocalOptResult& r, const StepContext&) {
    if (r.accepted) {
      ++accepted;
      EXPECT_GE(r.f_before - r.f_after, cfg.delta_accept);
    }
  });
  opt.sweep = 1;
  auto steps = eng.sweep(opt, hook);
  EXPECT_GT(accepted, 0);
  Vector v = dense_embedding(eng.state());
  Matrix H = build_full_hamiltonian(eng.coefficients()).H;
  EXPECT_NEAR((v.dot(H * v)).real(), eng.energy(), 1e-9);
  EXPECT_NEAR(eng.energy(), e0, 1e-8);
  Matrix A = eng.coefficients().mode_space.accumulated;
  EXPECT_LE(unitarity_error(A), 1e-10);
  auto replay = rotate_coefficients(op, A);
  EXPECT_LE((replay.t - eng.coefficients().t).cwiseAbs().maxCoeff(), 1e-10);
}
