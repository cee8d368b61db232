#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "orbdmrg/operators.hpp"
#include "orbdmrg/oracle.hpp"
#include "support.hpp"

using namespace orbdmrg;
using namespace orbdmrg::testing;

namespace {

double max_diff(const SecondQuantizedOperator& a, const SecondQuantizedOperator& b) {
  double e = (a.t - b.t).cwiseAbs().maxCoeff();
  for (std::size_t k = 0; k < a.v.size(); ++k) e = std::max(e, std::abs(a.v[k] - b.v[k]));
  return std::max(e, std::abs(a.e_core - b.e_core));
}

}  // namespace

TEST(Rotate, IdentityIsBitExact) {
  std::mt19937_64 rng(1);
  auto op = random_operator(3, 2, rng);
  auto r = rotate_coefficients(op, Matrix::Identity(6, 6));
  EXPECT_TRUE(r.t == op.t);
  EXPECT_TRUE(r.v == op.v);
  auto l = rotate_local(op, Matrix::Identity(4, 4), 1);
  EXPECT_TRUE(l.v == op.v);
}

TEST(Rotate, EigenbasisDiagonalisesOneBody) {
  std::mt19937_64 rng(2);
  SecondQuantizedOperator op = zero_operator(4, 1);
  Matrix t = random_matrix(4, 4, rng);
  op.t = 0.5 * (t + t.adjoint());
  Eigen::SelfAdjointEigenSolver<Matrix> es(op.t);
  auto r = rotate_coefficients(op, es.eigenvectors());
  Matrix expect = es.eigenvalues().cast<Complex>().asDiagonal();
  EXPECT_LE((r.t - expect).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Rotate, InverseAndComposition) {
  std::mt19937_64 rng(3);
  auto op = random_operator(2, 2, rng, false);
  Matrix U = random_unitary(4, rng), W = random_unitary(4, rng);
  auto back = rotate_coefficients(rotate_coefficients(op, U), U.adjoint());
  EXPECT_LE(max_diff(back, op), 1e-12);
  auto a = rotate_coefficients(op, U * W);
  auto b = rotate_coefficients(rotate_coefficients(op, U), W);
  EXPECT_LE(max_diff(a, b), 1e-12);
  EXPECT_LE(rotate_coefficients(op, U).hermiticity_error(), 1e-12);
  EXPECT_LE((a.mode_space.accumulated - U * W).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Rotate, LocalFastPathMatchesFullRotation) {
  std::mt19937_64 rng(4);
  auto op = random_operator(4, 2, rng);
  for (int m = 0; m < 3; ++m) {
    Matrix Ul = random_unitary(4, rng);
    auto fast = rotate_local(op, Ul, m);
    auto full = rotate_coefficients(op, embed_local(Ul, m, 4, 2));
    EXPECT_LE(max_diff(fast, full), 1e-12);
    EXPECT_LE((fast.mode_space.accumulated - full.mode_space.accumulated).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Rotate, GroundEnergyInvariant) {
  std::mt19937_64 rng(5);
  auto op = random_operator(3, 2, rng);
  Matrix U = random_species_unitary(3, 2, rng);
  double e0 = exact_ground_state(op, {1, 2}).energy;
  double e1 = exact_ground_state(rotate_coefficients(op, U), {1, 2}).energy;
  EXPECT_NEAR(e0, e1, 1e-10);
  auto gen = random_operator(4, 1, rng, false);
  Matrix V = random_unitary(4, rng);
  EXPECT_NEAR(exact_ground_state(gen, {2}).energy, exact_ground_state(rotate_coefficients(gen, V), {2}).energy, 1e-10);
}

TEST(Rotate, RejectsBadInput) {
  auto op = zero_operator(2, 1);
  EXPECT_THROW(rotate_coefficients(op, Matrix::Identity(3, 3)), PreconditionError);
  EXPECT_THROW(rotate_coefficients(op, 2.0 * Matrix::Identity(2, 2)), PreconditionError);
}

TEST(EmbedLocal, Structure) {
  std::mt19937_64 rng(6);
  Matrix A = random_unitary(4, rng), B = random_unitary(4, rng);
  EXPECT_TRUE(embed_local(Matrix::Identity(4, 4), 1, 4, 2) == Matrix::Identity(8, 8));
  EXPECT_TRUE(embed_local(A, 0, 2, 2) == A);
  EXPECT_LE((embed_local(A, 2, 5, 2) * embed_local(B, 2, 5, 2) - embed_local(A * B, 2, 5, 2)).cwiseAbs().maxCoeff(),
            1e-14);
  EXPECT_THROW(embed_local(A, 1, 2, 2), Error);
  EXPECT_THROW(embed_local(A, -1, 3, 2), Error);
}

TEST(Fcidump, CoreEnergyOnly) {
  std::istringstream in(" &FCI NORB=1,NELEC=2,MS2=0,\n  ORBSYM=1,\n  ISYM=1,\n &END\n  -3.25 0 0 0 0\n");
  auto op = parse_fcidump(in);
  EXPECT_EQ(op.e_core, -3.25);
  EXPECT_EQ(op.t.cwiseAbs().maxCoeff(), 0.0);
  for (auto z : op.v) EXPECT_EQ(z, Complex(0.0));
}

TEST(Fcidump, OneBodyLineFillsBothSpecies) {
  std::istringstream in("&FCI NORB=2,NELEC=2,MS2=0 /\n 0.7 1 1 0 0\n");
  auto op = parse_fcidump(in);
  EXPECT_EQ(op.t(0, 0), Complex(0.7));
  EXPECT_EQ(op.t(1, 1), Complex(0.7));
  op.t(0, 0) = op.t(1, 1) = 0.0;
  EXPECT_EQ(op.t.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Fcidump, TwoOrbitalMatchesHandBuiltOperator) {
  // Chemists' integrals (ij|kl), real orbitals.
  const double h11 = -1.2, h22 = -0.4, h12 = 0.15;
  const double g1111 = 0.7, g2222 = 0.6, g1122 = 0.5, g1212 = 0.12, g1112 = 0.03, g1222 = -0.02;
  std::ostringstream f;
  f.precision(17);
  f << "&FCI NORB=2,NELEC=2,MS2=0,\n ORBSYM=1,1,\n ISYM=1,\n&END\n";
  f << g1111 << " 1 1 1 1\n" << g2222 << " 2 2 2 2\n" << g1122 << " 1 1 2 2\n" << g1212 << " 1 2 1 2\n";
  f << g1112 << " 1 1 1 2\n" << g1222 << " 1 2 2 2\n";
  f << h11 << " 1 1 0 0\n" << h22 << " 2 2 0 0\n" << h12 << " 2 1 0 0\n" << 0.3 << " 0 0 0 0\n";
  std::istringstream in(f.str());
  auto op = parse_fcidump(in, 2, 2);

  // Hand build: H = sum h_ij a_is^dag a_js + 1/2 sum (ij|kl) a_is^dag a_kt^dag a_lt a_js
  auto g = [&](int i, int j, int k, int l) {
    auto key = [](int a, int b) { return std::pair{std::min(a, b), std::max(a, b)}; };
    auto p1 = key(i, j), p2 = key(k, l);
    if (p1 > p2) std::swap(p1, p2);
    if (p1 == std::pair{1, 1} && p2 == std::pair{1, 1}) return g1111;
    if (p1 == std::pair{2, 2} && p2 == std::pair{2, 2}) return g2222;
    if (p1 == std::pair{1, 1} && p2 == std::pair{2, 2}) return g1122;
    if (p1 == std::pair{1, 2} && p2 == std::pair{1, 2}) return g1212;
    if (p1 == std::pair{1, 1} && p2 == std::pair{1, 2}) return g1112;
    if (p1 == std::pair{1, 2} && p2 == std::pair{2, 2}) return g1222;
    return 0.0;
  };
  auto h = [&](int i, int j) { return i == j ? (i == 1 ? h11 : h22) : h12; };
  const int N = 4;
  Matrix H = 0.3 * Matrix::Identity(16, 16);
  auto mode = [](int orb, int s) { return (orb - 1) * 2 + s; };
  for (int i = 1; i <= 2; ++i)
    for (int j = 1; j <= 2; ++j)
      for (int s = 0; s < 2; ++s) H += h(i, j) * string_operator({{mode(i, s), true}, {mode(j, s), false}}, N);
  for (int i = 1; i <= 2; ++i)
    for (int j = 1; j <= 2; ++j)
      for (int k = 1; k <= 2; ++k)
        for (int l = 1; l <= 2; ++l)
          for (int s = 0; s < 2; ++s)
            for (int t = 0; t < 2; ++t)
              H += 0.5 * g(i, j, k, l) *
                   string_operator({{mode(i, s), true}, {mode(k, t), true}, {mode(l, t), false}, {mode(j, s), false}}, N);
  auto F = build_full_hamiltonian(op);
  EXPECT_LE((Matrix(F.H) - H).cwiseAbs().maxCoeff(), 1e-12);
  auto sec = build_full_hamiltonian(op, {1, 1});
  Matrix Hs(sec.dim(), sec.dim());
  for (int a = 0; a < sec.dim(); ++a)
    for (int b = 0; b < sec.dim(); ++b) Hs(a, b) = H(sec.basis[a], sec.basis[b]);
  Eigen::SelfAdjointEigenSolver<Matrix> es(Hs);
  EXPECT_NEAR(exact_ground_state(sec).energy, es.eigenvalues()(0), 1e-12);
}

TEST(Fcidump, Errors) {
  std::istringstream bad("&FCI NORB=2 &END\n 0.5 1 1 0\n");
  try {
    parse_fcidump(bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
  }
  std::istringstream range("&FCI NORB=2 &END\n 0.5 3 1 0 0\n");
  EXPECT_THROW(parse_fcidump(range), ParseError);
  std::istringstream nohead("0.5 1 1 0 0\n");
  EXPECT_THROW(parse_fcidump(nohead), ParseError);
  std::istringstream mismatch("&FCI NORB=2 &END\n 0.5 1 1 0 0\n");
  EXPECT_THROW(parse_fcidump(mismatch, 2, 3), Error);
}

TEST(Hubbard, DimerHoppingEnergies) {
  HubbardParams hp;
  hp.n = 2;
  hp.p = 2;
  hp.t0 = 0.8;
  auto op = build_hubbard(hp);
  auto F = build_full_hamiltonian(op, {1, 0});
  auto ev = exact_low_spectrum(F, 2);
  EXPECT_NEAR(ev[0], -0.8, 1e-12);
  EXPECT_NEAR(ev[1], 0.8, 1e-12);
}

TEST(Hubbard, DimerHalfFillingMatchesClosedForm) {
  HubbardParams hp;
  hp.n = 2;
  hp.t0 = 1.0;
  hp.U0 = 4.0;
  auto op = build_hubbard(hp);
  const double exact = 0.5 * (hp.U0 - std::sqrt(hp.U0 * hp.U0 + 16.0 * hp.t0 * hp.t0));
  EXPECT_NEAR(exact_ground_state(op, {1, 1}).energy, exact, 1e-12);
  EXPECT_LE(op.hermiticity_error(), 1e-15);
}

TEST(Hubbard, InfiniteDecayDisablesTail) {
  HubbardParams hp;
  hp.n = 4;
  hp.U0 = 2.0;
  auto a = build_hubbard(hp);
  SecondQuantizedOperator b = zero_operator(4, 2);
  for (int q = 0; q < 4; ++q) b.V(2 * q, 2 * q + 1, 2 * q, 2 * q + 1) = 2.0;
  EXPECT_TRUE(a.v == b.v);
  hp.gamma = 1.0;
  auto c = build_hubbard(hp);
  EXPECT_NEAR(c.V(0, 2, 0, 2).real(), 2.0 * std::exp(-1.0), 1e-15);
  EXPECT_NEAR(c.V(0, 7, 0, 7).real(), 2.0 * std::exp(-3.0), 1e-15);
}

TEST(Operators, DiagonalElementsMatchFockBuild) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 3; ++trial) {
    auto op = random_operator(2, 2, rng);
    HubbardParams hp;
    hp.n = 4;
    hp.p = 1;
    hp.U0 = 1.3;
    hp.gamma = 0.5;
    for (const auto& o : {op, build_hubbard(hp)}) {
      auto F = build_full_hamiltonian(o);
      const int N = o.modes();
      for (int x = 0; x < (1 << N); ++x) {
        auto occ = [&](int i) { return (x >> (N - 1 - i)) & 1; };
        Complex e = o.e_core;
        for (int i = 0; i < N; ++i) e += o.t(i, i) * double(occ(i));
        for (int i = 0; i < N; ++i)
          for (int j = 0; j < N; ++j)
            if (i != j && occ(i) && occ(j)) e += o.V(i, j, i, j) - o.V(i, j, j, i);
        EXPECT_LE(std::abs(Complex(F.H.coeff(x, x)) - e), 1e-12);
      }
    }
  }
}

TEST(Operators, JsonRoundTrip) {
  std::mt19937_64 rng(8);
  auto op = rotate_coefficients(random_operator(2, 2, rng), random_species_unitary(2, 2, rng));
  auto back = operator_from_json(nlohmann::json::parse(operator_to_json(op).dump()));
  EXPECT_EQ(max_diff(op, back), 0.0);
  EXPECT_TRUE(back.mode_space.accumulated == op.mode_space.accumulated);
}
