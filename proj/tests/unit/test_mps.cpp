#include <gtest/gtest.h>

#include <cmath>

#include "orbdmrg/fock.hpp"
#include "orbdmrg/mps.hpp"
#include "orbdmrg/oracle.hpp"
#include "support.hpp"

using namespace orbdmrg;
using namespace orbdmrg::testing;

namespace {

Charge per_species(std::vector<int> n) { return target_charge(n, Symmetry::per_species); }

double max_diff(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().maxCoeff(); }

void expect_left_normalised(const SiteTensor& A) {
  const Space& R = *A.right;
  for (int j = 0; j < R.sectors(); ++j) {
    Matrix G = Matrix::Zero(R.dim(j), R.dim(j));
    for (int i = 0; i < A.left->sectors(); ++i)
      for (int a = 0; a < A.d(); ++a)
        if (A.right_sector(i, a) == j) G += A.block(i, a).adjoint() * A.block(i, a);
    EXPECT_LE((G - Matrix::Identity(R.dim(j), R.dim(j))).cwiseAbs().maxCoeff(), 1e-10);
  }
}

void expect_right_normalised(const SiteTensor& A) {
  const Space& L = *A.left;
  for (int i = 0; i < L.sectors(); ++i) {
    Matrix G = Matrix::Zero(L.dim(i), L.dim(i));
    for (int a = 0; a < A.d(); ++a)
      if (A.right_sector(i, a) >= 0) G += A.block(i, a) * A.block(i, a).adjoint();
    EXPECT_LE((G - Matrix::Identity(L.dim(i), L.dim(i))).cwiseAbs().maxCoeff(), 1e-10);
  }
}

std::vector<double> dense_schmidt(const Vector& psi, int n, int d, int m) {
  long rows = 1;
  for (int k = 0; k <= m; ++k) rows *= d;
  long cols = psi.size() / rows;
  // Row-major reshape: index = row * cols + col.
  Matrix M(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) M(r, c) = psi(r * cols + c);
  Eigen::JacobiSVD<Matrix> svd(M);
  std::vector<double> s;
  for (int k = 0; k < svd.singularValues().size(); ++k)
    if (svd.singularValues()(k) > 1e-12) s.push_back(svd.singularValues()(k));
  (void)n;
  return s;
}

std::vector<double> nonzero(const SchmidtSpectrum& s) {
  std::vector<double> out;
  for (double x : s.sigma)
    if (x > 1e-12) out.push_back(x);
  return out;
}

}  // namespace

TEST(Mps, ProductStateBasics) {
  auto psi = product_mps(4, 2, Symmetry::per_species, {3, 0, 2, 1});
  EXPECT_EQ(psi.target, per_species({2, 2}));
  Vector v = dense_embedding(psi);
  std::uint32_t x = 0b11001001;
  EXPECT_NEAR(std::abs(v(x)), 1.0, 1e-15);
  EXPECT_NEAR(v.norm(), 1.0, 1e-15);
  for (int m = 0; m < 3; ++m) {
    auto s = schmidt_spectrum(psi, m);
    ASSERT_EQ(s.sigma.size(), 1u);
    EXPECT_NEAR(s.sigma[0], 1.0, 1e-14);
  }
  EXPECT_LE(mutual_information(psi).cwiseAbs().maxCoeff(), 1e-12);
  canonicalize(psi, 1);
  auto theta = block_two_site(psi, 1);
  auto dec = decompose_two_site(theta, {}, true);
  EXPECT_EQ(dec.kept, 1);
  EXPECT_EQ(dec.eps, 0.0);
}

TEST(Mps, CanonicalizePreservesDenseEmbedding) {
  for (int p : {1, 2}) {
    Charge q = p == 1 ? per_species({2}) : per_species({2, 1});
    auto psi = random_mps(4, p, Symmetry::per_species, q, 3, 7 + p);
    EXPECT_NEAR(norm(psi), 1.0, 1e-12);
    Vector ref = dense_embedding(psi);
    EXPECT_NEAR(ref.norm(), 1.0, 1e-12);
    for (int m : {3, 1, 0, 2}) {
      canonicalize(psi, m);
      EXPECT_EQ(psi.center, m);
      EXPECT_LE(max_diff(dense_embedding(psi), ref), 1e-10);
      for (int k = 0; k < m; ++k) expect_left_normalised(psi.sites[k]);
      for (int k = m + 1; k < 4; ++k) expect_right_normalised(psi.sites[k]);
    }
  }
}

TEST(Mps, RandomStateStaysInTargetSector) {
  auto psi = random_mps(3, 2, Symmetry::per_species, per_species({2, 1}), 4, 11);
  Vector v = dense_embedding(psi);
  for (std::uint32_t x = 0; x < v.size(); ++x)
    if (std::abs(v(x)) > 1e-14) {
      EXPECT_EQ(std::popcount(x & 0b101010u), 2);
      EXPECT_EQ(std::popcount(x & 0b010101u), 1);
    }
  EXPECT_THROW(random_mps(2, 1, Symmetry::per_species, per_species({3}), 4, 1), PreconditionError);
}

TEST(Mps, BlockTwoSiteIsReshapedStateForTwoSites) {
  auto psi = random_mps(2, 2, Symmetry::per_species, per_species({1, 1}), 4, 5);
  Vector v = dense_embedding(psi);
  auto theta = block_two_site(psi, 0);
  Matrix M = theta.natural();
  ASSERT_EQ(M.rows(), 4);
  ASSERT_EQ(M.cols(), 4);
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) EXPECT_NEAR(std::abs(M(a, b) - v(a * 4 + b)), 0.0, 1e-12);
  EXPECT_NEAR(theta.norm(), 1.0, 1e-12);
  psi.center = -1;
  EXPECT_THROW(block_two_site(psi, 0), PreconditionError);
}

TEST(Mps, DecomposeWithoutTruncationReproducesState) {
  auto psi = random_mps(4, 2, Symmetry::per_species, per_species({2, 2}), 6, 21);
  Vector ref = dense_embedding(psi);
  for (int m = 0; m < 3; ++m) {
    canonicalize(psi, m);
    auto theta = block_two_site(psi, m);
    TruncationPolicy exact;
    exact.renormalize = false;
    auto dec = decompose_two_site(theta, exact, m % 2 == 0);
    EXPECT_LE(dec.eps, 1e-24);
    bool right = m % 2 == 0;
    store_two_site(psi, m, dec, right);
    EXPECT_LE(max_diff(dense_embedding(psi), ref), 1e-10);
    if (right)
      expect_left_normalised(psi.sites[m]);
    else
      expect_right_normalised(psi.sites[m + 1]);
    EXPECT_NEAR(psi.spectra[m].weight(), 1.0, 1e-10);
  }
}

TEST(Mps, TruncationReconstructionErrorEqualsDiscardedWeight) {
  auto psi = random_mps(4, 2, Symmetry::per_species, per_species({2, 2}), 8, 31);
  canonicalize(psi, 1);
  auto theta = block_two_site(psi, 1);
  TruncationPolicy pol;
  pol.D_max = 5;
  pol.renormalize = false;
  auto dec = decompose_two_site(theta, pol, true);
  EXPECT_GT(dec.eps, 1e-6);
  store_two_site(psi, 1, dec, true);
  auto approx = block_two_site(psi, 1);
  double err = (approx.natural() - theta.natural()).squaredNorm();
  EXPECT_NEAR(err, dec.eps, 1e-10);
  EXPECT_LE(psi.bond_dim(2), 5);
}

TEST(Mps, KeptRankArithmetic) {
  SchmidtSpectrum s;
  s.sigma = {std::sqrt(0.5), std::sqrt(0.3), std::sqrt(0.2)};
  s.sector.assign(3, Charge{});
  TruncationPolicy pol;
  pol.D_max = 2;
  int D = kept_rank(s, pol);
  EXPECT_EQ(D, 2);
  EXPECT_NEAR(discarded_weight(s, D), 0.2, 1e-14);
  pol.D_max = 10;
  pol.eps = 0.25;
  EXPECT_EQ(kept_rank(s, pol), 2);
  pol.eps = 0.5;
  EXPECT_EQ(kept_rank(s, pol), 1);
  pol.D_min = 3;
  EXPECT_EQ(kept_rank(s, pol), 3);
  // D_min never pads with zero singular values.
  s.sigma = {1.0, 0.0, 0.0};
  EXPECT_EQ(kept_rank(s, pol), 1);
}

TEST(Mps, DegenerateMultipletsAreKeptWhole) {
  SchmidtSpectrum s;
  s.sigma = {0.6, 0.5, 0.5, 0.3};
  s.sector.assign(4, Charge{});
  TruncationPolicy pol;
  pol.D_max = 3;
  pol.eps = 0.1;
  EXPECT_EQ(kept_rank(s, pol), 3);
  pol.eps = 0.5;
  EXPECT_EQ(kept_rank(s, pol), 3);
  pol.D_max = 2;
  EXPECT_EQ(kept_rank(s, pol), 2);
}

TEST(Mps, SchmidtSpectrumMatchesDenseSvd) {
  for (int p : {1, 2}) {
    Charge q = p == 1 ? per_species({2}) : per_species({2, 2});
    auto psi = random_mps(4, p, Symmetry::per_species, q, 4, 40 + p);
    Vector v = dense_embedding(psi);
    for (int m = 0; m < 3; ++m) {
      auto ref = dense_schmidt(v, 4, psi.d(), m);
      auto got = nonzero(schmidt_spectrum(psi, m));
      ASSERT_EQ(got.size(), ref.size());
      std::sort(ref.rbegin(), ref.rend());
      for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(got[k], ref[k], 1e-10);
    }
  }
}

TEST(Mps, BellPair) {
  auto psi = bell_pair();
  auto s = schmidt_spectrum(psi, 0);
  ASSERT_EQ(s.sigma.size(), 2u);
  EXPECT_NEAR(s.sigma[0], 1 / std::sqrt(2.0), 1e-14);
  EXPECT_NEAR(s.sigma[1], 1 / std::sqrt(2.0), 1e-14);
  auto I = mutual_information(psi);
  EXPECT_NEAR(I(0, 1), 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(I(1, 0), 2 * std::log(2.0), 1e-12);
  EXPECT_EQ(I(0, 0), 0.0);
}

TEST(Mps, ReducedDensityMatricesMatchDenseFermionicTrace) {
  for (int p : {1, 2}) {
    Charge q = p == 1 ? per_species({2}) : per_species({2, 2});
    auto psi = random_mps(4, p, Symmetry::per_species, q, 4, 50 + p);
    Vector v = dense_embedding(psi);
    for (int s = 0; s < 4; ++s)
      EXPECT_LE((one_site_rdm(psi, s) - dense_rdm(v, p, {s})).cwiseAbs().maxCoeff(), 1e-10);
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b)
        EXPECT_LE((two_site_rdm(psi, a, b) - dense_rdm(v, p, {a, b})).cwiseAbs().maxCoeff(), 1e-10)
            << "p=" << p << " sites " << a << "," << b;
  }
}

TEST(Mps, MutualInformationMatchesDenseOracle) {
  for (int p : {1, 2}) {
    Charge q = p == 1 ? per_species({2}) : per_species({2, 2});
    auto psi = random_mps(4, p, Symmetry::per_species, q, 4, 60 + p);
    Vector v = dense_embedding(psi);
    auto I = mutual_information(psi);
    for (int a = 0; a < 4; ++a) {
      EXPECT_EQ(I(a, a), 0.0);
      for (int b = a + 1; b < 4; ++b) {
        double ref = von_neumann_entropy(dense_rdm(v, p, {a})) + von_neumann_entropy(dense_rdm(v, p, {b})) -
                     von_neumann_entropy(dense_rdm(v, p, {a, b}));
        EXPECT_NEAR(I(a, b), ref, 1e-8);
        EXPECT_EQ(I(a, b), I(b, a));
        EXPECT_GE(I(a, b), -1e-10);
      }
    }
  }
}

TEST(Mps, IdentityGateLeavesStateUnchanged) {
  auto psi = random_mps(4, 1, Symmetry::per_species, per_species({2}), 4, 70);
  Vector ref = dense_embedding(psi);
  auto before = schmidt_spectrum(psi, 0);
  double eps = apply_two_site_gate(psi, 1, Matrix::Identity(4, 4), {});
  EXPECT_LE(eps, 1e-24);
  EXPECT_LE(max_diff(dense_embedding(psi), ref), 1e-10);
  auto after = schmidt_spectrum(psi, 0);
  for (std::size_t k = 0; k < before.sigma.size(); ++k) EXPECT_NEAR(before.sigma[k], after.sigma[k], 1e-12);
}

TEST(Mps, SwapGateIsAnInvolution) {
  const int p = 2;
  Matrix P = Matrix::Zero(2 * p, 2 * p);
  for (int k = 0; k < p; ++k) P(k, p + k) = P(p + k, k) = 1.0;
  Matrix G = gaussian_unitary(P);
  auto psi = random_mps(4, p, Symmetry::per_species, per_species({2, 2}), 8, 71);
  Vector ref = dense_embedding(psi);
  apply_two_site_gate(psi, 1, G, {});
  EXPECT_GT(max_diff(dense_embedding(psi), ref), 1e-3);
  apply_two_site_gate(psi, 1, G, {});
  EXPECT_LE(max_diff(dense_embedding(psi), ref), 1e-10);
}

TEST(Mps, GateMatchesDenseSpectrumAndPreservesOtherCuts) {
  std::mt19937_64 rng(72);
  const int p = 2;
  Matrix G = gaussian_unitary(random_species_unitary(2, p, rng));
  auto psi = random_mps(4, p, Symmetry::per_species, per_species({2, 2}), 8, 73);
  canonicalize(psi, 1);
  Matrix dense = block_two_site(psi, 1).natural();
  const int d = psi.d();
  const int Dl = psi.bond_dim(1), Dr = psi.bond_dim(3);
  Matrix out = Matrix::Zero(Dl * d, d * Dr);
  for (int a = 0; a < Dl; ++a)
    for (int b = 0; b < Dr; ++b)
      for (int x = 0; x < d * d; ++x)
        for (int y = 0; y < d * d; ++y)
          out(a * d + x / d, (x % d) * Dr + b) += G(x, y) * dense(a * d + y / d, (y % d) * Dr + b);
  Eigen::JacobiSVD<Matrix> svd(out);
  auto s0 = schmidt_spectrum(psi, 0), s2 = schmidt_spectrum(psi, 2);
  apply_two_site_gate(psi, 1, G, {});
  auto got = nonzero(schmidt_spectrum(psi, 1));
  for (std::size_t k = 0; k < got.size(); ++k) EXPECT_NEAR(got[k], svd.singularValues()(k), 1e-10);
  EXPECT_NEAR(norm(psi), 1.0, 1e-12);
  auto t0 = schmidt_spectrum(psi, 0), t2 = schmidt_spectrum(psi, 2);
  for (std::size_t k = 0; k < s0.sigma.size(); ++k) EXPECT_NEAR(s0.sigma[k], t0.sigma[k], 1e-10);
  for (std::size_t k = 0; k < s2.sigma.size(); ++k) EXPECT_NEAR(s2.sigma[k], t2.sigma[k], 1e-10);
}

TEST(Mps, ChargeViolatingGateIsRejected) {
  auto psi = random_mps(2, 1, Symmetry::per_species, per_species({1}), 2, 74);
  Matrix G = Matrix::Identity(4, 4);
  G(0, 1) = 0.1;
  EXPECT_THROW(apply_two_site_gate(psi, 0, G, {}), PreconditionError);
}

TEST(Mps, OnSiteRotationsLeaveCutSpectrumInvariant) {
  std::mt19937_64 rng(75);
  const int p = 2;
  auto psi = random_mps(4, p, Symmetry::per_species, per_species({2, 2}), 8, 76);
  auto before = nonzero(schmidt_spectrum(psi, 1));
  Matrix W = Matrix::Zero(2 * p, 2 * p);
  Matrix u0 = random_species_unitary(1, p, rng), u1 = random_species_unitary(1, p, rng);
  W.topLeftCorner(p, p) = u0;
  W.bottomRightCorner(p, p) = u1;
  apply_two_site_gate(psi, 1, gaussian_unitary(W), {});
  auto after = nonzero(schmidt_spectrum(psi, 1));
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_NEAR(before[k], after[k], 1e-10);
}

TEST(Mps, GaugeInsertionLeavesObservablesUnchanged) {
  std::mt19937_64 rng(77);
  auto psi = random_mps(4, 1, Symmetry::per_species, per_species({2}), 4, 78);
  Vector ref = dense_embedding(psi);
  auto I = mutual_information(psi);
  // Insert G G^-1 per sector on bond 2.
  const Space& B = *psi.sites[1].right;
  for (int j = 0; j < B.sectors(); ++j) {
    Matrix G = random_matrix(B.dim(j), B.dim(j), rng) + 3.0 * Matrix::Identity(B.dim(j), B.dim(j));
    Matrix Gi = G.inverse();
    for (int i = 0; i < psi.sites[1].left->sectors(); ++i)
      for (int a = 0; a < 2; ++a)
        if (psi.sites[1].right_sector(i, a) == j) psi.sites[1].block(i, a) *= G;
    for (int a = 0; a < 2; ++a)
      if (psi.sites[2].right_sector(j, a) >= 0) psi.sites[2].block(j, a) = Gi * psi.sites[2].block(j, a);
  }
  psi.center = -1;
  EXPECT_LE(max_diff(dense_embedding(psi), ref), 1e-10);
  EXPECT_LE((mutual_information(psi) - I).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Mps, JsonRoundTrip) {
  auto psi = random_mps(3, 2, Symmetry::per_species, per_species({1, 2}), 3, 80);
  auto back = mps_from_json(nlohmann::json::parse(mps_to_json(psi).dump()));
  EXPECT_EQ(back.center, psi.center);
  EXPECT_EQ(back.target, psi.target);
  EXPECT_LE(max_diff(dense_embedding(back), dense_embedding(psi)), 0.0);
  EXPECT_THROW(mps_from_json(nlohmann::json{{"format", "other"}}), ParseError);
}
