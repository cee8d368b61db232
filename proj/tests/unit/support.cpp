#include "support.hpp"

#include <cmath>

#include "orbdmrg/oracle.hpp"

namespace orbdmrg::testing {

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Matrix M(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) M(r, c) = Complex(nd(rng), nd(rng));
  return M;
}

Matrix random_unitary(int n, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Matrix> qr(random_matrix(n, n, rng));
  Matrix Q = qr.householderQ();
  Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int k = 0; k < n; ++k) Q.col(k) *= std::polar(1.0, std::arg(R(k, k)));
  return Q;
}

Matrix random_isometry(int rows, int cols, std::mt19937_64& rng) {
  return random_unitary(rows, rng).leftCols(cols);
}

SecondQuantizedOperator random_operator(int n, int p, std::mt19937_64& rng, bool conserve_species,
                                        double two_body_scale) {
  SecondQuantizedOperator op = zero_operator(n, p);
  const int N = n * p;
  auto sp = [p](int a) { return a % p; };
  Matrix t = random_matrix(N, N, rng);
  t = 0.5 * (t + t.adjoint()).eval();
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b)
      if (conserve_species && sp(a) != sp(b)) t(a, b) = 0.0;
  op.t = t;
  std::normal_distribution<double> nd;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      for (int k = 0; k < N; ++k)
        for (int l = 0; l < N; ++l) {
          if (conserve_species) {
            int a = sp(i), b = sp(j), c = sp(k), d = sp(l);
            if (!((a == c && b == d) || (a == d && b == c))) continue;
          }
          op.V(i, j, k, l) = two_body_scale * Complex(nd(rng), nd(rng));
        }
  std::vector<Complex> v = op.v;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      for (int k = 0; k < N; ++k)
        for (int l = 0; l < N; ++l) op.V(i, j, k, l) = 0.5 * (v[op.index(i, j, k, l)] + std::conj(v[op.index(k, l, i, j)]));
  op.e_core = nd(rng);
  return op;
}

Matrix random_species_unitary(int n, int p, std::mt19937_64& rng) {
  Matrix U = Matrix::Zero(n * p, n * p);
  for (int s = 0; s < p; ++s) {
    Matrix u = random_unitary(n, rng);
    for (int q = 0; q < n; ++q)
      for (int r = 0; r < n; ++r) U(q * p + s, r * p + s) = u(q, r);
  }
  return U;
}

// <psi| O |psi> for a ladder string on the full Fock space.
Complex expectation(const Vector& psi, const std::vector<Ladder>& ops, int modes) {
  Complex r = 0;
  for (std::uint32_t y = 0; y < psi.size(); ++y) {
    if (psi(y) == 0.0) continue;
    std::uint32_t x = y;
    double s = 1.0;
    if (apply_string(ops, modes, x, s)) r += std::conj(psi(x)) * s * psi(y);
  }
  return r;
}

// Fermionic reduced density matrix of a set of sites from the full state.
Matrix dense_rdm(const Vector& psi, int p, const std::vector<int>& sites) {
  const int modes = static_cast<int>(std::log2(psi.size()) + 0.5);
  std::vector<int> sub;
  for (int s : sites)
    for (int k = 0; k < p; ++k) sub.push_back(s * p + k);
  const int m = static_cast<int>(sub.size());
  const int dim = 1 << m;
  Matrix rho(dim, dim);
  for (int x = 0; x < dim; ++x)
    for (int y = 0; y < dim; ++y) {
      // rho[x, y] = <psi| |y><x| |psi>, |y><x| = cdag(y) prod_i (c_i cdag_i) c(x).
      std::vector<Ladder> ops;
      for (int k = 0; k < m; ++k)
        if (y >> (m - 1 - k) & 1) ops.push_back({sub[k], true});
      for (int k = 0; k < m; ++k) {
        ops.push_back({sub[k], false});
        ops.push_back({sub[k], true});
      }
      for (int k = m - 1; k >= 0; --k)
        if (x >> (m - 1 - k) & 1) ops.push_back({sub[k], false});
      rho(x, y) = expectation(psi, ops, modes);
    }
  return rho;
}

SymmetricMPS bell_pair() {
  auto psi = random_mps(2, 1, Symmetry::per_species, target_charge({1}, Symmetry::per_species), 4, 3);
  canonicalize(psi, 0);
  auto theta = block_two_site(psi, 0);
  Matrix M = Matrix::Zero(2, 2);
  M(1, 0) = M(0, 1) = 1.0 / std::sqrt(2.0);
  theta.from_natural(M);
  store_two_site(psi, 0, decompose_two_site(theta, {}, true), true);
  return psi;
}

}  // namespace orbdmrg::testing
