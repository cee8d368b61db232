#include "orbdmrg/fock.hpp"

#include <algorithm>
#include <bit>
#include <numeric>

namespace orbdmrg {

double unitarity_error(const Matrix& U) {
  if (U.rows() != U.cols()) return std::numeric_limits<double>::infinity();
  Matrix e = U.adjoint() * U - Matrix::Identity(U.rows(), U.cols());
  return e.cwiseAbs().maxCoeff();
}

void require_unitary(const Matrix& U, double tol, const char* what) {
  if (U.rows() != U.cols())
    throw PreconditionError(std::string(what) + ": matrix is not square");
  double e = U.rows() ? unitarity_error(U) : 0.0;
  if (!(e <= tol))
    throw PreconditionError(std::string(what) + ": matrix is not unitary (error " +
                            std::to_string(e) + ")");
}

ModeSpace ModeSpace::identity(int n, int p) {
  if (n < 1 || p < 1) throw Error("ModeSpace: n and p must be positive");
  ModeSpace m;
  m.n = n;
  m.p = p;
  m.mode_order.resize(n * p);
  std::iota(m.mode_order.begin(), m.mode_order.end(), 0);
  m.accumulated = Matrix::Identity(n * p, n * p);
  return m;
}

void ModeSpace::validate() const {
  const int N = modes();
  if (static_cast<int>(mode_order.size()) != N) throw Error("ModeSpace: mode_order size");
  std::vector<int> seen(N, 0);
  for (int x : mode_order) {
    if (x < 0 || x >= N || seen[x]++) throw Error("ModeSpace: mode_order is not a bijection");
  }
  if (accumulated.rows() != N || accumulated.cols() != N)
    throw Error("ModeSpace: accumulated unitary has wrong shape");
  if (unitarity_error(accumulated) > 1e-10) throw Error("ModeSpace: accumulated is not unitary");
}

Matrix fock_annihilator(int modes, int k) {
  const int dim = 1 << modes;
  Matrix c = Matrix::Zero(dim, dim);
  const int bit = modes - 1 - k;
  for (int x = 0; x < dim; ++x) {
    if (!(x >> bit & 1)) continue;
    int before = std::popcount(static_cast<unsigned>(x) >> (bit + 1));
    c(x ^ (1 << bit), x) = (before & 1) ? -1.0 : 1.0;
  }
  return c;
}

SiteOperators site_operators(int p) {
  if (p < 1) throw PreconditionError("site_operators: p must be >= 1");
  SiteOperators s;
  s.p = p;
  s.d = 1 << p;
  s.identity = Matrix::Identity(s.d, s.d);
  s.parity = Matrix::Zero(s.d, s.d);
  for (int x = 0; x < s.d; ++x) s.parity(x, x) = (std::popcount(static_cast<unsigned>(x)) & 1) ? -1.0 : 1.0;
  for (int k = 0; k < p; ++k) {
    s.c.push_back(fock_annihilator(p, k));
    s.cdag.push_back(s.c.back().adjoint());
    s.n.push_back(s.cdag.back() * s.c.back());
  }
  return s;
}

std::vector<int> occupied_modes(unsigned x, int modes) {
  std::vector<int> out;
  for (int k = 0; k < modes; ++k)
    if (x >> (modes - 1 - k) & 1) out.push_back(k);
  return out;
}

namespace {

Complex minor_det(const Matrix& M, const std::vector<int>& rows, const std::vector<int>& cols) {
  const int k = static_cast<int>(rows.size());
  if (k == 0) return 1.0;
  Matrix sub(k, k);
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < k; ++c) sub(r, c) = M(rows[r], cols[c]);
  return sub.determinant();
}

}  // namespace

Matrix exterior_algebra(const Matrix& M) {
  const int a = static_cast<int>(M.rows());
  if (M.cols() != a) throw PreconditionError("exterior_algebra: matrix is not square");
  if (a > 12) throw PreconditionError("exterior_algebra: too many modes");
  const int dim = 1 << a;
  std::vector<std::vector<int>> occ(dim);
  for (int x = 0; x < dim; ++x) occ[x] = occupied_modes(static_cast<unsigned>(x), a);
  Matrix g = Matrix::Zero(dim, dim);
  for (int x = 0; x < dim; ++x)
    for (int y = 0; y < dim; ++y)
      if (occ[x].size() == occ[y].size()) g(x, y) = minor_det(M, occ[x], occ[y]);
  return g;
}

Matrix gaussian_unitary(const Matrix& U) {
  require_unitary(U, 1e-10, "gaussian_unitary");
  return exterior_algebra(U.adjoint());
}

Complex gaussian_minor(const Matrix& U, std::vector<int> I, std::vector<int> J, int i, int j) {
  const int a = static_cast<int>(U.rows());
  auto in_range = [a](int x) { return x >= 0 && x < a; };
  if (U.cols() != a || !in_range(i) || !in_range(j) || !std::all_of(I.begin(), I.end(), in_range) ||
      !std::all_of(J.begin(), J.end(), in_range))
    throw Error("gaussian_minor: index out of range");
  std::sort(I.begin(), I.end());
  std::sort(J.begin(), J.end());
  auto pi = std::find(I.begin(), I.end(), i);
  auto pj = std::find(J.begin(), J.end(), j);
  if (I.size() != J.size() || pi == I.end() || pj == J.end()) return 0.0;
  const int sign = ((pi - I.begin()) + (pj - J.begin())) & 1 ? -1 : 1;
  I.erase(pi);
  J.erase(pj);
  Matrix Ud = U.adjoint();
  return static_cast<double>(sign) * minor_det(Ud, I, J);
}

}  // namespace orbdmrg
