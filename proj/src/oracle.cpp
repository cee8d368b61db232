#include "orbdmrg/oracle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <unordered_map>

#include <unsupported/Eigen/MatrixFunctions>

namespace orbdmrg {

namespace {

int bit_of(int mode, int modes) { return modes - 1 - mode; }

bool apply_ladder(const Ladder& op, int modes, std::uint32_t& x, double& sign) {
  const int b = bit_of(op.mode, modes);
  const bool occ = x >> b & 1u;
  if (occ == op.dagger) return false;
  if (std::popcount(x >> (b + 1)) & 1) sign = -sign;
  x ^= 1u << b;
  return true;
}

bool in_sector(std::uint32_t x, int n, int p, const SectorCounts& counts) {
  if (counts.empty()) return true;
  const int N = n * p;
  if (counts.size() == 1 && p > 1) return std::popcount(x) == counts[0];
  for (int s = 0; s < p; ++s) {
    int c = 0;
    for (int q = 0; q < n; ++q) c += x >> bit_of(q * p + s, N) & 1u;
    if (c != counts[s]) return false;
  }
  return true;
}

}  // namespace

bool apply_string(const std::vector<Ladder>& ops, int modes, std::uint32_t& x, double& sign) {
  for (auto it = ops.rbegin(); it != ops.rend(); ++it)
    if (!apply_ladder(*it, modes, x, sign)) return false;
  return true;
}

Matrix string_operator(const std::vector<Ladder>& ops, int modes) {
  const int dim = 1 << modes;
  Matrix M = Matrix::Zero(dim, dim);
  for (int y = 0; y < dim; ++y) {
    std::uint32_t x = y;
    double s = 1.0;
    if (apply_string(ops, modes, x, s)) M(x, y) += s;
  }
  return M;
}

int FockSpaceOperator::locate(std::uint32_t x) const {
  auto it = std::lower_bound(basis.begin(), basis.end(), x);
  if (it == basis.end() || *it != x) return -1;
  return static_cast<int>(it - basis.begin());
}

Vector FockSpaceOperator::embed(const Vector& v) const {
  Vector full = Vector::Zero(Eigen::Index(1) << (n * p));
  for (int k = 0; k < dim(); ++k) full(basis[k]) = v(k);
  return full;
}

Vector FockSpaceOperator::restrict(const Vector& full) const {
  Vector v(dim());
  for (int k = 0; k < dim(); ++k) v(k) = full(basis[k]);
  return v;
}

std::vector<std::uint32_t> sector_basis(int n, int p, const SectorCounts& counts) {
  const int N = n * p;
  if (counts.size() > 1 && static_cast<int>(counts.size()) != p)
    throw PreconditionError("sector must list one count per species or a single total");
  std::vector<std::uint32_t> out;
  for (std::uint64_t x = 0; x < (std::uint64_t(1) << N); ++x)
    if (in_sector(static_cast<std::uint32_t>(x), n, p, counts)) out.push_back(static_cast<std::uint32_t>(x));
  return out;
}

FockSpaceOperator build_full_hamiltonian(const SecondQuantizedOperator& op, const SectorCounts& sector) {
  const int N = op.modes();
  if (N > 16) throw PreconditionError("build_full_hamiltonian: more than 16 modes");
  FockSpaceOperator F;
  F.n = op.n();
  F.p = op.p();
  F.sector = sector;
  F.basis = sector_basis(F.n, F.p, sector);
  struct Term {
    std::vector<Ladder> ops;
    Complex c;
  };
  std::vector<Term> terms;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      if (op.t(i, j) != 0.0) terms.push_back({{{i, true}, {j, false}}, op.t(i, j)});
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      for (int k = 0; k < N; ++k)
        for (int l = 0; l < N; ++l) {
          Complex c = op.V(i, j, k, l);
          if (c != 0.0 && i != j && k != l) terms.push_back({{{i, true}, {j, true}, {l, false}, {k, false}}, c});
        }
  std::vector<Eigen::Triplet<Complex>> trip;
  for (int col = 0; col < F.dim(); ++col) {
    if (op.e_core != 0.0) trip.emplace_back(col, col, op.e_core);
    for (const Term& t : terms) {
      std::uint32_t x = F.basis[col];
      double s = 1.0;
      if (!apply_string(t.ops, N, x, s)) continue;
      int row = F.locate(x);
      if (row < 0) throw Error("build_full_hamiltonian: operator leaves the sector");
      trip.emplace_back(row, col, s * t.c);
    }
  }
  F.H.resize(F.dim(), F.dim());
  F.H.setFromTriplets(trip.begin(), trip.end());
  return F;
}

namespace {

GroundState lanczos_ground_state(const SparseMatrix& H) {
  const int dim = static_cast<int>(H.rows());
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> nd;
  Vector x(dim);
  for (int k = 0; k < dim; ++k) x(k) = Complex(nd(rng), nd(rng));
  x.normalize();
  GroundState best;
  const int kmax = std::min(dim, 200);
  for (int restart = 0; restart < 200; ++restart) {
    std::vector<Vector> V{x};
    std::vector<double> alpha, beta;
    for (int k = 0; k < kmax; ++k) {
      Vector w = H * V[k];
      for (int pass = 0; pass < 2; ++pass)
        for (const Vector& u : V) w -= u * u.dot(w);
      alpha.push_back((V[k].dot(H * V[k])).real());
      double b = w.norm();
      if (b < 1e-13 || k + 1 == kmax) break;
      beta.push_back(b);
      V.push_back(w / b);
    }
    const int m = static_cast<int>(V.size());
    RealMatrix T = RealMatrix::Zero(m, m);
    for (int k = 0; k < m; ++k) {
      T(k, k) = alpha[k];
      if (k + 1 < m) T(k, k + 1) = T(k + 1, k) = beta[k];
    }
    Eigen::SelfAdjointEigenSolver<RealMatrix> es(T);
    Vector y = Vector::Zero(dim);
    for (int k = 0; k < m; ++k) y += V[k] * es.eigenvectors()(k, 0);
    y.normalize();
    Vector Hy = H * y;
    double theta = y.dot(Hy).real();
    double res = (Hy - theta * y).norm();
    best.energy = theta;
    best.vector = y;
    best.residual = res;
    if (res <= 1e-10 * std::max(1.0, std::abs(theta))) return best;
    x = y;
  }
  throw Error("exact_ground_state: Lanczos did not converge");
}

}  // namespace

GroundState exact_ground_state(const FockSpaceOperator& F, bool iterative) {
  if (F.dim() == 0) throw PreconditionError("exact_ground_state: empty sector");
  if (F.dim() > 1000000) throw PreconditionError("exact_ground_state: sector too large");
  GroundState g;
  if (!iterative && F.dim() <= 2500) {
    Matrix D = Matrix(F.H);
    Eigen::SelfAdjointEigenSolver<Matrix> es(D);
    g.energy = es.eigenvalues()(0);
    g.vector = es.eigenvectors().col(0);
    g.residual = (D * g.vector - g.energy * g.vector).norm();
    if (g.residual > 1e-10 * std::max(1.0, std::abs(g.energy))) {
      // Polish with a Rayleigh step through the sparse solver.
      g = lanczos_ground_state(F.H);
    }
    return g;
  }
  return lanczos_ground_state(F.H);
}

GroundState exact_ground_state(const SecondQuantizedOperator& op, const SectorCounts& sector) {
  return exact_ground_state(build_full_hamiltonian(op, sector));
}

std::vector<double> exact_low_spectrum(const FockSpaceOperator& F, int k) {
  if (F.dim() > 6000) throw PreconditionError("exact_low_spectrum: sector too large");
  Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(F.H), Eigen::EigenvaluesOnly);
  std::vector<double> out;
  for (int i = 0; i < std::min<int>(k, F.dim()); ++i) out.push_back(es.eigenvalues()(i));
  return out;
}

Matrix gaussian_unitary_by_exponential(const Matrix& U) {
  require_unitary(U, 1e-10, "gaussian_unitary_by_exponential");
  const int a = static_cast<int>(U.rows());
  Matrix L = Matrix(U.adjoint()).log();
  const int dim = 1 << a;
  Matrix G = Matrix::Zero(dim, dim);
  for (int i = 0; i < a; ++i)
    for (int j = 0; j < a; ++j)
      if (L(i, j) != 0.0) G += L(i, j) * string_operator({{i, true}, {j, false}}, a);
  return G.exp();
}

double determinant_energy(const SecondQuantizedOperator& op, const Matrix& g) {
  const int N = op.modes();
  Complex e = op.e_core;
  for (int i = 0; i < N; ++i)
    for (int k = 0; k < N; ++k) e += op.t(i, k) * g(i, k);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      for (int k = 0; k < N; ++k)
        for (int l = 0; l < N; ++l) {
          const Complex v = op.V(i, j, k, l);
          if (v != 0.0) e += v * (g(i, k) * g(j, l) - g(i, l) * g(j, k));
        }
  return e.real();
}

namespace {

Matrix fock_matrix(const SecondQuantizedOperator& op, const Matrix& g) {
  const int N = op.modes();
  Matrix F = op.t;
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) {
      Complex s = 0.0;
      for (int x = 0; x < N; ++x)
        for (int y = 0; y < N; ++y) {
          const Complex gxy = g(x, y);
          if (gxy == 0.0) continue;
          s += (op.V(a, x, b, y) + op.V(x, a, y, b) - op.V(a, x, y, b) - op.V(x, a, b, y)) * gxy;
        }
      F(a, b) += s;
    }
  return F;
}

Matrix spatial_average(const Matrix& F, int n, int p) {
  Matrix S = Matrix::Zero(n, n);
  for (int q = 0; q < n; ++q)
    for (int r = 0; r < n; ++r)
      for (int s = 0; s < p; ++s) S(q, r) += F(q * p + s, r * p + s) / double(p);
  return Matrix(0.5 * (S + S.adjoint()));
}

Matrix spin_orbital_density(const Matrix& C, int occupied, int n, int p) {
  Matrix g = Matrix::Zero(n * p, n * p);
  Matrix Cocc = C.leftCols(occupied);
  Matrix gs = Cocc.conjugate() * Cocc.transpose();
  for (int q = 0; q < n; ++q)
    for (int r = 0; r < n; ++r)
      for (int s = 0; s < p; ++s) g(q * p + s, r * p + s) = gs(q, r);
  return g;
}

Matrix spread(const Matrix& u, int p) {
  const int n = static_cast<int>(u.rows());
  Matrix U = Matrix::Zero(n * p, n * p);
  for (int q = 0; q < n; ++q)
    for (int k = 0; k < n; ++k)
      for (int s = 0; s < p; ++s) U(q * p + s, k * p + s) = u(q, k);
  return U;
}

}  // namespace

HartreeFockResult hartree_fock_basis(const SecondQuantizedOperator& op, int occupied,
                                     const HartreeFockOptions& opt) {
  const int n = op.n(), p = op.p();
  if (occupied < 0 || occupied > n) throw PreconditionError("hartree_fock_basis: occupation out of range");
  HartreeFockResult res;
  Matrix Fsp = spatial_average(op.t, n, p);
  Eigen::SelfAdjointEigenSolver<Matrix> es(Fsp);
  Matrix C = es.eigenvectors();
  Matrix g = spin_orbital_density(C, occupied, n, p);
  std::vector<Matrix> focks, errors;
  for (int it = 1; it <= opt.max_iterations; ++it) {
    Fsp = spatial_average(fock_matrix(op, g), n, p);
    Matrix Pi = C.leftCols(occupied) * C.leftCols(occupied).adjoint();
    Matrix err = Fsp * Pi - Pi * Fsp;
    focks.push_back(Fsp);
    errors.push_back(err);
    if (static_cast<int>(focks.size()) > opt.diis_size) {
      focks.erase(focks.begin());
      errors.erase(errors.begin());
    }
    Matrix Fx = Fsp;
    const int m = static_cast<int>(focks.size());
    if (m >= 2) {
      Matrix B = Matrix::Constant(m + 1, m + 1, -1.0);
      B(m, m) = 0.0;
      for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) B(a, b) = (errors[a].adjoint() * errors[b]).trace();
      Vector rhs = Vector::Zero(m + 1);
      rhs(m) = -1.0;
      Vector c = B.colPivHouseholderQr().solve(rhs);
      if (c.allFinite()) {
        Fx = Matrix::Zero(n, n);
        for (int a = 0; a < m; ++a) Fx += c(a) * focks[a];
        Fx = 0.5 * (Fx + Fx.adjoint());
      }
    }
    es.compute(Fx);
    C = es.eigenvectors();
    Matrix gn = spin_orbital_density(C, occupied, n, p);
    const double change = (gn - g).cwiseAbs().maxCoeff();
    g = gn;
    res.iterations = it;
    if (change <= opt.tolerance) {
      res.converged = true;
      break;
    }
  }
  if (!res.converged) {
    res.fallback = true;
    es.compute(spatial_average(op.t, n, p));
    C = es.eigenvectors();
    g = spin_orbital_density(C, occupied, n, p);
  } else {
    // Canonical orbitals of the converged Fock operator.
    es.compute(spatial_average(fock_matrix(op, g), n, p));
    Matrix Cn = es.eigenvectors();
    Matrix gn = spin_orbital_density(Cn, occupied, n, p);
    if ((gn - g).cwiseAbs().maxCoeff() <= 1e-8) {
      C = Cn;
      g = gn;
    }
  }
  res.U = spread(C, p);
  res.density = g;
  res.energy = determinant_energy(op, g);
  Matrix Pi = C.leftCols(occupied) * C.leftCols(occupied).adjoint();
  res.idempotency_error = (Pi * Pi - Pi).cwiseAbs().maxCoeff();
  return res;
}

}  // namespace orbdmrg
