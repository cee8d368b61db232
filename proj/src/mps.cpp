#include "orbdmrg/mps.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

#include "orbdmrg/operators.hpp"

namespace orbdmrg {

namespace {

constexpr double kZeroSigma = 1e-13;
constexpr double kDegenerate = 1e-10;

SpacePtr make_space(const std::vector<Charge>& q, const std::vector<int>& d) {
  return std::make_shared<Space>(q, d);
}

SpacePtr single_space(const Charge& q) { return make_space({q}, {1}); }

Matrix thin_q(const Eigen::HouseholderQR<Matrix>& qr, int rows, int r) {
  Matrix Q = Matrix::Identity(rows, r);
  return qr.householderQ() * Q;
}

}  // namespace

void TruncationPolicy::validate() const {
  if (!(eps >= 0.0)) throw PreconditionError("truncation eps must be >= 0");
  if (D_min < 1 || D_max < 1) throw PreconditionError("bond dimensions must be positive");
  if (D_min > D_max) throw PreconditionError("D_min must not exceed D_max");
}

double SchmidtSpectrum::weight() const {
  double w = 0;
  for (double s : sigma) w += s * s;
  return w;
}

SpacePtr complement_space(const Space& s, const Charge& total) {
  std::vector<Charge> q;
  std::vector<int> d;
  for (int k = 0; k < s.sectors(); ++k) {
    q.push_back(total - s.charge(k));
    d.push_back(s.dim(k));
  }
  return make_space(q, d);
}

void SiteTensor::allocate_zero() {
  const int nl = left->sectors();
  blocks.assign(nl * d(), Matrix());
  for (int i = 0; i < nl; ++i)
    for (int a = 0; a < d(); ++a) {
      int j = right_sector(i, a);
      if (j >= 0) block(i, a) = Matrix::Zero(left->dim(i), right->dim(j));
    }
}

TwoSiteTensor TwoSiteTensor::zeros(int m, const SpacePtr& left_bond, const SpacePtr& right_bond,
                                   const std::vector<Charge>& site, const Charge& target) {
  TwoSiteTensor t;
  t.m = m;
  t.target = target;
  t.left_bond = left_bond;
  t.right_bond = right_bond;
  t.rows = fuse_left(left_bond, site);
  t.cols = fuse_right(site, complement_space(*right_bond, target));
  const int nr = t.rows.space->sectors();
  t.col_of.assign(nr, -1);
  t.blocks.assign(nr, Matrix());
  for (int s = 0; s < nr; ++s) {
    int c = t.cols.space->find(target - t.rows.space->charge(s));
    t.col_of[s] = c;
    if (c >= 0) t.blocks[s] = Matrix::Zero(t.rows.space->dim(s), t.cols.space->dim(c));
  }
  return t;
}

int TwoSiteTensor::size() const {
  int n = 0;
  for (const auto& b : blocks) n += static_cast<int>(b.size());
  return n;
}

double TwoSiteTensor::norm() const {
  double w = 0;
  for (const auto& b : blocks) w += b.squaredNorm();
  return std::sqrt(w);
}

Vector TwoSiteTensor::flatten() const {
  Vector v(size());
  int k = 0;
  for (const auto& b : blocks) {
    v.segment(k, b.size()) = Eigen::Map<const Vector>(b.data(), b.size());
    k += static_cast<int>(b.size());
  }
  return v;
}

void TwoSiteTensor::assign(const Vector& v) {
  if (v.size() != size()) throw Error("TwoSiteTensor::assign: size mismatch");
  int k = 0;
  for (auto& b : blocks) {
    Eigen::Map<Vector>(b.data(), b.size()) = v.segment(k, b.size());
    k += static_cast<int>(b.size());
  }
}

namespace {

// Calls f(row sector, row offset, col offset, left sector i, alpha, content sector c,
// beta, right label sector j) for every nonzero (i, alpha) x (c, beta) slice.
template <class F>
void for_each_slice(const TwoSiteTensor& t, F&& f) {
  const int d = t.d();
  const Space& L = *t.left_bond;
  const Space& C = *t.cols.block;
  for (int i = 0; i < L.sectors(); ++i)
    for (int a = 0; a < d; ++a) {
      int s = t.rows.sec(i, a);
      int cs = t.col_of[s];
      if (cs < 0) continue;
      for (int c = 0; c < C.sectors(); ++c)
        for (int b = 0; b < d; ++b) {
          if (t.cols.sec(c, b) != cs) continue;
          int j = t.right_bond->find(t.target - C.charge(c));
          f(s, t.rows.off(i, a), t.cols.off(c, b), i, a, c, b, j);
        }
    }
}

}  // namespace

Matrix TwoSiteTensor::natural() const {
  const int d = this->d();
  const int Dl = left_bond->total_dim(), Dr = right_bond->total_dim();
  Matrix M = Matrix::Zero(Dl * d, d * Dr);
  for_each_slice(*this, [&](int s, int ro, int co, int i, int a, int c, int b, int j) {
    const int di = left_bond->dim(i), dc = cols.block->dim(c);
    for (int x = 0; x < di; ++x)
      for (int y = 0; y < dc; ++y)
        M((left_bond->offset(i) + x) * d + a, b * Dr + right_bond->offset(j) + y) =
            blocks[s](ro + x, co + y);
  });
  return M;
}

void TwoSiteTensor::from_natural(const Matrix& M) {
  const int d = this->d();
  const int Dl = left_bond->total_dim(), Dr = right_bond->total_dim();
  if (M.rows() != Dl * d || M.cols() != d * Dr) throw Error("from_natural: shape mismatch");
  for_each_slice(*this, [&](int s, int ro, int co, int i, int a, int c, int b, int j) {
    const int di = left_bond->dim(i), dc = cols.block->dim(c);
    for (int x = 0; x < di; ++x)
      for (int y = 0; y < dc; ++y)
        blocks[s](ro + x, co + y) =
            M((left_bond->offset(i) + x) * d + a, b * Dr + right_bond->offset(j) + y);
  });
}

namespace {

struct SectorSVD {
  int sector;
  Matrix U, V;
  RealVector s;
};

struct Ranked {
  double sigma;
  int sector;  // index into the svd list
  int index;
};

std::vector<SectorSVD> sector_svds(const TwoSiteTensor& t) {
  std::vector<SectorSVD> out;
  for (int s = 0; s < static_cast<int>(t.blocks.size()); ++s) {
    const Matrix& B = t.blocks[s];
    if (B.size() == 0) continue;
    Eigen::BDCSVD<Matrix> svd(B, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out.push_back({s, svd.matrixU(), svd.matrixV(), svd.singularValues()});
  }
  return out;
}

std::vector<Ranked> rank_values(const std::vector<SectorSVD>& svds) {
  std::vector<Ranked> all;
  for (int k = 0; k < static_cast<int>(svds.size()); ++k)
    for (int x = 0; x < svds[k].s.size(); ++x) all.push_back({svds[k].s(x), k, x});
  std::stable_sort(all.begin(), all.end(), [](const Ranked& a, const Ranked& b) {
    if (a.sigma != b.sigma) return a.sigma > b.sigma;
    return std::tie(a.sector, a.index) < std::tie(b.sector, b.index);
  });
  return all;
}

}  // namespace

int kept_rank(const SchmidtSpectrum& s, const TruncationPolicy& policy) {
  const int total = static_cast<int>(s.sigma.size());
  if (total == 0) return 0;
  const double W = s.weight();
  const double zero = kZeroSigma * std::sqrt(W);
  int nz = 0;
  while (nz < total && s.sigma[nz] > zero) ++nz;
  nz = std::max(nz, 1);
  // Smallest rank whose discarded weight is within eps.
  std::vector<double> tail(total + 1, 0.0);
  for (int k = total - 1; k >= 0; --k) tail[k] = tail[k + 1] + s.sigma[k] * s.sigma[k];
  int D = 1;
  while (D < total && tail[D] > policy.eps) ++D;
  D = std::max(D, std::min(policy.D_min, nz));
  D = std::min({D, policy.D_max, nz});
  const double tol = kDegenerate * s.sigma[0];
  int end = D;
  while (end < nz && std::abs(s.sigma[end] - s.sigma[D - 1]) <= tol) ++end;
  if (end <= policy.D_max) D = end;
  return D;
}

double discarded_weight(const SchmidtSpectrum& s, int kept) {
  double w = 0;
  for (int k = kept; k < static_cast<int>(s.sigma.size()); ++k) w += s.sigma[k] * s.sigma[k];
  return w;
}

SchmidtSpectrum TwoSiteTensor::spectrum() const {
  SchmidtSpectrum sp;
  auto svds = sector_svds(*this);
  const double zero = kZeroSigma * norm();
  for (const auto& r : rank_values(svds)) {
    if (r.sigma <= zero) break;
    sp.sigma.push_back(r.sigma);
    sp.sector.push_back(rows.space->charge(svds[r.sector].sector));
  }
  return sp;
}

Decomposition decompose_two_site(const TwoSiteTensor& theta, const TruncationPolicy& policy,
                                 bool center_right) {
  policy.validate();
  auto svds = sector_svds(theta);
  auto ranked = rank_values(svds);
  SchmidtSpectrum full;
  for (const auto& r : ranked) {
    full.sigma.push_back(r.sigma);
    full.sector.push_back(theta.rows.space->charge(svds[r.sector].sector));
  }
  Decomposition dec;
  const int D = kept_rank(full, policy);
  dec.kept = D;
  dec.eps = discarded_weight(full, D);

  std::vector<int> keep(svds.size(), 0);
  for (int k = 0; k < D; ++k) keep[ranked[k].sector] = std::max(keep[ranked[k].sector], ranked[k].index + 1);

  double scale = 1.0;
  if (policy.renormalize) {
    double w = full.weight() - dec.eps;
    if (w > 0) scale = 1.0 / std::sqrt(w);
  }
  for (int k = 0; k < D; ++k) {
    dec.spectrum.sigma.push_back(full.sigma[k] * scale);
    dec.spectrum.sector.push_back(full.sector[k]);
  }

  std::vector<Charge> bq;
  std::vector<int> bd;
  for (std::size_t k = 0; k < svds.size(); ++k)
    if (keep[k] > 0) {
      bq.push_back(theta.rows.space->charge(svds[k].sector));
      bd.push_back(keep[k]);
    }
  SpacePtr bond = make_space(bq, bd);
  const auto& site = theta.rows.site;
  const int d = static_cast<int>(site.size());

  dec.left = SiteTensor{theta.left_bond, bond, site, {}};
  dec.right = SiteTensor{bond, theta.right_bond, site, {}};
  dec.left.allocate_zero();
  dec.right.allocate_zero();

  const Space& L = *theta.left_bond;
  const Space& C = *theta.cols.block;
  for (std::size_t k = 0; k < svds.size(); ++k) {
    if (keep[k] == 0) continue;
    const auto& sv = svds[k];
    const int r = keep[k];
    const int s = sv.sector;
    const int bsec = bond->find(theta.rows.space->charge(s));
    RealVector sig = sv.s.head(r) * scale;
    Matrix Lm = sv.U.leftCols(r);
    Matrix Rm = sv.V.leftCols(r).adjoint();
    if (center_right)
      Rm = sig.asDiagonal() * Rm;
    else
      Lm = Lm * sig.asDiagonal();
    for (int i = 0; i < L.sectors(); ++i)
      for (int a = 0; a < d; ++a)
        if (theta.rows.sec(i, a) == s)
          dec.left.block(i, a) = Lm.middleRows(theta.rows.off(i, a), L.dim(i));
    const int cs = theta.col_of[s];
    for (int c = 0; c < C.sectors(); ++c)
      for (int b = 0; b < d; ++b)
        if (theta.cols.sec(c, b) == cs) {
          int j = theta.right_bond->find(theta.target - C.charge(c));
          if (dec.right.right_sector(bsec, b) != j) throw Error("decompose_two_site: inconsistent charges");
          dec.right.block(bsec, b) = Rm.middleCols(theta.cols.off(c, b), C.dim(c));
        }
  }
  return dec;
}

int SymmetricMPS::max_bond_dim() const {
  int D = 0;
  for (int k = 0; k <= n; ++k) D = std::max(D, bond_dim(k));
  return D;
}

std::vector<Charge> SymmetricMPS::site_charges() const { return orbdmrg::site_charges(p, symmetry); }

SymmetricMPS product_mps(int n, int p, Symmetry sym, const std::vector<int>& states) {
  if (n < 1) throw PreconditionError("product_mps: n must be positive");
  if (static_cast<int>(states.size()) != n) throw PreconditionError("product_mps: need one state per site");
  SymmetricMPS psi;
  psi.n = n;
  psi.p = p;
  psi.symmetry = sym;
  auto site = site_charges(p, sym);
  Charge q;
  SpacePtr left = single_space(q);
  for (int k = 0; k < n; ++k) {
    if (states[k] < 0 || states[k] >= psi.d()) throw PreconditionError("product_mps: state out of range");
    q = q + site[states[k]];
    SpacePtr right = single_space(q);
    SiteTensor A{left, right, site, {}};
    A.allocate_zero();
    A.block(0, states[k])(0, 0) = 1.0;
    psi.sites.push_back(std::move(A));
    left = right;
  }
  psi.target = q;
  psi.center = 0;
  for (int m = 0; m + 1 < n; ++m) {
    psi.spectra.push_back({{1.0}, {psi.sites[m].right->charge(0)}});
    psi.trunc_error.push_back(0.0);
  }
  return psi;
}

SymmetricMPS random_mps(int n, int p, Symmetry sym, const Charge& target, int D, std::uint64_t seed) {
  if (n < 1 || D < 1) throw PreconditionError("random_mps: n and D must be positive");
  auto site = site_charges(p, sym);
  const int d = static_cast<int>(site.size());
  std::vector<std::map<Charge, double>> fromL(n + 1), fromR(n + 1);
  fromL[0][Charge{}] = 1;
  for (int k = 0; k < n; ++k)
    for (const auto& [q, c] : fromL[k])
      for (int a = 0; a < d; ++a) fromL[k + 1][q + site[a]] += c;
  fromR[n][target] = 1;
  for (int k = n; k > 0; --k)
    for (const auto& [q, c] : fromR[k])
      for (int a = 0; a < d; ++a) fromR[k - 1][q - site[a]] += c;
  std::vector<SpacePtr> bonds(n + 1);
  for (int k = 0; k <= n; ++k) {
    std::vector<Charge> qs;
    std::vector<int> ds;
    for (const auto& [q, c] : fromL[k]) {
      auto it = fromR[k].find(q);
      if (it == fromR[k].end()) continue;
      qs.push_back(q);
      ds.push_back(static_cast<int>(std::min<double>({static_cast<double>(D), c, it->second})));
    }
    if (qs.empty()) throw PreconditionError("random_mps: target charge " + target.str() + " unreachable");
    bonds[k] = make_space(qs, ds);
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  SymmetricMPS psi;
  psi.n = n;
  psi.p = p;
  psi.symmetry = sym;
  psi.target = target;
  for (int k = 0; k < n; ++k) {
    SiteTensor A{bonds[k], bonds[k + 1], site, {}};
    A.allocate_zero();
    for (auto& b : A.blocks)
      for (int x = 0; x < b.size(); ++x) b.data()[x] = Complex(g(rng), g(rng));
    psi.sites.push_back(std::move(A));
  }
  psi.spectra.assign(n - 1, {});
  psi.trunc_error.assign(n - 1, 0.0);
  psi.center = -1;
  canonicalize(psi, 0);
  normalize(psi);
  return psi;
}

namespace {

// Left-normalises site k and pushes the remainder into site k+1.
void move_right(SymmetricMPS& psi, int k) {
  SiteTensor& A = psi.sites[k];
  const Space& L = *A.left;
  const Space& R = *A.right;
  const int d = A.d();
  std::vector<Charge> qs;
  std::vector<int> ds;
  std::vector<Matrix> Qs(R.sectors()), Rs(R.sectors());
  for (int j = 0; j < R.sectors(); ++j) {
    int rows = 0;
    for (int i = 0; i < L.sectors(); ++i)
      for (int a = 0; a < d; ++a)
        if (A.right_sector(i, a) == j) rows += L.dim(i);
    if (rows == 0) continue;
    Matrix M(rows, R.dim(j));
    int o = 0;
    for (int i = 0; i < L.sectors(); ++i)
      for (int a = 0; a < d; ++a)
        if (A.right_sector(i, a) == j) {
          M.middleRows(o, L.dim(i)) = A.block(i, a);
          o += L.dim(i);
        }
    const int r = std::min(rows, R.dim(j));
    Eigen::HouseholderQR<Matrix> qr(M);
    Qs[j] = thin_q(qr, rows, r);
    Rs[j] = qr.matrixQR().topRows(r).template triangularView<Eigen::Upper>();
    qs.push_back(R.charge(j));
    ds.push_back(r);
  }
  SpacePtr bond = make_space(qs, ds);
  SiteTensor An{A.left, bond, A.site, {}};
  An.allocate_zero();
  for (int j = 0; j < R.sectors(); ++j) {
    if (Qs[j].size() == 0) continue;
    int o = 0;
    for (int i = 0; i < L.sectors(); ++i)
      for (int a = 0; a < d; ++a)
        if (A.right_sector(i, a) == j) {
          An.block(i, a) = Qs[j].middleRows(o, L.dim(i));
          o += L.dim(i);
        }
  }
  SiteTensor& B = psi.sites[k + 1];
  SiteTensor Bn{bond, B.right, B.site, {}};
  Bn.allocate_zero();
  for (int jn = 0; jn < bond->sectors(); ++jn) {
    int j = R.find(bond->charge(jn));
    for (int b = 0; b < d; ++b)
      if (Bn.right_sector(jn, b) >= 0 && B.right_sector(j, b) >= 0) Bn.block(jn, b) = Rs[j] * B.block(j, b);
  }
  A = std::move(An);
  B = std::move(Bn);
}

// Right-normalises site k and pushes the remainder into site k-1.
void move_left(SymmetricMPS& psi, int k) {
  SiteTensor& B = psi.sites[k];
  const Space& L = *B.left;
  const Space& R = *B.right;
  const int d = B.d();
  std::vector<Charge> qs;
  std::vector<int> ds;
  std::vector<Matrix> Qs(L.sectors()), Ls(L.sectors());
  for (int i = 0; i < L.sectors(); ++i) {
    int cols = 0;
    for (int a = 0; a < d; ++a) {
      int j = B.right_sector(i, a);
      if (j >= 0) cols += R.dim(j);
    }
    if (cols == 0) continue;
    Matrix M(L.dim(i), cols);
    int o = 0;
    for (int a = 0; a < d; ++a) {
      int j = B.right_sector(i, a);
      if (j < 0) continue;
      M.middleCols(o, R.dim(j)) = B.block(i, a);
      o += R.dim(j);
    }
    const int r = std::min(L.dim(i), cols);
    Matrix Mt = M.adjoint();
    Eigen::HouseholderQR<Matrix> qr(Mt);
    Qs[i] = thin_q(qr, cols, r).adjoint();
    Ls[i] = Matrix(qr.matrixQR().topRows(r).template triangularView<Eigen::Upper>()).adjoint();
    qs.push_back(L.charge(i));
    ds.push_back(r);
  }
  SpacePtr bond = make_space(qs, ds);
  SiteTensor Bn{bond, B.right, B.site, {}};
  Bn.allocate_zero();
  for (int in = 0; in < bond->sectors(); ++in) {
    int i = L.find(bond->charge(in));
    int o = 0;
    for (int a = 0; a < d; ++a) {
      int j = B.right_sector(i, a);
      if (j < 0) continue;
      Bn.block(in, a) = Qs[i].middleCols(o, R.dim(j));
      o += R.dim(j);
    }
  }
  SiteTensor& A = psi.sites[k - 1];
  SiteTensor An{A.left, bond, A.site, {}};
  An.allocate_zero();
  const Space& AL = *A.left;
  for (int h = 0; h < AL.sectors(); ++h)
    for (int a = 0; a < d; ++a) {
      int in = An.right_sector(h, a);
      if (in < 0) continue;
      int i = L.find(bond->charge(in));
      An.block(h, a) = A.block(h, a) * Ls[i];
    }
  A = std::move(An);
  B = std::move(Bn);
}

}  // namespace

void canonicalize(SymmetricMPS& psi, int m) {
  if (m < 0 || m >= psi.n) throw PreconditionError("canonicalize: centre out of range");
  if (psi.center < 0) {
    for (int k = 0; k < m; ++k) move_right(psi, k);
    for (int k = psi.n - 1; k > m; --k) move_left(psi, k);
  } else {
    for (int k = psi.center; k < m; ++k) move_right(psi, k);
    for (int k = psi.center; k > m; --k) move_left(psi, k);
  }
  psi.center = m;
}

double norm(SymmetricMPS& psi) {
  if (psi.center < 0) canonicalize(psi, 0);
  double w = 0;
  for (const auto& b : psi.sites[psi.center].blocks) w += b.squaredNorm();
  return std::sqrt(w);
}

void normalize(SymmetricMPS& psi) {
  double nr = norm(psi);
  if (nr == 0) throw Error("normalize: zero state");
  for (auto& b : psi.sites[psi.center].blocks) b /= nr;
}

TwoSiteTensor block_two_site(const SymmetricMPS& psi, int m) {
  if (m < 0 || m + 1 >= psi.n) throw PreconditionError("block_two_site: cut out of range");
  if (psi.center != m && psi.center != m + 1)
    throw PreconditionError("block_two_site: canonical centre must be at m or m+1");
  const SiteTensor& A = psi.sites[m];
  const SiteTensor& B = psi.sites[m + 1];
  TwoSiteTensor t = TwoSiteTensor::zeros(m, A.left, B.right, A.site, psi.target);
  const int d = A.d();
  const Space& C = *t.cols.block;
  for (int i = 0; i < A.left->sectors(); ++i)
    for (int a = 0; a < d; ++a) {
      int k = A.right_sector(i, a);
      if (k < 0) continue;
      int s = t.rows.sec(i, a);
      for (int b = 0; b < d; ++b) {
        int j = B.right_sector(k, b);
        if (j < 0) continue;
        int c = C.find(psi.target - B.right->charge(j));
        t.blocks[s]
            .block(t.rows.off(i, a), t.cols.off(c, b), A.left->dim(i), B.right->dim(j))
            .noalias() += A.block(i, a) * B.block(k, b);
      }
    }
  return t;
}

void store_two_site(SymmetricMPS& psi, int m, Decomposition dec, bool center_right) {
  psi.sites[m] = std::move(dec.left);
  psi.sites[m + 1] = std::move(dec.right);
  psi.spectra[m] = std::move(dec.spectrum);
  psi.trunc_error[m] = dec.eps;
  psi.center = center_right ? m + 1 : m;
}

SchmidtSpectrum schmidt_spectrum(const SymmetricMPS& psi, int m) {
  if (m < 0 || m + 1 >= psi.n) throw PreconditionError("schmidt_spectrum: cut out of range");
  SymmetricMPS c = psi;
  canonicalize(c, m);
  return block_two_site(c, m).spectrum();
}

TwoSiteTensor apply_two_site_gate(const TwoSiteTensor& theta, const Matrix& G) {
  const int d = theta.d();
  if (G.rows() != d * d || G.cols() != d * d) throw PreconditionError("gate dimension mismatch");
  const auto& site = theta.rows.site;
  for (int x = 0; x < d * d; ++x)
    for (int y = 0; y < d * d; ++y)
      if (std::abs(G(x, y)) > 1e-12 && site[x / d] + site[x % d] != site[y / d] + site[y % d])
        throw PreconditionError("gate violates charge conservation");
  TwoSiteTensor out = TwoSiteTensor::zeros(theta.m, theta.left_bond, theta.right_bond, site, theta.target);
  const Space& L = *theta.left_bond;
  const Space& C = *theta.cols.block;
  for (int i = 0; i < L.sectors(); ++i)
    for (int c = 0; c < C.sectors(); ++c)
      for (int y = 0; y < d * d; ++y) {
        const int a = y / d, b = y % d;
        int s = theta.rows.sec(i, a);
        if (theta.col_of[s] != theta.cols.sec(c, b)) continue;
        auto in = theta.blocks[s].block(theta.rows.off(i, a), theta.cols.off(c, b), L.dim(i), C.dim(c));
        for (int x = 0; x < d * d; ++x) {
          if (G(x, y) == 0.0) continue;
          const int a2 = x / d, b2 = x % d;
          int s2 = out.rows.sec(i, a2);
          out.blocks[s2].block(out.rows.off(i, a2), out.cols.off(c, b2), L.dim(i), C.dim(c)) += G(x, y) * in;
        }
      }
  return out;
}

double apply_two_site_gate(SymmetricMPS& psi, int m, const Matrix& G, const TruncationPolicy& policy) {
  if (psi.center != m && psi.center != m + 1) canonicalize(psi, m);
  auto theta = apply_two_site_gate(block_two_site(psi, m), G);
  auto dec = decompose_two_site(theta, policy, true);
  double eps = dec.eps;
  store_two_site(psi, m, std::move(dec), true);
  return eps;
}

namespace {

// E_{a,a'} = sum_i A(i,a)^T conj(A(i,a')) on the right bond of the centre site.
std::vector<BlockOp> open_transfer(const SiteTensor& A) {
  const int d = A.d();
  std::vector<BlockOp> E(d * d);
  for (int a = 0; a < d; ++a)
    for (int a2 = 0; a2 < d; ++a2) {
      BlockOp e(A.right, A.site[a] - A.site[a2]);
      for (int i = 0; i < A.left->sectors(); ++i) {
        int j = A.right_sector(i, a), j2 = A.right_sector(i, a2);
        if (j < 0 || j2 < 0) continue;
        e.at(j2) += A.block(i, a).transpose() * A.block(i, a2).conjugate();
      }
      E[a * d + a2] = std::move(e);
    }
  return E;
}

// E -> sum_g s_g A(g)^T E conj(A(g)), s_g = (-1)^{parity(g)} for odd E.
BlockOp pass_through(const BlockOp& E, const SiteTensor& A) {
  BlockOp out(A.right, E.flux());
  const bool odd = E.flux().parity();
  const Space& L = *A.left;
  for (int j2 = 0; j2 < L.sectors(); ++j2) {
    if (!E.has(j2)) continue;
    int j = E.row_of(j2);
    for (int g = 0; g < A.d(); ++g) {
      int k = A.right_sector(j, g), k2 = A.right_sector(j2, g);
      if (k < 0 || k2 < 0) continue;
      double s = odd && A.site[g].parity() ? -1.0 : 1.0;
      out.at(k2) += s * (A.block(j, g).transpose() * E.block(j2) * A.block(j2, g).conjugate());
    }
  }
  return out;
}

Complex close_transfer(const BlockOp& E, const SiteTensor& A, int b, int b2) {
  Complex r = 0;
  const Space& L = *A.left;
  for (int j2 = 0; j2 < L.sectors(); ++j2) {
    if (!E.has(j2)) continue;
    int j = E.row_of(j2);
    int k = A.right_sector(j, b), k2 = A.right_sector(j2, b2);
    if (k < 0 || k2 < 0 || k != k2) continue;
    r += (E.block(j2) * A.block(j2, b2).conjugate() * A.block(j, b).transpose()).trace();
  }
  return r;
}

Matrix rdm_from_transfer(const std::vector<BlockOp>& E, int d) {
  Matrix rho = Matrix::Zero(d, d);
  for (int a = 0; a < d; ++a)
    for (int a2 = 0; a2 < d; ++a2) {
      const BlockOp& e = E[a * d + a2];
      if (e.flux() != Charge{}) continue;
      for (int j = 0; j < e.sectors(); ++j)
        if (e.has(j)) rho(a, a2) += e.block(j).trace();
    }
  return rho;
}

Matrix pair_rdm(const std::vector<BlockOp>& E, const SiteTensor& B) {
  const int d = B.d();
  Matrix rho = Matrix::Zero(d * d, d * d);
  for (int a = 0; a < d; ++a)
    for (int a2 = 0; a2 < d; ++a2)
      for (int b = 0; b < d; ++b)
        for (int b2 = 0; b2 < d; ++b2)
          rho(a * d + b, a2 * d + b2) = close_transfer(E[a * d + a2], B, b, b2);
  return rho;
}

}  // namespace

Matrix one_site_rdm(const SymmetricMPS& psi, int q) {
  if (q < 0 || q >= psi.n) throw PreconditionError("one_site_rdm: site out of range");
  SymmetricMPS c = psi;
  canonicalize(c, q);
  return rdm_from_transfer(open_transfer(c.sites[q]), c.d());
}

Matrix two_site_rdm(const SymmetricMPS& psi, int q, int r) {
  if (q < 0 || r >= psi.n || q >= r) throw PreconditionError("two_site_rdm: need 0 <= q < r < n");
  SymmetricMPS c = psi;
  canonicalize(c, q);
  auto E = open_transfer(c.sites[q]);
  for (int k = q + 1; k < r; ++k)
    for (auto& e : E) e = pass_through(e, c.sites[k]);
  return pair_rdm(E, c.sites[r]);
}

double von_neumann_entropy(const Matrix& rho) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (rho + rho.adjoint()), Eigen::EigenvaluesOnly);
  double S = 0;
  for (int k = 0; k < es.eigenvalues().size(); ++k) {
    double l = es.eigenvalues()(k);
    if (l > 0) S -= l * std::log(l);
  }
  return S;
}

RealMatrix mutual_information(const SymmetricMPS& psi) {
  const int n = psi.n, d = psi.d();
  RealMatrix I = RealMatrix::Zero(n, n);
  SymmetricMPS c = psi;
  std::vector<double> S1(n);
  canonicalize(c, 0);
  for (int q = 0; q < n; ++q) {
    canonicalize(c, q);
    auto E = open_transfer(c.sites[q]);
    S1[q] = von_neumann_entropy(rdm_from_transfer(E, d));
    for (int r = q + 1; r < n; ++r) {
      double S2 = von_neumann_entropy(pair_rdm(E, c.sites[r]));
      I(q, r) = -S2;
      if (r + 1 < n)
        for (auto& e : E) e = pass_through(e, c.sites[r]);
    }
  }
  for (int q = 0; q < n; ++q)
    for (int r = q + 1; r < n; ++r) {
      I(q, r) += S1[q] + S1[r];
      I(r, q) = I(q, r);
    }
  return I;
}

namespace {

nlohmann::json charge_json(const Charge& q) { return q.n; }

Charge charge_from(const nlohmann::json& j) {
  Charge q;
  q.n = j.get<std::array<int, kMaxSpecies>>();
  return q;
}

nlohmann::json space_json(const Space& s) {
  nlohmann::json out = nlohmann::json::array();
  for (int k = 0; k < s.sectors(); ++k) out.push_back({{"charge", charge_json(s.charge(k))}, {"dim", s.dim(k)}});
  return out;
}

SpacePtr space_from(const nlohmann::json& j) {
  std::vector<Charge> q;
  std::vector<int> d;
  for (const auto& e : j) {
    q.push_back(charge_from(e.at("charge")));
    d.push_back(e.at("dim").get<int>());
  }
  return make_space(q, d);
}

}  // namespace

nlohmann::json mps_to_json(const SymmetricMPS& psi) {
  nlohmann::json j;
  j["format"] = "orbdmrg-mps";
  j["version"] = 1;
  j["n"] = psi.n;
  j["p"] = psi.p;
  j["symmetry"] = to_string(psi.symmetry);
  j["target"] = charge_json(psi.target);
  j["center"] = psi.center;
  nlohmann::json bonds = nlohmann::json::array();
  for (int k = 0; k <= psi.n; ++k) bonds.push_back(space_json(*psi.bond(k)));
  j["bonds"] = bonds;
  nlohmann::json sites = nlohmann::json::array();
  for (const auto& A : psi.sites) {
    nlohmann::json blocks = nlohmann::json::array();
    for (int i = 0; i < A.left->sectors(); ++i)
      for (int a = 0; a < A.d(); ++a)
        if (A.block(i, a).size()) blocks.push_back({{"sector", i}, {"state", a}, {"data", matrix_to_json(A.block(i, a))}});
    sites.push_back(blocks);
  }
  j["sites"] = sites;
  nlohmann::json spectra = nlohmann::json::array();
  for (const auto& s : psi.spectra) {
    nlohmann::json sec = nlohmann::json::array();
    for (const auto& q : s.sector) sec.push_back(charge_json(q));
    spectra.push_back({{"sigma", s.sigma}, {"sector", sec}});
  }
  j["spectra"] = spectra;
  j["trunc_error"] = psi.trunc_error;
  return j;
}

SymmetricMPS mps_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "orbdmrg-mps") throw ParseError("not an orbdmrg-mps document", 0);
  if (j.value("version", 0) != 1) throw ParseError("unsupported orbdmrg-mps version", 0);
  SymmetricMPS psi;
  psi.n = j.at("n").get<int>();
  psi.p = j.at("p").get<int>();
  psi.symmetry = symmetry_from_string(j.at("symmetry").get<std::string>());
  psi.target = charge_from(j.at("target"));
  psi.center = j.at("center").get<int>();
  std::vector<SpacePtr> bonds;
  for (const auto& b : j.at("bonds")) bonds.push_back(space_from(b));
  if (static_cast<int>(bonds.size()) != psi.n + 1) throw ParseError("bond count mismatch", 0);
  auto site = site_charges(psi.p, psi.symmetry);
  for (int k = 0; k < psi.n; ++k) {
    SiteTensor A{bonds[k], bonds[k + 1], site, {}};
    A.allocate_zero();
    for (const auto& e : j.at("sites").at(k)) {
      int i = e.at("sector").get<int>(), a = e.at("state").get<int>();
      Matrix M = matrix_from_json(e.at("data"));
      if (i < 0 || i >= A.left->sectors() || a < 0 || a >= A.d() || A.block(i, a).rows() != M.rows() ||
          A.block(i, a).cols() != M.cols())
        throw ParseError("site block shape mismatch", 0);
      A.block(i, a) = M;
    }
    psi.sites.push_back(std::move(A));
  }
  for (const auto& s : j.at("spectra")) {
    SchmidtSpectrum sp;
    sp.sigma = s.at("sigma").get<std::vector<double>>();
    for (const auto& q : s.at("sector")) sp.sector.push_back(charge_from(q));
    psi.spectra.push_back(sp);
  }
  psi.trunc_error = j.at("trunc_error").get<std::vector<double>>();
  psi.spectra.resize(std::max(psi.n - 1, 0));
  psi.trunc_error.resize(std::max(psi.n - 1, 0), 0.0);
  return psi;
}

}  // namespace orbdmrg
