#include "orbdmrg/dmrg.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

namespace orbdmrg {

namespace {

Complex qcoef(const SecondQuantizedOperator& op, int a, int b, int x, int y) {
  return op.V(a, x, b, y) + op.V(x, a, y, b) - op.V(a, x, y, b) - op.V(x, a, b, y);
}

Complex wcoef(const SecondQuantizedOperator& op, int a, int x, int y, int z) {
  return op.V(a, x, y, z) - op.V(x, a, y, z);
}

// Dense operators on one site and its coefficient sums with arbitrary open indices.
struct SiteKit {
  const SecondQuantizedOperator& op;
  int p, d, first;
  std::vector<Matrix> c, cd;
  Matrix I;

  SiteKit(const SecondQuantizedOperator& o, int site) : op(o), p(o.p()), d(1 << o.p()), first(site * o.p()) {
    SiteOperators so = site_operators(p);
    c = so.c;
    cd = so.cdag;
    I = so.identity;
  }
  bool contains(int mode) const { return mode >= first && mode < first + p; }
  const Matrix& ann(int mode) const { return c[mode - first]; }
  const Matrix& cre(int mode) const { return cd[mode - first]; }

  Matrix S(int a) const {
    Matrix M = Matrix::Zero(d, d);
    for (int x = 0; x < p; ++x)
      if (op.t(a, first + x) != 0.0) M += op.t(a, first + x) * c[x];
    return M;
  }
  Matrix P(int a, int b) const {
    Matrix M = Matrix::Zero(d, d);
    for (int x = 0; x < p; ++x)
      for (int y = 0; y < p; ++y) {
        Complex v = op.V(a, b, first + x, first + y);
        if (v != 0.0) M += v * (c[y] * c[x]);
      }
    return M;
  }
  Matrix Q(int a, int b) const {
    Matrix M = Matrix::Zero(d, d);
    for (int x = 0; x < p; ++x)
      for (int y = 0; y < p; ++y) {
        Complex q = qcoef(op, a, b, first + x, first + y);
        if (q != 0.0) M += q * (cd[x] * c[y]);
      }
    return M;
  }
  Matrix R(int a) const {
    Matrix M = Matrix::Zero(d, d);
    for (int x = 0; x < p; ++x)
      for (int y = 0; y < p; ++y)
        for (int z = 0; z < p; ++z) {
          Complex w = wcoef(op, a, first + x, first + y, first + z);
          if (w != 0.0) M += w * (cd[x] * c[z] * c[y]);
        }
    return M;
  }
  Matrix H() const {
    Matrix M = Matrix::Zero(d, d);
    for (int x = 0; x < p; ++x)
      for (int y = 0; y < p; ++y) {
        Complex t = op.t(first + x, first + y);
        if (t != 0.0) M += t * (cd[x] * c[y]);
        for (int z = 0; z < p; ++z)
          for (int w = 0; w < p; ++w) {
            Complex v = op.V(first + x, first + y, first + z, first + w);
            if (v != 0.0) M += v * (cd[x] * cd[y] * c[w] * c[z]);
          }
      }
    return M;
  }
};

bool nonzero(const BlockOp& X) { return X.space_ptr() != nullptr && !X.zero(); }

Environment empty_env(Side side, int cut, const SecondQuantizedOperator& op, SpacePtr space) {
  Environment e;
  e.side = side;
  e.cut = cut;
  e.p = op.p();
  e.modes = op.modes();
  e.space = std::move(space);
  e.H = BlockOp(e.space, Charge{});
  const int N = e.modes;
  e.c.assign(N, BlockOp());
  e.S.assign(N, BlockOp());
  e.R.assign(N, BlockOp());
  e.P.assign(N * N, BlockOp());
  e.Q.assign(N * N, BlockOp());
  e.CC.assign(N * N, BlockOp());
  e.CD.assign(N * N, BlockOp());
  e.built_with = op.mode_space.accumulated;
  return e;
}

EnlargedBlock enlarge_left(const Environment& env, const std::vector<Charge>& site, const SecondQuantizedOperator& op) {
  const int k = env.cut;
  SiteKit s(op, k);
  EnlargedBlock big;
  big.space = fuse_left(env.space, site);
  const FusedSpace& F = big.space;
  Environment& e = big.ops;
  e = empty_env(Side::left, k + 1, op, F.space);
  e.built_with = env.built_with;
  const int N = e.modes;
  const int b0 = k * s.p, b1 = (k + 1) * s.p;  // block modes [0, b0), site modes [b0, b1)
  BlockOp IdB = BlockOp::identity(env.space);
  auto KL = [&](const BlockOp& X, const Matrix& Y, bool par = false) { return kron(F, X, Y, par); };
  std::vector<BlockOp> cdB(N);
  for (int x = 0; x < b0; ++x) cdB[x] = env.c[x].adjoint();

  for (int x = 0; x < b0; ++x) e.c[x] = KL(env.c[x], s.I);
  for (int x = b0; x < b1; ++x) e.c[x] = KL(IdB, s.ann(x), true);

  for (int a = b1; a < N; ++a) {
    BlockOp S = KL(env.S[a], s.I);
    S.add(KL(IdB, s.S(a), true));
    e.S[a] = std::move(S);

    BlockOp R = KL(env.R[a], s.I);
    R.add(KL(IdB, s.R(a), true));
    for (int x = 0; x < b0; ++x) {
      Matrix Ps = s.P(a, x) - s.P(x, a);
      if (!Ps.isZero(0)) R.add(KL(cdB[x], Ps));
    }
    for (int x = b0; x < b1; ++x) {
      BlockOp Pd = combine(env.pair(env.P, a, x), env.pair(env.P, x, a), -1.0);
      R.add(KL(Pd, s.cre(x), true));
    }
    for (int b = b0; b < b1; ++b) R.add(KL(env.pair(env.Q, a, b), s.ann(b), true));
    for (int u = 0; u < b0; ++u) {
      Matrix Qs = s.Q(a, u);
      if (!Qs.isZero(0)) R.add(KL(env.c[u], Qs));
    }
    e.R[a] = std::move(R);

    for (int b = b1; b < N; ++b) {
      BlockOp P = KL(env.pair(env.P, a, b), s.I);
      P.add(KL(IdB, s.P(a, b)));
      for (int w = b0; w < b1; ++w) {
        BlockOp sum;
        for (int u = 0; u < b0; ++u) sum.add(env.c[u], op.V(a, b, w, u) - op.V(a, b, u, w));
        P.add(KL(sum, s.ann(w), true));
      }
      e.pair(e.P, a, b) = std::move(P);

      BlockOp Q = KL(env.pair(env.Q, a, b), s.I);
      Q.add(KL(IdB, s.Q(a, b)));
      for (int y = b0; y < b1; ++y) {
        BlockOp sum;
        for (int x = 0; x < b0; ++x) sum.add(cdB[x], qcoef(op, a, b, x, y));
        Q.add(KL(sum, s.ann(y), true));
      }
      for (int x = b0; x < b1; ++x) {
        BlockOp sum;
        for (int y = 0; y < b0; ++y) sum.add(env.c[y], qcoef(op, a, b, x, y));
        Q.add(KL(sum, s.cre(x), true), -1.0);
      }
      e.pair(e.Q, a, b) = std::move(Q);
    }
  }

  BlockOp H = KL(env.H, s.I);
  H.add(KL(IdB, s.H()));
  for (int a = b0; a < b1; ++a) {
    BlockOp X = combine(env.S[a], env.R[a]);
    H.add(KL(X, s.cre(a), true), -1.0);
    H.add(KL(X.adjoint(), s.ann(a), true));
    for (int b = a + 1; b < b1; ++b) {
      BlockOp Pd = combine(env.pair(env.P, a, b), env.pair(env.P, b, a), -1.0);
      Matrix cc = s.cre(a) * s.cre(b);
      H.add(KL(Pd, cc));
      H.add(KL(Pd.adjoint(), cc.adjoint()));
    }
    for (int b = b0; b < b1; ++b) H.add(KL(env.pair(env.Q, a, b), s.cre(a) * s.ann(b)));
  }
  for (int x = 0; x < b0; ++x) {
    Matrix Rs = s.R(x);
    if (Rs.isZero(0)) continue;
    H.add(KL(cdB[x], Rs, true));
    H.add(KL(env.c[x], Rs.adjoint(), true), -1.0);
  }
  e.H = std::move(H);
  return big;
}

EnlargedBlock enlarge_right(const Environment& env, const std::vector<Charge>& site,
                            const SecondQuantizedOperator& op) {
  const int k = env.cut - 1;
  SiteKit s(op, k);
  EnlargedBlock big;
  big.space = fuse_right(site, env.space);
  const FusedSpace& F = big.space;
  Environment& e = big.ops;
  e = empty_env(Side::right, k, op, F.space);
  e.built_with = env.built_with;
  const int N = e.modes;
  const int s0 = k * s.p, s1 = (k + 1) * s.p;  // site modes [s0, s1), block modes [s1, N)
  BlockOp IdB = BlockOp::identity(env.space);
  auto KR = [&](const Matrix& Y, const BlockOp& X, bool par = false) { return kron(F, X, Y, par); };
  std::vector<BlockOp> cdB(N);
  for (int x = s1; x < N; ++x) cdB[x] = env.c[x].adjoint();

  for (int a = s0; a < s1; ++a) e.c[a] = KR(s.ann(a), IdB);
  for (int a = s1; a < N; ++a) e.c[a] = KR(s.I, env.c[a], true);

  for (int a = s0; a < N; ++a)
    for (int b = s0; b < N; ++b) {
      const bool as = a < s1, bs = b < s1;
      BlockOp CD;
      if (as && bs)
        CD = KR(s.cre(a) * s.ann(b), IdB);
      else if (!as && !bs)
        CD = KR(s.I, env.pair(env.CD, a, b));
      else if (as)
        CD = KR(s.cre(a), env.c[b], true);
      else {
        CD = KR(s.ann(b), cdB[a], true);
        CD.scale(-1.0);
      }
      e.pair(e.CD, a, b) = std::move(CD);
      if (b <= a) continue;
      BlockOp CC;
      if (as && bs)
        CC = KR(s.cre(a) * s.cre(b), IdB);
      else if (!as && !bs)
        CC = KR(s.I, env.pair(env.CC, a, b));
      else
        CC = KR(s.cre(a), cdB[b], true);
      e.pair(e.CC, a, b) = std::move(CC);
    }

  for (int x = 0; x < s0; ++x) {
    BlockOp S = KR(s.S(x), IdB);
    S.add(KR(s.I, env.S[x], true));
    e.S[x] = std::move(S);

    BlockOp R = KR(s.R(x), IdB);
    R.add(KR(s.I, env.R[x], true));
    for (int u = s0; u < s1; ++u) {
      BlockOp Pd = combine(env.pair(env.P, x, u), env.pair(env.P, u, x), -1.0);
      R.add(KR(s.cre(u), Pd));
    }
    for (int u = s1; u < N; ++u) {
      Matrix Ps = s.P(x, u) - s.P(u, x);
      if (!Ps.isZero(0)) R.add(KR(Ps, cdB[u], true));
    }
    for (int b = s1; b < N; ++b) {
      Matrix Qs = s.Q(x, b);
      if (!Qs.isZero(0)) R.add(KR(Qs, env.c[b], true));
    }
    for (int b = s0; b < s1; ++b) R.add(KR(s.ann(b), env.pair(env.Q, x, b)));
    e.R[x] = std::move(R);

    for (int y = 0; y < s0; ++y) {
      BlockOp P = KR(s.P(x, y), IdB);
      P.add(KR(s.I, env.pair(env.P, x, y)));
      for (int w = s0; w < s1; ++w) {
        BlockOp sum;
        for (int u = s1; u < N; ++u) sum.add(env.c[u], op.V(x, y, u, w) - op.V(x, y, w, u));
        P.add(KR(s.ann(w), sum, true));
      }
      e.pair(e.P, x, y) = std::move(P);

      BlockOp Q = KR(s.Q(x, y), IdB);
      Q.add(KR(s.I, env.pair(env.Q, x, y)));
      for (int u = s0; u < s1; ++u) {
        BlockOp sum;
        for (int r = s1; r < N; ++r) sum.add(env.c[r], qcoef(op, x, y, u, r));
        Q.add(KR(s.cre(u), sum, true));
      }
      for (int r = s0; r < s1; ++r) {
        BlockOp sum;
        for (int u = s1; u < N; ++u) sum.add(cdB[u], qcoef(op, x, y, u, r));
        Q.add(KR(s.ann(r), sum, true), -1.0);
      }
      e.pair(e.Q, x, y) = std::move(Q);
    }
  }

  BlockOp H = KR(s.H(), IdB);
  H.add(KR(s.I, env.H));
  for (int a = s0; a < s1; ++a) {
    BlockOp X = combine(env.S[a], env.R[a]);
    H.add(KR(s.cre(a), X, true));
    H.add(KR(s.ann(a), X.adjoint(), true), -1.0);
    for (int b = a + 1; b < s1; ++b) {
      BlockOp Pd = combine(env.pair(env.P, a, b), env.pair(env.P, b, a), -1.0);
      Matrix cc = s.cre(a) * s.cre(b);
      H.add(KR(cc, Pd));
      H.add(KR(cc.adjoint(), Pd.adjoint()));
    }
    for (int b = s0; b < s1; ++b) H.add(KR(s.cre(a) * s.ann(b), env.pair(env.Q, a, b)));
  }
  for (int x = s1; x < N; ++x) {
    Matrix Rs = s.R(x);
    if (Rs.isZero(0)) continue;
    H.add(KR(Rs, cdB[x], true), -1.0);
    H.add(KR(Rs.adjoint(), env.c[x], true));
  }
  e.H = std::move(H);
  return big;
}

// Isometry blocks from the fused space onto the new bond, one per fused sector.
struct Isometry {
  SpacePtr target;
  std::vector<Matrix> iso;      // per fused sector
  std::vector<int> sector_map;  // fused sector -> target sector
};

Isometry left_isometry(const FusedSpace& F, const SiteTensor& A) {
  Isometry I;
  I.target = A.right;
  const int ns = F.space->sectors();
  I.iso.assign(ns, Matrix());
  I.sector_map.assign(ns, -1);
  for (int s = 0; s < ns; ++s) {
    int j = A.right->find(F.space->charge(s));
    I.sector_map[s] = j;
    if (j >= 0) I.iso[s] = Matrix::Zero(F.space->dim(s), A.right->dim(j));
  }
  const Space& L = *F.block;
  for (int i = 0; i < L.sectors(); ++i)
    for (int a = 0; a < F.d(); ++a) {
      int s = F.sec(i, a);
      if (I.sector_map[s] < 0 || A.block(i, a).size() == 0) continue;
      I.iso[s].middleRows(F.off(i, a), L.dim(i)) = A.block(i, a);
    }
  return I;
}

Isometry right_isometry(const FusedSpace& F, const SiteTensor& B, const Charge& target) {
  Isometry I;
  I.target = complement_space(*B.left, target);
  const int ns = F.space->sectors();
  I.iso.assign(ns, Matrix());
  I.sector_map.assign(ns, -1);
  for (int s = 0; s < ns; ++s) {
    int kc = I.target->find(F.space->charge(s));
    I.sector_map[s] = kc;
    if (kc >= 0) I.iso[s] = Matrix::Zero(F.space->dim(s), I.target->dim(kc));
  }
  const Space& C = *F.block;
  for (int jc = 0; jc < C.sectors(); ++jc)
    for (int b = 0; b < F.d(); ++b) {
      int s = F.sec(jc, b);
      if (I.sector_map[s] < 0) continue;
      int k = B.left->find(target - F.space->charge(s));
      int j = B.right->find(target - C.charge(jc));
      if (k < 0 || j < 0 || B.right_sector(k, b) != j) continue;
      I.iso[s].middleRows(F.off(jc, b), C.dim(jc)) = B.block(k, b).transpose();
    }
  return I;
}

BlockOp project_op(const BlockOp& X, const Isometry& I) {
  if (!nonzero(X)) return BlockOp();
  BlockOp out(I.target, X.flux());
  for (int s = 0; s < X.sectors(); ++s) {
    if (!X.has(s)) continue;
    int s2 = X.row_of(s);
    int j = I.sector_map[s], j2 = I.sector_map[s2];
    if (j < 0 || j2 < 0) continue;
    out.at(j) += I.iso[s2].adjoint() * X.block(s) * I.iso[s];
  }
  return out;
}

void project_family(const std::vector<BlockOp>& in, std::vector<BlockOp>& out, const Isometry& I) {
  out.assign(in.size(), BlockOp());
  for (std::size_t k = 0; k < in.size(); ++k) out[k] = project_op(in[k], I);
}

}  // namespace

Environment boundary_environment(Side side, const SecondQuantizedOperator& op, const Charge& target) {
  (void)target;
  SpacePtr space = std::make_shared<Space>(std::vector<Charge>{Charge{}}, std::vector<int>{1});
  return empty_env(side, side == Side::left ? 0 : op.n(), op, space);
}

EnlargedBlock enlarge(const Environment& env, const std::vector<Charge>& site, const SecondQuantizedOperator& op) {
  if (env.modes != op.modes()) throw PreconditionError("enlarge: environment does not match operator");
  if (env.side == Side::left) {
    if (env.cut >= op.n()) throw PreconditionError("enlarge: no site right of the block");
    return enlarge_left(env, site, op);
  }
  if (env.cut <= 0) throw PreconditionError("enlarge: no site left of the block");
  return enlarge_right(env, site, op);
}

Environment project(const EnlargedBlock& big, const SiteTensor& A, const Charge& target) {
  const Environment& e = big.ops;
  Isometry I = e.side == Side::left ? left_isometry(big.space, A) : right_isometry(big.space, A, target);
  Environment out;
  out.side = e.side;
  out.cut = e.cut;
  out.p = e.p;
  out.modes = e.modes;
  out.space = I.target;
  out.built_with = e.built_with;
  out.H = project_op(e.H, I);
  if (out.H.space_ptr() == nullptr) out.H = BlockOp(out.space, Charge{});
  project_family(e.c, out.c, I);
  project_family(e.S, out.S, I);
  project_family(e.R, out.R, I);
  project_family(e.P, out.P, I);
  project_family(e.Q, out.Q, I);
  project_family(e.CC, out.CC, I);
  project_family(e.CD, out.CD, I);
  return out;
}

Environment extend_environment(const Environment& env, const SiteTensor& A, const SecondQuantizedOperator& op,
                               const Charge& target) {
  return project(enlarge(env, A.site, op), A, target);
}

void rotate_environment(Environment& env, const Matrix& W) {
  const int N = env.modes;
  if (W.rows() != N || W.cols() != N) throw PreconditionError("rotate_environment: dimension mismatch");
  std::vector<int> K;
  for (int a = 0; a < N; ++a) {
    double dev = 0;
    for (int b = 0; b < N; ++b) {
      Complex id = a == b ? 1.0 : 0.0;
      dev = std::max({dev, std::abs(W(a, b) - id), std::abs(W(b, a) - id)});
    }
    if (env.in_block(a)) {
      if (dev > 1e-10) throw PreconditionError("rotate_environment: rotation acts on block modes");
    } else if (dev > 0.0) {
      K.push_back(a);
    }
  }
  if (K.empty()) return;
  auto rotate_single = [&](std::vector<BlockOp>& f) {
    std::vector<BlockOp> g(K.size());
    for (std::size_t i = 0; i < K.size(); ++i)
      for (int a2 : K) g[i].add(f[a2], std::conj(W(a2, K[i])));
    for (std::size_t i = 0; i < K.size(); ++i) f[K[i]] = std::move(g[i]);
  };
  // first index by W^dag, second by W^dag (P) or W (Q)
  auto rotate_pair = [&](std::vector<BlockOp>& f, bool second_conj) {
    for (int b = 0; b < N; ++b) {
      if (env.in_block(b)) continue;
      std::vector<BlockOp> g(K.size());
      for (std::size_t i = 0; i < K.size(); ++i)
        for (int a2 : K) g[i].add(env.pair(f, a2, b), std::conj(W(a2, K[i])));
      for (std::size_t i = 0; i < K.size(); ++i) env.pair(f, K[i], b) = std::move(g[i]);
    }
    for (int a = 0; a < N; ++a) {
      if (env.in_block(a)) continue;
      std::vector<BlockOp> g(K.size());
      for (std::size_t i = 0; i < K.size(); ++i)
        for (int b2 : K) g[i].add(env.pair(f, a, b2), second_conj ? std::conj(W(b2, K[i])) : W(b2, K[i]));
      for (std::size_t i = 0; i < K.size(); ++i) env.pair(f, a, K[i]) = std::move(g[i]);
    }
  };
  rotate_single(env.S);
  rotate_single(env.R);
  rotate_pair(env.P, true);
  rotate_pair(env.Q, false);
  if (env.built_with.size()) env.built_with = env.built_with * W;
}

EffectiveHamiltonian::EffectiveHamiltonian(const Environment& left, const Environment& right,
                                           const SecondQuantizedOperator& op, const TwoSiteTensor& shape)
    : EffectiveHamiltonian(std::make_shared<const EnlargedBlock>(enlarge(left, shape.rows.site, op)),
                           std::make_shared<const EnlargedBlock>(enlarge(right, shape.rows.site, op)), op, shape) {}

EffectiveHamiltonian::EffectiveHamiltonian(std::shared_ptr<const EnlargedBlock> left,
                                           std::shared_ptr<const EnlargedBlock> right,
                                           const SecondQuantizedOperator& op, const TwoSiteTensor& shape)
    : left_(std::move(left)), right_(std::move(right)), shape_(shape), e_core_(op.e_core) {
  if (left_->ops.side != Side::left || right_->ops.side != Side::right || left_->ops.cut != right_->ops.cut)
    throw PreconditionError("EffectiveHamiltonian: environments do not meet at one cut");
  if (!(*left_->space.space == *shape_.rows.space) || !(*right_->space.space == *shape_.cols.space))
    throw PreconditionError("EffectiveHamiltonian: block spaces do not match the two-site tensor");
  assemble();
}

const BlockOp* EffectiveHamiltonian::keep(BlockOp op) {
  owned_.push_back(std::move(op));
  return &owned_.back();
}

void EffectiveHamiltonian::assemble() {
  const Environment& L = left_->ops;
  const Environment& R = right_->ops;
  const int N = L.modes;
  auto add = [&](const BlockOp* X, const BlockOp* Y, bool par) {
    if ((X && !nonzero(*X)) || (Y && !nonzero(*Y))) return;
    terms_.push_back({X, Y, par});
  };
  add(&L.H, nullptr, false);
  add(nullptr, &R.H, false);
  for (int a = 0; a < N; ++a) {
    if (!R.in_block(a)) continue;
    BlockOp X = combine(L.S[a], L.R[a]);
    if (nonzero(X) && nonzero(R.c[a])) {
      const BlockOp* cd = keep(R.c[a].adjoint());
      BlockOp mX = X;
      mX.scale(-1.0);
      add(keep(std::move(mX)), cd, true);
      add(keep(X.adjoint()), &R.c[a], true);
    }
    for (int b = 0; b < N; ++b) {
      if (!R.in_block(b)) continue;
      add(&L.pair(L.Q, a, b), &R.pair(R.CD, a, b), false);
      if (b <= a) continue;
      BlockOp Pd = combine(L.pair(L.P, a, b), L.pair(L.P, b, a), -1.0);
      if (!nonzero(Pd) || !nonzero(R.pair(R.CC, a, b))) continue;
      add(keep(Pd.adjoint()), keep(R.pair(R.CC, a, b).adjoint()), false);
      add(keep(std::move(Pd)), &R.pair(R.CC, a, b), false);
    }
  }
  for (int x = 0; x < N; ++x) {
    if (!L.in_block(x) || !nonzero(R.R[x]) || !nonzero(L.c[x])) continue;
    add(keep(L.c[x].adjoint()), &R.R[x], true);
    BlockOp mc = L.c[x];
    mc.scale(-1.0);
    add(keep(std::move(mc)), keep(R.R[x].adjoint()), true);
  }
}

TwoSiteTensor EffectiveHamiltonian::apply(const TwoSiteTensor& x) const {
  TwoSiteTensor out = shape_;
  const int ns = static_cast<int>(x.blocks.size());
  for (int s = 0; s < ns; ++s)
    if (out.blocks[s].size()) out.blocks[s] = e_core_ * x.blocks[s];
  const Space& rows = *x.rows.space;
  for (const Term& t : terms_) {
    for (int s = 0; s < ns; ++s) {
      const Matrix& th = x.blocks[s];
      if (th.size() == 0) continue;
      int c = x.col_of[s];
      int s2 = s, c2 = c;
      if (t.X) {
        if (!t.X->has(s)) continue;
        s2 = t.X->row_of(s);
      }
      if (t.Y) {
        if (!t.Y->has(c)) continue;
        c2 = t.Y->row_of(c);
      }
      if (x.col_of[s2] != c2) throw Error("EffectiveHamiltonian: term violates charge conservation");
      const double sign = t.parity && rows.charge(s).parity() ? -1.0 : 1.0;
      if (t.X && t.Y)
        out.blocks[s2].noalias() += sign * (t.X->block(s) * th) * t.Y->block(c).transpose();
      else if (t.X)
        out.blocks[s2].noalias() += sign * (t.X->block(s) * th);
      else if (t.Y)
        out.blocks[s2].noalias() += sign * (th * t.Y->block(c).transpose());
    }
  }
  return out;
}

Vector EffectiveHamiltonian::apply(const Vector& v) const {
  TwoSiteTensor x = shape_;
  x.assign(v);
  return apply(x).flatten();
}

double EffectiveHamiltonian::expectation(const TwoSiteTensor& x) const {
  Vector v = x.flatten();
  return (v.dot(apply(v))).real() / v.squaredNorm();
}

EigenResult solve_local_ground_state(const std::function<Vector(const Vector&)>& apply, const Vector& guess,
                                     double tol, int max_iter) {
  const int n = static_cast<int>(guess.size());
  if (n == 0) throw PreconditionError("solve_local_ground_state: empty problem");
  const int max_sub = std::min(n, 24);
  Vector x0 = guess;
  if (x0.norm() == 0) {
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> g;
    for (int k = 0; k < n; ++k) x0(k) = Complex(g(rng), g(rng));
  }
  x0.normalize();
  Matrix V(n, max_sub), AV(n, max_sub);
  int m = 0;
  V.col(0) = x0;
  AV.col(0) = apply(x0);
  m = 1;
  EigenResult best;
  best.residual = std::numeric_limits<double>::infinity();
  Vector prev;
  for (int it = 1;; ++it) {
    Matrix T = V.leftCols(m).adjoint() * AV.leftCols(m);
    T = 0.5 * (T + T.adjoint()).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> es(T);
    double theta = es.eigenvalues()(0);
    Vector y = es.eigenvectors().col(0);
    Vector x = V.leftCols(m) * y;
    Vector r = AV.leftCols(m) * y - theta * x;
    double res = r.norm();
    if (res < best.residual || it == 1) {
      best.theta = theta;
      best.vector = x;
      best.residual = res;
    }
    best.iterations = it;
    if (res <= tol * std::max(1.0, std::abs(theta)) || m == n) {
      best.theta = theta;
      best.vector = x;
      best.residual = res;
      best.converged = true;
      return best;
    }
    if (it >= max_iter) break;
    if (m == max_sub) {
      // restart with the current Ritz vector and the previous one
      Matrix Vn(n, 2);
      Vn.col(0) = x;
      int keep = 1;
      if (prev.size() == n) {
        Vector q = prev - x * x.dot(prev);
        if (q.norm() > 1e-8) {
          Vn.col(1) = q.normalized();
          keep = 2;
        }
      }
      for (int k = 0; k < keep; ++k) {
        V.col(k) = Vn.col(k);
        AV.col(k) = apply(Vn.col(k));
      }
      m = keep;
    }
    prev = x;
    Vector t = r;
    for (int pass = 0; pass < 2; ++pass) t -= V.leftCols(m) * (V.leftCols(m).adjoint() * t);
    double tn = t.norm();
    if (tn < 1e-14 * std::max(1.0, res)) {
      std::mt19937_64 rng(it);
      std::normal_distribution<double> g;
      for (int k = 0; k < n; ++k) t(k) = Complex(g(rng), g(rng));
      for (int pass = 0; pass < 2; ++pass) t -= V.leftCols(m) * (V.leftCols(m).adjoint() * t);
      tn = t.norm();
      if (tn < 1e-14) {
        best.converged = true;
        return best;
      }
    }
    V.col(m) = t / tn;
    AV.col(m) = apply(V.col(m));
    ++m;
  }
  throw EigensolverError("Davidson did not converge (residual " + std::to_string(best.residual) + ")", best);
}

DmrgEngine::DmrgEngine(SecondQuantizedOperator op, SymmetricMPS psi) { reset(std::move(op), std::move(psi)); }

void DmrgEngine::reset(SecondQuantizedOperator op, SymmetricMPS psi) {
  if (op.n() != psi.n || op.p() != psi.p) throw PreconditionError("DmrgEngine: operator and state sizes differ");
  if (psi.n < 2) throw PreconditionError("DmrgEngine: need at least two sites");
  op_ = std::move(op);
  psi_ = std::move(psi);
  left_.assign(psi_.n + 1, std::nullopt);
  right_.assign(psi_.n + 1, std::nullopt);
}

void DmrgEngine::load(Environment& env) {
  const Matrix& A = op_.mode_space.accumulated;
  if (env.built_with.size() && env.built_with.rows() == A.rows() && env.built_with == A) return;
  Matrix W = env.built_with.adjoint() * A;
  rotate_environment(env, W);
  env.built_with = A;
  ++lazy_rotations_;
}

const Environment& DmrgEngine::left_env(int cut) {
  if (cut < 0 || cut > psi_.n) throw PreconditionError("left_env: cut out of range");
  if (!left_[cut]) {
    if (cut == 0) {
      left_[0] = boundary_environment(Side::left, op_);
    } else {
      if (psi_.center < cut) throw PreconditionError("left_env: block is not left-normalised");
      const Environment& prev = left_env(cut - 1);
      left_[cut] = extend_environment(prev, psi_.sites[cut - 1], op_, psi_.target);
      ++rebuilds_;
    }
    left_[cut]->built_with = op_.mode_space.accumulated;
  }
  load(*left_[cut]);
  return *left_[cut];
}

const Environment& DmrgEngine::right_env(int cut) {
  if (cut < 0 || cut > psi_.n) throw PreconditionError("right_env: cut out of range");
  if (!right_[cut]) {
    if (cut == psi_.n) {
      right_[cut] = boundary_environment(Side::right, op_);
    } else {
      if (psi_.center >= cut) throw PreconditionError("right_env: block is not right-normalised");
      const Environment& prev = right_env(cut + 1);
      right_[cut] = extend_environment(prev, psi_.sites[cut], op_, psi_.target);
      ++rebuilds_;
    }
    right_[cut]->built_with = op_.mode_space.accumulated;
  }
  load(*right_[cut]);
  return *right_[cut];
}

namespace {

void drop_changed(std::vector<std::optional<Environment>>& left, std::vector<std::optional<Environment>>& right,
                  int lo, int hi) {
  for (int k = lo + 1; k < static_cast<int>(left.size()); ++k) left[k].reset();
  for (int k = 0; k <= hi && k < static_cast<int>(right.size()); ++k) right[k].reset();
}

}  // namespace

double DmrgEngine::energy() {
  if (psi_.center < 0) {
    canonicalize(psi_, 0);
    drop_changed(left_, right_, 0, psi_.n - 1);
  }
  const int m = psi_.center < psi_.n - 1 ? psi_.center : psi_.center - 1;
  TwoSiteTensor theta = block_two_site(psi_, m);
  EffectiveHamiltonian H(left_env(m), right_env(m + 2), op_, theta);
  return H.expectation(theta);
}

StepRecord DmrgEngine::step(int m, bool right_moving, const SweepOptions& opt, const LocalBasisHook& hook) {
  auto t0 = std::chrono::steady_clock::now();
  if (psi_.center != m && psi_.center != m + 1) {
    const int c = psi_.center;
    canonicalize(psi_, m);
    if (c < 0)
      drop_changed(left_, right_, 0, psi_.n - 1);
    else
      drop_changed(left_, right_, std::min(c, m), std::max(c, m));
  }
  StepRecord rec;
  rec.macro = opt.macro;
  rec.sweep = opt.sweep;
  rec.site = m;
  rec.right_moving = right_moving;

  TwoSiteTensor theta = block_two_site(psi_, m);
  const auto& site = theta.rows.site;
  auto L = std::make_shared<const EnlargedBlock>(enlarge(left_env(m), site, op_));
  auto R = std::make_shared<const EnlargedBlock>(enlarge(right_env(m + 2), site, op_));
  EigenResult eig;
  {
    EffectiveHamiltonian H(L, R, op_, theta);
    auto action = [&H](const Vector& v) { return H.apply(v); };
    try {
      eig = solve_local_ground_state(action, theta.flatten(), opt.tol, opt.max_iter);
    } catch (const EigensolverError& e) {
      eig = e.best();
    }
  }
  theta.assign(eig.vector.normalized());
  rec.energy = eig.theta;
  rec.iterations = eig.iterations;
  rec.converged = eig.converged;

  bool rotated = false;
  if (hook) {
    StepContext ctx{opt.macro, opt.sweep, m, right_moving, opt.policy};
    HookResult hr = hook(theta, ctx);
    rec.cost_before = hr.cost_before;
    rec.cost_after = hr.cost_after;
    if (hr.accepted) {
      theta = apply_two_site_gate(theta, gaussian_unitary(hr.U_loc));
      op_ = rotate_local(op_, hr.U_loc, m);
      rotated = true;
    }
  }
  rec.accepted_rotation = rotated;

  Decomposition dec = decompose_two_site(theta, opt.policy, right_moving);
  rec.eps_t = dec.eps;
  store_two_site(psi_, m, std::move(dec), right_moving);
  rec.D = psi_.bond_dim(m + 1);
  drop_changed(left_, right_, m, m + 1);

  if (right_moving && m + 2 < psi_.n) {
    auto big = rotated ? std::make_shared<const EnlargedBlock>(enlarge(left_env(m), site, op_)) : L;
    left_[m + 1] = project(*big, psi_.sites[m], psi_.target);
    left_[m + 1]->built_with = op_.mode_space.accumulated;
  } else if (!right_moving && m > 0) {
    auto big = rotated ? std::make_shared<const EnlargedBlock>(enlarge(right_env(m + 2), site, op_)) : R;
    right_[m + 1] = project(*big, psi_.sites[m + 1], psi_.target);
    right_[m + 1]->built_with = op_.mode_space.accumulated;
  }
  rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

std::vector<StepRecord> DmrgEngine::half_sweep(const SweepOptions& opt, bool right_moving,
                                               const LocalBasisHook& hook) {
  std::vector<StepRecord> out;
  const int n = psi_.n;
  if (right_moving)
    for (int m = 0; m + 1 < n; ++m) out.push_back(step(m, true, opt, hook));
  else
    for (int m = n - 2; m >= 0; --m) out.push_back(step(m, false, opt, hook));
  return out;
}

std::vector<StepRecord> DmrgEngine::sweep(const SweepOptions& opt, const LocalBasisHook& hook) {
  auto out = half_sweep(opt, true, hook);
  auto back = half_sweep(opt, false, hook);
  out.insert(out.end(), back.begin(), back.end());
  return out;
}

}  // namespace orbdmrg
