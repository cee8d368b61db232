#include "orbdmrg/block_op.hpp"

namespace orbdmrg {

BlockOp::BlockOp(SpacePtr space, Charge flux) : space_(std::move(space)), flux_(flux) {
  const int ns = space_->sectors();
  row_.resize(ns);
  blk_.resize(ns);
  for (int j = 0; j < ns; ++j) row_[j] = space_->find(space_->charge(j) + flux_);
}

BlockOp BlockOp::identity(const SpacePtr& space) {
  BlockOp I(space, Charge{});
  for (int j = 0; j < I.sectors(); ++j) I.blk_[j] = Matrix::Identity(space->dim(j), space->dim(j));
  return I;
}

BlockOp BlockOp::parity(const SpacePtr& space) {
  BlockOp P = identity(space);
  for (int j = 0; j < P.sectors(); ++j)
    if (space->charge(j).parity()) P.blk_[j] *= -1.0;
  return P;
}

Matrix& BlockOp::at(int col) {
  if (row_[col] < 0) throw Error("BlockOp: block not allowed by flux");
  if (blk_[col].size() == 0) blk_[col] = Matrix::Zero(space_->dim(row_[col]), space_->dim(col));
  return blk_[col];
}

bool BlockOp::zero() const {
  for (const auto& b : blk_)
    if (b.size()) return false;
  return true;
}

void BlockOp::add(const BlockOp& o, Complex s) {
  if (s == 0.0 || o.space_ == nullptr || o.zero()) return;
  if (space_ == nullptr) {
    *this = BlockOp(o.space_, o.flux_);
  }
  if (o.flux_ != flux_) {
    if (zero())
      *this = BlockOp(o.space_, o.flux_);
    else
      throw Error("BlockOp::add: flux mismatch");
  }
  for (int j = 0; j < sectors(); ++j)
    if (o.has(j)) {
      if (has(j))
        blk_[j] += s * o.blk_[j];
      else
        blk_[j] = s * o.blk_[j];
    }
}

BlockOp BlockOp::adjoint() const {
  if (!space_) return BlockOp();
  BlockOp a(space_, -flux_);
  for (int j = 0; j < sectors(); ++j)
    if (has(j)) a.blk_[row_[j]] = blk_[j].adjoint();
  return a;
}

void BlockOp::scale(Complex s) {
  for (auto& b : blk_)
    if (b.size()) b *= s;
}

void BlockOp::times_parity() {
  for (int j = 0; j < sectors(); ++j)
    if (has(j) && space_->charge(j).parity()) blk_[j] *= -1.0;
}

double BlockOp::max_abs() const {
  double m = 0.0;
  for (const auto& b : blk_)
    if (b.size()) m = std::max(m, b.cwiseAbs().maxCoeff());
  return m;
}

Matrix BlockOp::dense() const {
  if (!space_) throw Error("BlockOp::dense: operator has no space");
  const int D = space_->total_dim();
  Matrix M = Matrix::Zero(D, D);
  for (int j = 0; j < sectors(); ++j)
    if (has(j)) M.block(space_->offset(row_[j]), space_->offset(j), blk_[j].rows(), blk_[j].cols()) = blk_[j];
  return M;
}

BlockOp kron(const FusedSpace& F, const BlockOp& X, const Matrix& Y, bool parity) {
  if (X.space_ptr() == nullptr || X.zero()) return BlockOp();
  const int d = F.d();
  Charge fy;
  bool found = false;
  for (int a = 0; a < d && !found; ++a)
    for (int b = 0; b < d; ++b)
      if (Y(a, b) != 0.0) {
        fy = F.site[a] - F.site[b];
        found = true;
        break;
      }
  if (!found) return BlockOp();
  BlockOp out(F.space, X.flux() + fy);
  const Space& B = *F.block;
  for (int i = 0; i < X.sectors(); ++i) {
    if (!X.has(i)) continue;
    const int i2 = X.row_of(i);
    const Matrix& xb = X.block(i);
    const bool odd_block = parity && !F.site_first && B.charge(i).parity();
    for (int b = 0; b < d; ++b)
      for (int a = 0; a < d; ++a) {
        const Complex y = Y(a, b);
        if (y == 0.0) continue;
        if (F.site[a] - F.site[b] != fy) throw Error("kron: site operator has mixed charge");
        const bool odd_site = parity && F.site_first && F.site[b].parity();
        const double sign = (odd_block || odd_site) ? -1.0 : 1.0;
        const int cs = F.sec(i, b);
        if (out.row_of(cs) != F.sec(i2, a)) throw Error("kron: inconsistent sector");
        out.at(cs).block(F.off(i2, a), F.off(i, b), xb.rows(), xb.cols()) += (sign * y) * xb;
      }
  }
  return out;
}

BlockOp combine(const BlockOp& a, const BlockOp& b, Complex s) {
  BlockOp r = a;
  r.add(b, s);
  return r;
}

}  // namespace orbdmrg
