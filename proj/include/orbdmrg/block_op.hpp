#pragma once

#include <vector>

#include "orbdmrg/charge.hpp"
#include "orbdmrg/types.hpp"

namespace orbdmrg {

// Charge-block sparse square operator on a Space. Column sector j couples only
// to row sector with charge q_j + flux; blocks are stored per column sector and
// an empty matrix means a zero block.
class BlockOp {
 public:
  BlockOp() = default;
  BlockOp(SpacePtr space, Charge flux);
  static BlockOp identity(const SpacePtr& space);
  static BlockOp parity(const SpacePtr& space);

  const Space& space() const { return *space_; }
  const SpacePtr& space_ptr() const { return space_; }
  const Charge& flux() const { return flux_; }
  int sectors() const { return static_cast<int>(row_.size()); }
  int row_of(int col) const { return row_[col]; }
  bool has(int col) const { return blk_[col].size() != 0; }
  const Matrix& block(int col) const { return blk_[col]; }
  Matrix& at(int col);
  bool zero() const;

  // this += s * o; a zero o is ignored, otherwise fluxes must agree.
  void add(const BlockOp& o, Complex s = 1.0);
  BlockOp adjoint() const;
  void scale(Complex s);
  // X -> X P with P the parity of the column sector.
  void times_parity();
  double max_abs() const;
  Matrix dense() const;

 private:
  SpacePtr space_;
  Charge flux_;
  std::vector<int> row_;
  std::vector<Matrix> blk_;
};

// Product of a block operator and a site operator on a fused space. Left
// fusion: (X P_block^parity) (x) Y with the block parity of the column sector.
// Right fusion: (Y P_site^parity) (x) X with the site parity of the column state.
BlockOp kron(const FusedSpace& F, const BlockOp& X, const Matrix& Y, bool parity = false);

// A + s B without requiring matching allocation; fluxes must agree.
BlockOp combine(const BlockOp& a, const BlockOp& b, Complex s = 1.0);

}  // namespace orbdmrg
