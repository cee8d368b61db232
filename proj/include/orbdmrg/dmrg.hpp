#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "orbdmrg/block_op.hpp"
#include "orbdmrg/fock.hpp"
#include "orbdmrg/mps.hpp"
#include "orbdmrg/operators.hpp"

namespace orbdmrg {

enum class Side { left, right };

// Renormalised operators of a block of contiguous sites. A left block holds
// the sites [0, cut), a right block the sites [cut, n). Mode-indexed families
// use global mode labels; entries that do not apply stay empty (zero).
//   c_x                    x in block
//   S_a  = sum t_ax c_x                       a open
//   R_a  = sum (v_axyz - v_xayz) c_x^dag c_z c_y
//   P_ab = sum v_abxy c_y c_x
//   Q_ab = sum q_abxy c_x^dag c_y, q_abxy = v_axby + v_xayb - v_axyb - v_xaby
//   CC_ab = c_a^dag c_b^dag (a < b), CD_ab = c_a^dag c_b   (right blocks only)
// Right blocks are indexed by their particle content rather than bond labels.
struct ComplementaryOperatorSet {
  Side side = Side::left;
  int cut = 0;
  int p = 1;
  int modes = 0;
  SpacePtr space;
  BlockOp H;
  std::vector<BlockOp> c, S, R;
  std::vector<BlockOp> P, Q, CC, CD;  // [a * modes + b]
  Matrix built_with;                  // accumulated unitary when last made consistent

  bool in_block(int mode) const { return side == Side::left ? mode < cut * p : mode >= cut * p; }
  bool open(int mode) const { return !in_block(mode); }
  BlockOp& pair(std::vector<BlockOp>& f, int a, int b) { return f[a * modes + b]; }
  const BlockOp& pair(const std::vector<BlockOp>& f, int a, int b) const { return f[a * modes + b]; }
};

using Environment = ComplementaryOperatorSet;

Environment boundary_environment(Side side, const SecondQuantizedOperator& op, const Charge& target = {});

// Absorbs site `cut` (left) or site `cut - 1` (right) through the isometry A.
Environment extend_environment(const Environment& env, const SiteTensor& A, const SecondQuantizedOperator& op,
                               const Charge& target = {});

// Open-index rotation S -> W^dag S, R -> W^dag R, P -> (W^dag x W^dag) P,
// Q -> W^dag Q W. W must act trivially on the block modes.
void rotate_environment(Environment& env, const Matrix& W);

// Enlarged block (block plus one site) before projection.
struct EnlargedBlock {
  FusedSpace space;
  Environment ops;  // families over the enlarged block, block space = space.space
};

EnlargedBlock enlarge(const Environment& env, const std::vector<Charge>& site, const SecondQuantizedOperator& op);
Environment project(const EnlargedBlock& big, const SiteTensor& A, const Charge& target = {});

// H_eff on the two-site block between a left environment at cut m and a right
// environment at cut m + 2.
class EffectiveHamiltonian {
 public:
  EffectiveHamiltonian(const Environment& left, const Environment& right, const SecondQuantizedOperator& op,
                       const TwoSiteTensor& shape);
  EffectiveHamiltonian(std::shared_ptr<const EnlargedBlock> left, std::shared_ptr<const EnlargedBlock> right,
                       const SecondQuantizedOperator& op, const TwoSiteTensor& shape);

  TwoSiteTensor apply(const TwoSiteTensor& x) const;
  Vector apply(const Vector& x) const;
  double expectation(const TwoSiteTensor& x) const;
  int dim() const { return shape_.size(); }
  const std::shared_ptr<const EnlargedBlock>& left() const { return left_; }
  const std::shared_ptr<const EnlargedBlock>& right() const { return right_; }
  int terms() const { return static_cast<int>(terms_.size()); }

 private:
  // X (x) Y with X on the left rows and Y on the right columns; a null pointer
  // is the identity. With parity the input row sector parity is applied.
  struct Term {
    const BlockOp* X;
    const BlockOp* Y;
    bool parity;
  };
  void assemble();
  const BlockOp* keep(BlockOp op);
  std::shared_ptr<const EnlargedBlock> left_, right_;
  TwoSiteTensor shape_;
  double e_core_ = 0.0;
  std::deque<BlockOp> owned_;
  std::vector<Term> terms_;
};

struct EigenResult {
  double theta = 0.0;
  Vector vector;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

class EigensolverError : public Error {
 public:
  EigensolverError(const std::string& what, EigenResult best) : Error(what), best_(std::move(best)) {}
  const EigenResult& best() const { return best_; }

 private:
  EigenResult best_;
};

// Davidson iteration for the lowest eigenpair of a Hermitian action.
// Converged when |H x - theta x| <= tol * max(1, |theta|).
EigenResult solve_local_ground_state(const std::function<Vector(const Vector&)>& apply, const Vector& guess,
                                     double tol = 1e-9, int max_iter = 400);

struct StepContext {
  int macro = 0;
  int sweep = 0;
  int site = 0;
  bool right_moving = true;
  TruncationPolicy policy;
};

struct HookResult {
  bool accepted = false;
  Matrix U_loc;
  double cost_before = 0.0;
  double cost_after = 0.0;
};

// Optional local basis optimisation applied to the optimised two-site block.
using LocalBasisHook = std::function<HookResult(const TwoSiteTensor& theta, const StepContext& ctx)>;

struct StepRecord {
  int macro = 0;
  int sweep = 0;
  int site = 0;
  bool right_moving = true;
  double energy = 0.0;
  int D = 0;
  double eps_t = 0.0;
  bool accepted_rotation = false;
  double cost_before = 0.0;
  double cost_after = 0.0;
  int iterations = 0;
  bool converged = true;
  double wall_time = 0.0;
};

struct SweepOptions {
  TruncationPolicy policy;
  double tol = 1e-9;
  int max_iter = 400;
  int macro = 0;
  int sweep = 0;
};

class DmrgEngine {
 public:
  DmrgEngine(SecondQuantizedOperator op, SymmetricMPS psi);

  const SymmetricMPS& state() const { return psi_; }
  const SecondQuantizedOperator& coefficients() const { return op_; }

  // Right pass over cuts 0..n-2 followed by a left pass back to cut 0.
  std::vector<StepRecord> sweep(const SweepOptions& opt, const LocalBasisHook& hook = {});
  // One half sweep in the given direction.
  std::vector<StepRecord> half_sweep(const SweepOptions& opt, bool right_moving, const LocalBasisHook& hook = {});

  // <psi|H|psi> / <psi|psi> from the environments at the current centre.
  double energy();

  // Replaces state and/or coefficients; cached environments are dropped.
  void reset(SecondQuantizedOperator op, SymmetricMPS psi);

  // Environment with pending rotations applied.
  const Environment& left_env(int cut);
  const Environment& right_env(int cut);

  // Counts of environment rebuilds and lazy rotations (diagnostics).
  int rebuilds() const { return rebuilds_; }
  int lazy_rotations() const { return lazy_rotations_; }

 private:
  StepRecord step(int m, bool right_moving, const SweepOptions& opt, const LocalBasisHook& hook);
  void load(Environment& env);

  SecondQuantizedOperator op_;
  SymmetricMPS psi_;
  std::vector<std::optional<Environment>> left_, right_;
  int rebuilds_ = 0;
  int lazy_rotations_ = 0;
};

}  // namespace orbdmrg
