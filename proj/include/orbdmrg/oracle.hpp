#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "orbdmrg/operators.hpp"

namespace orbdmrg {

class SymmetricMPS;

using SparseMatrix = Eigen::SparseMatrix<Complex>;

// Particle numbers selecting a block: one entry per species, a single entry for
// the total number, or empty for the whole Fock space.
using SectorCounts = std::vector<int>;

// Hamiltonian on (a sector of) the Fock space of all np modes. Basis states are
// bitstrings with mode 0 as the most significant bit.
struct FockSpaceOperator {
  int n = 0;
  int p = 0;
  SectorCounts sector;
  std::vector<std::uint32_t> basis;
  SparseMatrix H;  // includes e_core on the diagonal

  int dim() const { return static_cast<int>(basis.size()); }
  int locate(std::uint32_t x) const;
  // Dense vector over all 2^(np) states from a sector vector.
  Vector embed(const Vector& sector_vector) const;
  Vector restrict(const Vector& full) const;
};

std::vector<std::uint32_t> sector_basis(int n, int p, const SectorCounts& counts);

FockSpaceOperator build_full_hamiltonian(const SecondQuantizedOperator& op,
                                         const SectorCounts& sector = {});

struct GroundState {
  double energy = 0.0;
  Vector vector;  // over the sector basis
  double residual = 0.0;
};

GroundState exact_ground_state(const FockSpaceOperator& H, bool iterative = false);
GroundState exact_ground_state(const SecondQuantizedOperator& op, const SectorCounts& sector);

// Lowest k eigenvalues of the sector (dense diagonalisation, small sectors only).
std::vector<double> exact_low_spectrum(const FockSpaceOperator& H, int k);

// A product of ladder operators; ops[0] is leftmost, the last one acts first.
struct Ladder {
  int mode;
  bool dagger;
};

// Applies the string to basis state x; returns false when the result vanishes.
bool apply_string(const std::vector<Ladder>& ops, int modes, std::uint32_t& x, double& sign);

// Dense 2^modes matrix of a ladder string.
Matrix string_operator(const std::vector<Ladder>& ops, int modes);

// Dense 2^modes matrix of exp(sum_ij (ln U^dag)_ij c_i^dag c_j); oracle for g(U).
Matrix gaussian_unitary_by_exponential(const Matrix& U);

struct HartreeFockOptions {
  int max_iterations = 1000;
  double tolerance = 1e-10;
  int diis_size = 8;
};

struct HartreeFockResult {
  Matrix U;  // np x np, of the form u (x) 1_p in site-major mode order
  double energy = 0.0;
  bool converged = false;
  bool fallback = false;
  int iterations = 0;
  double idempotency_error = 0.0;
  Matrix density;  // spin-orbital <c_a^dag c_b>
};

// Restricted closed-shell SCF; `occupied` particles in every species.
HartreeFockResult hartree_fock_basis(const SecondQuantizedOperator& op, int occupied,
                                     const HartreeFockOptions& opt = {});

// Energy of the Slater determinant with one-particle density gamma_ab = <c_a^dag c_b>.
double determinant_energy(const SecondQuantizedOperator& op, const Matrix& gamma);

// Contraction of the whole MPS into a d^n vector.
Vector dense_embedding(const SymmetricMPS& psi);

}  // namespace orbdmrg
