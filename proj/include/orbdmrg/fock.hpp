#pragma once

#include <vector>

#include "orbdmrg/types.hpp"

namespace orbdmrg {

// Orbital count, species per orbital and the bookkeeping that ties the current
// working modes back to the initial physical modes.
struct ModeSpace {
  int n = 0;
  int p = 1;
  std::vector<int> mode_order;  // lattice position -> initial mode label
  Matrix accumulated;           // current modes expressed in initial modes

  static ModeSpace identity(int n, int p);
  int d() const { return 1 << p; }
  int modes() const { return n * p; }
  void validate() const;
};

// Single-site Jordan-Wigner operators in the basis |x>, x = occupation bits of
// the p species with species 0 most significant.
struct SiteOperators {
  int p = 0;
  int d = 0;
  std::vector<Matrix> c, cdag, n;
  Matrix parity;
  Matrix identity;
};

SiteOperators site_operators(int p);

// Annihilator of mode k on the Fock space of `modes` modes (dense, 2^modes).
Matrix fock_annihilator(int modes, int k);

// Sorted list of occupied modes of bitstring x over `modes` modes.
std::vector<int> occupied_modes(unsigned x, int modes);

// Direct sum of exterior powers of a general square matrix M in the
// occupation basis: entry (x, y) = det M[I(x), I(y)].
Matrix exterior_algebra(const Matrix& M);

// g(U) = exterior_algebra(U^dag). Requires unitary U (1e-10).
Matrix gaussian_unitary(const Matrix& U);

// d g(U)_{I,J} / d (U^dag)_{i,j} as a signed minor of U^dag.
Complex gaussian_minor(const Matrix& U, std::vector<int> I, std::vector<int> J, int i, int j);

}  // namespace orbdmrg
