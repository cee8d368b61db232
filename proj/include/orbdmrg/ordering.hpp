#pragma once

#include <vector>

#include "orbdmrg/mps.hpp"
#include "orbdmrg/operators.hpp"

namespace orbdmrg {

// Site permutation: after applying it, position k holds the site previously at order[k].
struct OrbitalPermutation {
  std::vector<int> order;

  static OrbitalPermutation identity(int n);
  int size() const { return static_cast<int>(order.size()); }
  bool is_identity() const;
  OrbitalPermutation inverse() const;
  // this after first: position k holds the site originally at first.order[order[k]].
  OrbitalPermutation after(const OrbitalPermutation& first) const;
  // Cuts m of adjacent transpositions (m, m+1) which, applied in sequence, realise the order.
  std::vector<int> adjacent_swaps() const;
  void validate() const;
};

// sum_{q<r} I(order[q], order[r]) (q - r)^2
double seriation_cost(const RealMatrix& I, const std::vector<int>& order);

// Spectral seriation by the Fiedler vector of L = diag(I 1) - I, component by component.
OrbitalPermutation fiedler_order(const RealMatrix& I);

// 2p x 2p unitary exchanging the modes of two neighbouring sites.
Matrix swap_unitary(int p);

struct PermutationReport {
  int swaps = 0;
  double trunc_error = 0.0;  // summed discarded weight
};

// Realises the permutation by fermionic swap gates under the policy, rotating the
// coefficients and the mode bookkeeping along.
PermutationReport apply_permutation(SymmetricMPS& psi, SecondQuantizedOperator& op, const OrbitalPermutation& pi,
                                    const TruncationPolicy& policy);

}  // namespace orbdmrg
