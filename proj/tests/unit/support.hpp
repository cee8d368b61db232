#pragma once

#include <random>

#include "orbdmrg/mps.hpp"
#include "orbdmrg/operators.hpp"
#include "orbdmrg/oracle.hpp"

namespace orbdmrg::testing {

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng);
Matrix random_unitary(int n, std::mt19937_64& rng);
Matrix random_isometry(int rows, int cols, std::mt19937_64& rng);

// Random Hermitian coefficients; with conserve_species, every term conserves the
// particle number of each species.
SecondQuantizedOperator random_operator(int n, int p, std::mt19937_64& rng, bool conserve_species = true,
                                        double two_body_scale = 0.5);

// Random unitary mixing only modes of equal species (u_s per species).
Matrix random_species_unitary(int n, int p, std::mt19937_64& rng);

// <psi| O |psi> for a ladder string on the full Fock space.
Complex expectation(const Vector& psi, const std::vector<Ladder>& ops, int modes);

// Fermionic reduced density matrix of a set of sites from the full state.
Matrix dense_rdm(const Vector& psi, int p, const std::vector<int>& sites);

// (|10> + |01>)/sqrt 2 on two spinless sites.
SymmetricMPS bell_pair();

}  // namespace orbdmrg::testing
