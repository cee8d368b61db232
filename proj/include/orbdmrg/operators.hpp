#pragma once

#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orbdmrg/fock.hpp"

namespace orbdmrg {

// H = e_core + sum t_ij c_i^dag c_j + sum v_ijkl c_i^dag c_j^dag c_l c_k
struct SecondQuantizedOperator {
  Matrix t;
  std::vector<Complex> v;
  double e_core = 0.0;
  ModeSpace mode_space;

  int n() const { return mode_space.n; }
  int p() const { return mode_space.p; }
  int modes() const { return mode_space.modes(); }
  std::size_t index(int i, int j, int k, int l) const {
    const std::size_t N = modes();
    return ((i * N + j) * N + k) * N + l;
  }
  Complex& V(int i, int j, int k, int l) { return v[index(i, j, k, l)]; }
  const Complex& V(int i, int j, int k, int l) const { return v[index(i, j, k, l)]; }

  double hermiticity_error() const;
  void validate() const;
};

SecondQuantizedOperator zero_operator(int n, int p);

// t -> U^dag t U, v -> (U^dag x U^dag) v (U x U); accumulated unitary -> A U.
SecondQuantizedOperator rotate_coefficients(const SecondQuantizedOperator& op, const Matrix& U);

// Rotation by embed_local(U_loc, m) touching only the affected slices.
SecondQuantizedOperator rotate_local(const SecondQuantizedOperator& op, const Matrix& U_loc, int m);

// 1 + U_loc + 1 on the 2p modes of sites m, m+1 (0-based).
Matrix embed_local(const Matrix& U_loc, int m, int n, int p);

// Chemists' notation integrals; p copies of every spatial orbital.
SecondQuantizedOperator parse_fcidump(std::istream& in, int p = 2,
                                      std::optional<int> expected_norb = std::nullopt);

struct FcidumpHeader {
  int norb = 0;
  int nelec = 0;
  int ms2 = 0;
};
FcidumpHeader read_fcidump_header(std::istream& in);

enum class Boundary { open, periodic };

struct HubbardParams {
  int n = 2;
  int p = 2;
  double t0 = 1.0;
  double U0 = 0.0;
  double gamma = std::numeric_limits<double>::infinity();
  Boundary boundary = Boundary::open;
};

SecondQuantizedOperator build_hubbard(const HubbardParams& params);

nlohmann::json operator_to_json(const SecondQuantizedOperator& op);
SecondQuantizedOperator operator_from_json(const nlohmann::json& j);

nlohmann::json matrix_to_json(const Matrix& M);
Matrix matrix_from_json(const nlohmann::json& j);

}  // namespace orbdmrg
