#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "orbdmrg/dmrg.hpp"
#include "orbdmrg/mps.hpp"

namespace orbdmrg {

enum class CostFunction { f1, f4 };
enum class OptimizerMethod { nelder_mead, conjugate_gradient };
enum class SymmetryRestriction { none, spin_summed };

CostFunction cost_function_from_string(const std::string& s);
OptimizerMethod optimizer_method_from_string(const std::string& s);
SymmetryRestriction symmetry_restriction_from_string(const std::string& s);
std::string to_string(CostFunction c);
std::string to_string(OptimizerMethod m);
std::string to_string(SymmetryRestriction r);

struct LocalOptConfig {
  CostFunction cost = CostFunction::f1;
  OptimizerMethod method = OptimizerMethod::nelder_mead;
  SymmetryRestriction restriction = SymmetryRestriction::spin_summed;
  int max_evals = 400;        // per optimiser run
  double delta_accept = 1e-10;
  int retry_budget = 8;       // singular Householder parametrisations
  int restarts = 3;           // random restarts when the identity start stagnates
  double radius = 0.1;        // initial simplex / step size in chart units (rad)
  std::uint64_t seed = 0;
  void validate() const;
};

// Which two-site rotations are admissible. full: any U(2p) (requires a total
// number symmetry when p > 1); per_species: one 2x2 rotation per species;
// spin_summed: the same 2x2 rotation u for every species.
enum class GrassmannKind { full, per_species, spin_summed };

struct LocalGeometry {
  int p = 1;
  GrassmannKind kind = GrassmannKind::full;

  int a() const { return 2 * p; }
  int b() const { return p; }
  int real_dims() const;
  // Orthogonal projection of an ambient a x b matrix onto the structured subspace.
  Matrix restrict(const Matrix& G) const;
  // Horizontal part of a structured ambient gradient at the isometry X.
  Matrix tangent(const Matrix& X, const Matrix& G) const;
  // Structured isometry closest in spirit to Y (QR or column normalisation).
  Matrix retract(const Matrix& Y) const;
  // exp([[0, -Z^dag], [Z, 0]]) P for the structured Z encoded by real_dims() parameters.
  Matrix chart(const RealVector& z) const;
  Matrix random_unitary(std::mt19937_64& rng) const;      // structured a x a
  Matrix random_right_factor(std::mt19937_64& rng) const;  // structured b x b
  // 2p x 2p unitary in local mode order (site-major) for a structured isometry.
  bool is_structured(const Matrix& M, double tol) const;
};

LocalGeometry local_geometry(const TwoSiteTensor& theta, SymmetryRestriction restriction);

// The first b columns of the a x a identity.
Matrix grassmann_selector(int a, int b);

struct HouseholderResult {
  Matrix U;      // a x a unitary with leading columns X V
  Matrix V;      // b x b right factor used to avoid a singular parametrisation
  int retries = 0;
};

// U(X) = 1 - (X - P)(1 - X^dag P)^{-1}(X^dag - P^dag). X = P gives the identity.
// Ill-conditioned cases are re-represented by X V with random unitary V.
HouseholderResult householder(const Matrix& X, int retry_budget = 8, std::uint64_t seed = 0,
                              const LocalGeometry* geometry = nullptr, bool allow_trivial = true);
Matrix householder_unitary(const Matrix& X, int retry_budget = 8, std::uint64_t seed = 0);

// Formula evaluation for a fixed right factor, valid for any X (no unitarity).
Matrix householder_formula(const Matrix& X);

double cost_f1(const SchmidtSpectrum& s);
double cost_f4(const SchmidtSpectrum& s);
double cost_value(const SchmidtSpectrum& s, CostFunction c);

// Cost of g(U) theta.
double local_cost(const TwoSiteTensor& theta, const Matrix& U, CostFunction c);

// Cost of exterior_algebra(U(X V)^dag) theta for arbitrary X; f4 is -sum sigma^4
// of the unnormalised result.
double isometry_cost(const TwoSiteTensor& theta, const Matrix& X, const Matrix& V, CostFunction c);

struct CostGradient {
  double value = 0.0;
  Matrix gradient;  // d f / d Re X + i d f / d Im X
  Matrix V;         // right factor at which the derivative was taken
};

// Euclidean gradient of isometry_cost at X (with a right factor chosen as in householder()).
CostGradient cost_gradient(const TwoSiteTensor& theta, const Matrix& X, CostFunction c, int retry_budget = 8,
                           std::uint64_t seed = 0, const LocalGeometry* geometry = nullptr);
CostGradient grad_f4(const TwoSiteTensor& theta, const Matrix& X, int retry_budget = 8, std::uint64_t seed = 0);

struct LocalOptResult {
  Matrix U_loc;  // 2p x 2p; identity when rejected
  double f_before = 0.0;
  double f_after = 0.0;
  bool accepted = false;
  bool failed = false;  // optimiser error; state left unchanged
  std::string warning;
  int evaluations = 0;
  int parameters = 0;
  std::vector<double> trace;  // cost per evaluation
  int kept = 0;               // kept rank of the unrotated block under the policy
  double eps_before = 0.0;    // discarded weight at that rank, unrotated
  double eps_after = 0.0;     // and rotated
};

// Minimises the cost over admissible local rotations of theta. With a policy,
// a rotation that increases the discarded weight at the unrotated kept rank is rejected.
LocalOptResult optimize_local_basis(const TwoSiteTensor& theta, const LocalOptConfig& config,
                                    const std::optional<TruncationPolicy>& policy = std::nullopt);

using LocalOptObserver = std::function<void(const LocalOptResult&, const StepContext&)>;

// DMRG hook running optimize_local_basis with a seed derived from the step context.
LocalBasisHook make_local_basis_hook(const LocalOptConfig& config, LocalOptObserver observer = {});

}  // namespace orbdmrg
