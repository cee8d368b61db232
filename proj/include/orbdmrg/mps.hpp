#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include <nlohmann/json.hpp>

#include "orbdmrg/block_op.hpp"
#include "orbdmrg/charge.hpp"
#include "orbdmrg/types.hpp"

namespace orbdmrg {

struct TruncationPolicy {
  double eps = 0.0;  // bound on the total discarded weight
  int D_min = 1;
  int D_max = std::numeric_limits<int>::max();
  bool renormalize = true;
  void validate() const;
};

struct SchmidtSpectrum {
  std::vector<double> sigma;  // non-increasing
  std::vector<Charge> sector;
  double weight() const;
};

// Space with the same sectors relabelled q -> total - q (content of the
// complementary block).
SpacePtr complement_space(const Space& s, const Charge& total);

// A[m] stored as blocks (left sector i, site state a) -> D_i x D_j with j the
// right sector of charge q_i + c_a. Bond labels count the particles to the left.
struct SiteTensor {
  SpacePtr left, right;
  std::vector<Charge> site;
  std::vector<Matrix> blocks;  // [i * d + a]; empty when not allowed

  int d() const { return static_cast<int>(site.size()); }
  int right_sector(int i, int a) const { return right->find(left->charge(i) + site[a]); }
  const Matrix& block(int i, int a) const { return blocks[i * d() + a]; }
  Matrix& block(int i, int a) { return blocks[i * d() + a]; }
  void allocate_zero();
};

// Two-site block Theta[(a, alpha), (beta, b)] with rows in fuse_left(bond m,
// site m) and columns in fuse_right(site m+1, content of bond m+2).
struct TwoSiteTensor {
  int m = 0;
  Charge target;
  FusedSpace rows, cols;
  SpacePtr left_bond, right_bond;  // bond labels (particles to the left)
  std::vector<int> col_of;         // rows sector -> cols sector, -1 if none
  std::vector<Matrix> blocks;      // per rows sector

  static TwoSiteTensor zeros(int m, const SpacePtr& left_bond, const SpacePtr& right_bond,
                             const std::vector<Charge>& site, const Charge& target);
  int size() const;
  double norm() const;
  Vector flatten() const;
  void assign(const Vector& v);
  // Dense (D_l d) x (d D_r) matrix, rows a*d + alpha, columns beta*D_r + b with
  // a, b running over the bond spaces in sector order.
  Matrix natural() const;
  void from_natural(const Matrix& M);
  SchmidtSpectrum spectrum() const;
  int d() const { return rows.d(); }
};

class SymmetricMPS {
 public:
  int n = 0;
  int p = 1;
  Symmetry symmetry = Symmetry::per_species;
  Charge target;
  std::vector<SiteTensor> sites;
  int center = -1;
  std::vector<SchmidtSpectrum> spectra;  // per cut m (between sites m and m+1)
  std::vector<double> trunc_error;       // per cut

  int d() const { return 1 << p; }
  const SpacePtr& bond(int k) const { return k < n ? sites[k].left : sites[n - 1].right; }
  int bond_dim(int k) const { return bond(k)->total_dim(); }
  int max_bond_dim() const;
  std::vector<Charge> site_charges() const;
};

SymmetricMPS product_mps(int n, int p, Symmetry sym, const std::vector<int>& states);

// Random MPS in the target sector with at most D states per bond sector.
SymmetricMPS random_mps(int n, int p, Symmetry sym, const Charge& target, int D, std::uint64_t seed);

void canonicalize(SymmetricMPS& psi, int m);
double norm(SymmetricMPS& psi);
void normalize(SymmetricMPS& psi);

TwoSiteTensor block_two_site(const SymmetricMPS& psi, int m);

struct Decomposition {
  SiteTensor left, right;
  SchmidtSpectrum spectrum;
  double eps = 0.0;
  int kept = 0;
};

// center_right: left tensor left-normalised, singular values absorbed to the right.
Decomposition decompose_two_site(const TwoSiteTensor& theta, const TruncationPolicy& policy,
                                 bool center_right = true);

// Replaces sites m, m+1 and records spectrum and truncation error at cut m.
void store_two_site(SymmetricMPS& psi, int m, Decomposition dec, bool center_right);

// Number of singular values kept by the policy for the given spectrum.
int kept_rank(const SchmidtSpectrum& s, const TruncationPolicy& policy);
double discarded_weight(const SchmidtSpectrum& s, int kept);

SchmidtSpectrum schmidt_spectrum(const SymmetricMPS& psi, int m);

TwoSiteTensor apply_two_site_gate(const TwoSiteTensor& theta, const Matrix& G);
// Blocks, applies G and splits again under the policy; centre ends at m+1.
double apply_two_site_gate(SymmetricMPS& psi, int m, const Matrix& G, const TruncationPolicy& policy);

// Fermionic single-site and two-site reduced density matrices.
Matrix one_site_rdm(const SymmetricMPS& psi, int q);
Matrix two_site_rdm(const SymmetricMPS& psi, int q, int r);
double von_neumann_entropy(const Matrix& rho);
RealMatrix mutual_information(const SymmetricMPS& psi);

nlohmann::json mps_to_json(const SymmetricMPS& psi);
SymmetricMPS mps_from_json(const nlohmann::json& j);

}  // namespace orbdmrg
