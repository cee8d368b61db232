#pragma once

#include <array>
#include <compare>
#include <memory>
#include <string>
#include <vector>

namespace orbdmrg {

inline constexpr int kMaxSpecies = 4;

// Abelian U(1)^k label. Unused components stay zero.
struct Charge {
  std::array<int, kMaxSpecies> n{};

  Charge operator+(const Charge& o) const;
  Charge operator-(const Charge& o) const;
  Charge operator-() const;
  auto operator<=>(const Charge&) const = default;
  bool operator==(const Charge&) const = default;

  int total() const;
  int parity() const { return total() & 1; }
  std::string str() const;
};

// per_species: one U(1) per species. total_number: a single U(1) for the
// total particle number (needed when mode rotations mix species).
enum class Symmetry { per_species, total_number };

Symmetry symmetry_from_string(const std::string& s);
std::string to_string(Symmetry s);

// Charge of a single mode of the given species.
Charge mode_charge(int species, Symmetry sym);

// Charges of the d = 2^p occupation states of one site.
std::vector<Charge> site_charges(int p, Symmetry sym);

Charge target_charge(const std::vector<int>& per_species, Symmetry sym);

// Vector space split into charge sectors, laid out contiguously in sector order.
class Space {
 public:
  Space() = default;
  // Sectors are sorted by charge; duplicate charges are merged.
  Space(std::vector<Charge> charges, std::vector<int> dims);

  int sectors() const { return static_cast<int>(charge_.size()); }
  const Charge& charge(int s) const { return charge_[s]; }
  int dim(int s) const { return dim_[s]; }
  int offset(int s) const { return offset_[s]; }
  int total_dim() const { return total_; }
  int find(const Charge& q) const;
  bool operator==(const Space& o) const { return charge_ == o.charge_ && dim_ == o.dim_; }

 private:
  std::vector<Charge> charge_;
  std::vector<int> dim_, offset_;
  int total_ = 0;
};

using SpacePtr = std::shared_ptr<const Space>;

// Product of a block space with one site. Each (block sector i, site state a)
// pair occupies a contiguous row range of size dim(i) inside the fused sector of
// charge q_i + c_a. For a left fusion pairs are ordered (i major, a minor);
// for a right fusion (site first) they are ordered (a major, i minor).
struct FusedSpace {
  SpacePtr space;
  SpacePtr block;
  std::vector<Charge> site;
  bool site_first = false;
  std::vector<int> sector_of;  // [i * d + a]
  std::vector<int> offset_of;  // offset inside the fused sector

  int d() const { return static_cast<int>(site.size()); }
  int sec(int i, int a) const { return sector_of[i * d() + a]; }
  int off(int i, int a) const { return offset_of[i * d() + a]; }
};

FusedSpace fuse_left(const SpacePtr& block, const std::vector<Charge>& site);
FusedSpace fuse_right(const std::vector<Charge>& site, const SpacePtr& block);

}  // namespace orbdmrg
