#include "orbdmrg/charge.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

#include "orbdmrg/types.hpp"

namespace orbdmrg {

Charge Charge::operator+(const Charge& o) const {
  Charge r;
  for (int k = 0; k < kMaxSpecies; ++k) r.n[k] = n[k] + o.n[k];
  return r;
}

Charge Charge::operator-(const Charge& o) const {
  Charge r;
  for (int k = 0; k < kMaxSpecies; ++k) r.n[k] = n[k] - o.n[k];
  return r;
}

Charge Charge::operator-() const { return Charge{} - *this; }

int Charge::total() const { return std::accumulate(n.begin(), n.end(), 0); }

std::string Charge::str() const {
  std::ostringstream os;
  os << '(';
  for (int k = 0; k < kMaxSpecies; ++k) os << (k ? "," : "") << n[k];
  os << ')';
  return os.str();
}

Symmetry symmetry_from_string(const std::string& s) {
  if (s == "per_species") return Symmetry::per_species;
  if (s == "total_number") return Symmetry::total_number;
  throw Error("unknown symmetry '" + s + "'");
}

std::string to_string(Symmetry s) {
  return s == Symmetry::per_species ? "per_species" : "total_number";
}

Charge mode_charge(int species, Symmetry sym) {
  Charge q;
  if (sym == Symmetry::per_species) {
    if (species < 0 || species >= kMaxSpecies) throw Error("species index out of range");
    q.n[species] = 1;
  } else {
    q.n[0] = 1;
  }
  return q;
}

std::vector<Charge> site_charges(int p, Symmetry sym) {
  if (p < 1 || p > kMaxSpecies) throw Error("species count out of range");
  const int d = 1 << p;
  std::vector<Charge> out(d);
  for (int a = 0; a < d; ++a)
    for (int s = 0; s < p; ++s)
      if (a >> (p - 1 - s) & 1) out[a] = out[a] + mode_charge(s, sym);
  return out;
}

Charge target_charge(const std::vector<int>& per_species, Symmetry sym) {
  Charge q;
  for (std::size_t s = 0; s < per_species.size(); ++s) {
    Charge m = mode_charge(static_cast<int>(s), sym);
    for (int k = 0; k < kMaxSpecies; ++k) q.n[k] += m.n[k] * per_species[s];
  }
  return q;
}

Space::Space(std::vector<Charge> charges, std::vector<int> dims) {
  if (charges.size() != dims.size()) throw Error("Space: charge/dim size mismatch");
  std::map<Charge, int> merged;
  for (std::size_t k = 0; k < charges.size(); ++k)
    if (dims[k] > 0) merged[charges[k]] += dims[k];
  for (const auto& [q, dm] : merged) {
    charge_.push_back(q);
    dim_.push_back(dm);
    offset_.push_back(total_);
    total_ += dm;
  }
}

int Space::find(const Charge& q) const {
  auto it = std::lower_bound(charge_.begin(), charge_.end(), q);
  if (it == charge_.end() || *it != q) return -1;
  return static_cast<int>(it - charge_.begin());
}

namespace {

FusedSpace fuse(const SpacePtr& block, const std::vector<Charge>& site, bool site_first) {
  FusedSpace f;
  f.block = block;
  f.site = site;
  f.site_first = site_first;
  const int nb = block->sectors();
  const int d = static_cast<int>(site.size());
  std::map<Charge, int> dims;
  for (int i = 0; i < nb; ++i)
    for (int a = 0; a < d; ++a) dims[block->charge(i) + site[a]] += block->dim(i);
  std::vector<Charge> qs;
  std::vector<int> ds;
  for (const auto& [q, dm] : dims) {
    qs.push_back(q);
    ds.push_back(dm);
  }
  auto sp = std::make_shared<Space>(qs, ds);
  f.sector_of.assign(nb * d, -1);
  f.offset_of.assign(nb * d, 0);
  std::vector<int> fill(sp->sectors(), 0);
  auto place = [&](int i, int a) {
    int s = sp->find(block->charge(i) + site[a]);
    f.sector_of[i * d + a] = s;
    f.offset_of[i * d + a] = fill[s];
    fill[s] += block->dim(i);
  };
  if (site_first) {
    for (int a = 0; a < d; ++a)
      for (int i = 0; i < nb; ++i) place(i, a);
  } else {
    for (int i = 0; i < nb; ++i)
      for (int a = 0; a < d; ++a) place(i, a);
  }
  f.space = sp;
  return f;
}

}  // namespace

FusedSpace fuse_left(const SpacePtr& block, const std::vector<Charge>& site) {
  return fuse(block, site, false);
}

FusedSpace fuse_right(const std::vector<Charge>& site, const SpacePtr& block) {
  return fuse(block, site, true);
}

}  // namespace orbdmrg
