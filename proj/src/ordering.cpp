#include "orbdmrg/ordering.hpp"

#include <algorithm>
#include <numeric>

#include "orbdmrg/fock.hpp"

namespace orbdmrg {

OrbitalPermutation OrbitalPermutation::identity(int n) {
  OrbitalPermutation p;
  p.order.resize(n);
  std::iota(p.order.begin(), p.order.end(), 0);
  return p;
}

bool OrbitalPermutation::is_identity() const {
  for (int k = 0; k < size(); ++k)
    if (order[k] != k) return false;
  return true;
}

void OrbitalPermutation::validate() const {
  std::vector<char> seen(order.size(), 0);
  for (int x : order) {
    if (x < 0 || x >= size() || seen[x]) throw PreconditionError("permutation is not a bijection");
    seen[x] = 1;
  }
}

OrbitalPermutation OrbitalPermutation::inverse() const {
  validate();
  OrbitalPermutation inv;
  inv.order.resize(order.size());
  for (int k = 0; k < size(); ++k) inv.order[order[k]] = k;
  return inv;
}

OrbitalPermutation OrbitalPermutation::after(const OrbitalPermutation& first) const {
  if (first.size() != size()) throw PreconditionError("permutation size mismatch");
  OrbitalPermutation out;
  out.order.resize(order.size());
  for (int k = 0; k < size(); ++k) out.order[k] = first.order[order[k]];
  return out;
}

std::vector<int> OrbitalPermutation::adjacent_swaps() const {
  validate();
  std::vector<int> cur(order.size());
  std::iota(cur.begin(), cur.end(), 0);
  std::vector<int> swaps;
  for (int k = 0; k < size(); ++k) {
    int j = static_cast<int>(std::find(cur.begin(), cur.end(), order[k]) - cur.begin());
    for (int i = j - 1; i >= k; --i) {
      swaps.push_back(i);
      std::swap(cur[i], cur[i + 1]);
    }
  }
  return swaps;
}

double seriation_cost(const RealMatrix& I, const std::vector<int>& order) {
  double c = 0;
  const int n = static_cast<int>(order.size());
  for (int q = 0; q < n; ++q)
    for (int r = q + 1; r < n; ++r) c += I(order[q], order[r]) * double(r - q) * double(r - q);
  return c;
}

namespace {

std::vector<int> order_component(const RealMatrix& I, const std::vector<int>& nodes) {
  const int k = static_cast<int>(nodes.size());
  if (k <= 2) return nodes;
  RealMatrix L = RealMatrix::Zero(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      if (i != j) {
        L(i, j) = -I(nodes[i], nodes[j]);
        L(i, i) += I(nodes[i], nodes[j]);
      }
  Eigen::SelfAdjointEigenSolver<RealMatrix> es(L);
  RealVector f = es.eigenvectors().col(1);
  const double scale = f.cwiseAbs().maxCoeff();
  std::vector<int> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (std::abs(f(a) - f(b)) <= 1e-12 * scale) return nodes[a] < nodes[b];
    return f(a) < f(b);
  });
  std::vector<int> out(k);
  for (int i = 0; i < k; ++i) out[i] = nodes[idx[i]];
  return out;
}

}  // namespace

OrbitalPermutation fiedler_order(const RealMatrix& I) {
  const int n = static_cast<int>(I.rows());
  if (I.cols() != n) throw PreconditionError("fiedler_order: matrix is not square");
  const double scale = std::max(1.0, I.cwiseAbs().maxCoeff());
  for (int q = 0; q < n; ++q)
    for (int r = 0; r < n; ++r) {
      if (std::abs(I(q, r) - I(r, q)) > 1e-10 * scale) throw PreconditionError("fiedler_order: matrix not symmetric");
      if (q != r && I(q, r) < -1e-12 * scale) throw PreconditionError("fiedler_order: negative weight");
    }
  const double edge = 1e-14 * scale;
  std::vector<int> comp(n, -1);
  std::vector<std::vector<int>> comps;
  for (int s = 0; s < n; ++s) {
    if (comp[s] >= 0) continue;
    std::vector<int> nodes{s}, stack{s};
    comp[s] = static_cast<int>(comps.size());
    while (!stack.empty()) {
      int x = stack.back();
      stack.pop_back();
      for (int y = 0; y < n; ++y)
        if (y != x && comp[y] < 0 && I(x, y) > edge) {
          comp[y] = comp[s];
          nodes.push_back(y);
          stack.push_back(y);
        }
    }
    std::sort(nodes.begin(), nodes.end());
    comps.push_back(nodes);
  }
  OrbitalPermutation out;
  for (const auto& nodes : comps) {
    std::vector<int> fwd = order_component(I, nodes);
    std::vector<int> rev(fwd.rbegin(), fwd.rend());
    const double cf = seriation_cost(I, fwd), cr = seriation_cost(I, rev);
    const double tol = 1e-12 * std::max(1.0, std::abs(cf));
    const bool take_rev = cr < cf - tol || (std::abs(cr - cf) <= tol && rev < fwd);
    const auto& chosen = take_rev ? rev : fwd;
    out.order.insert(out.order.end(), chosen.begin(), chosen.end());
  }
  return out;
}

Matrix swap_unitary(int p) {
  Matrix U = Matrix::Zero(2 * p, 2 * p);
  U.topRightCorner(p, p) = Matrix::Identity(p, p);
  U.bottomLeftCorner(p, p) = Matrix::Identity(p, p);
  return U;
}

PermutationReport apply_permutation(SymmetricMPS& psi, SecondQuantizedOperator& op, const OrbitalPermutation& pi,
                                    const TruncationPolicy& policy) {
  if (pi.size() != psi.n || op.n() != psi.n) throw PreconditionError("apply_permutation: size mismatch");
  PermutationReport rep;
  const Matrix S = swap_unitary(psi.p);
  const Matrix G = gaussian_unitary(S);
  for (int m : pi.adjacent_swaps()) {
    rep.trunc_error += apply_two_site_gate(psi, m, G, policy);
    op = rotate_local(op, S, m);
    auto& order = op.mode_space.mode_order;
    for (int s = 0; s < psi.p; ++s) std::swap(order[m * psi.p + s], order[(m + 1) * psi.p + s]);
    ++rep.swaps;
  }
  return rep;
}

}  // namespace orbdmrg
