#include "orbdmrg/mps.hpp"
#include "orbdmrg/oracle.hpp"

namespace orbdmrg {

Vector dense_embedding(const SymmetricMPS& psi) {
  if (psi.n * psi.p > 24) throw PreconditionError("dense_embedding: too many modes");
  Matrix state = Matrix::Ones(1, 1);
  for (const auto& A : psi.sites) {
    const int d = A.d();
    const Space& L = *A.left;
    const Space& R = *A.right;
    Matrix next = Matrix::Zero(state.rows() * d, R.total_dim());
    for (int i = 0; i < L.sectors(); ++i)
      for (int a = 0; a < d; ++a) {
        int j = A.right_sector(i, a);
        if (j < 0) continue;
        Matrix part = state.middleCols(L.offset(i), L.dim(i)) * A.block(i, a);
        for (int x = 0; x < state.rows(); ++x)
          next.row(x * d + a).segment(R.offset(j), R.dim(j)) += part.row(x);
      }
    state = std::move(next);
  }
  return state.col(0);
}

}  // namespace orbdmrg
