#include "orbdmrg/modeopt.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "orbdmrg/fock.hpp"

namespace orbdmrg {

namespace {

constexpr double kZeroSigma = 1e-13;
constexpr double kMaxCondition = 1e12;
constexpr double kUnitarity = 1e-12;

Matrix haar_unitary(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Matrix A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = Complex(g(rng), g(rng));
  Eigen::HouseholderQR<Matrix> qr(A);
  Matrix Q = qr.householderQ();
  Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j) {
    const double r = std::abs(R(j, j));
    if (r > 0) Q.col(j) *= R(j, j) / r;
  }
  return Q;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double sinc(double r) { return r == 0.0 ? 1.0 : std::sin(r) / r; }

}  // namespace

CostFunction cost_function_from_string(const std::string& s) {
  if (s == "f1") return CostFunction::f1;
  if (s == "f4") return CostFunction::f4;
  throw Error("unknown cost function '" + s + "'");
}

OptimizerMethod optimizer_method_from_string(const std::string& s) {
  if (s == "nelder_mead") return OptimizerMethod::nelder_mead;
  if (s == "conjugate_gradient") return OptimizerMethod::conjugate_gradient;
  throw Error("unknown optimiser '" + s + "'");
}

SymmetryRestriction symmetry_restriction_from_string(const std::string& s) {
  if (s == "none") return SymmetryRestriction::none;
  if (s == "spin_summed") return SymmetryRestriction::spin_summed;
  throw Error("unknown symmetry restriction '" + s + "'");
}

std::string to_string(CostFunction c) { return c == CostFunction::f1 ? "f1" : "f4"; }
std::string to_string(OptimizerMethod m) {
  return m == OptimizerMethod::nelder_mead ? "nelder_mead" : "conjugate_gradient";
}
std::string to_string(SymmetryRestriction r) { return r == SymmetryRestriction::none ? "none" : "spin_summed"; }

void LocalOptConfig::validate() const {
  if (!(delta_accept > 0.0)) throw PreconditionError("delta_accept must be positive");
  if (max_evals < 1) throw PreconditionError("max_evals must be positive");
  if (retry_budget < 0 || restarts < 0) throw PreconditionError("retry budget and restarts must be >= 0");
  if (!(radius > 0.0)) throw PreconditionError("radius must be positive");
}

int LocalGeometry::real_dims() const {
  switch (kind) {
    case GrassmannKind::full:
      return 2 * p * p;
    case GrassmannKind::per_species:
      return 2 * p;
    case GrassmannKind::spin_summed:
      return 2;
  }
  return 0;
}

Matrix LocalGeometry::restrict(const Matrix& G) const {
  if (kind == GrassmannKind::full) return G;
  Matrix out = Matrix::Zero(a(), b());
  if (kind == GrassmannKind::per_species) {
    for (int s = 0; s < p; ++s) {
      out(s, s) = G(s, s);
      out(p + s, s) = G(p + s, s);
    }
    return out;
  }
  Complex top = 0, bottom = 0;
  for (int s = 0; s < p; ++s) {
    top += G(s, s);
    bottom += G(p + s, s);
  }
  top /= static_cast<double>(p);
  bottom /= static_cast<double>(p);
  for (int s = 0; s < p; ++s) {
    out(s, s) = top;
    out(p + s, s) = bottom;
  }
  return out;
}

Matrix LocalGeometry::tangent(const Matrix& X, const Matrix& G) const {
  Matrix R = restrict(G);
  return restrict(R - X * (X.adjoint() * R));
}

Matrix LocalGeometry::retract(const Matrix& Y) const {
  if (kind == GrassmannKind::full) {
    Eigen::HouseholderQR<Matrix> qr(Y);
    return qr.householderQ() * Matrix::Identity(a(), b());
  }
  Matrix X = Matrix::Zero(a(), b());
  for (int s = 0; s < p; ++s) {
    const int src = kind == GrassmannKind::spin_summed ? 0 : s;
    const double r = std::hypot(std::abs(Y(src, src)), std::abs(Y(p + src, src)));
    if (r == 0.0) throw Error("retract: degenerate column");
    X(s, s) = Y(src, src) / r;
    X(p + s, s) = Y(p + src, src) / r;
  }
  return X;
}

Matrix LocalGeometry::chart(const RealVector& z) const {
  if (z.size() != real_dims()) throw PreconditionError("chart: parameter count mismatch");
  Matrix X = Matrix::Zero(a(), b());
  if (kind == GrassmannKind::full) {
    Matrix Z(p, p);
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) Z(i, j) = Complex(z(2 * (i * p + j)), z(2 * (i * p + j) + 1));
    Eigen::JacobiSVD<Matrix> svd(Z, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& S = svd.singularValues();
    Matrix cs = Matrix::Zero(p, p), sn = Matrix::Zero(p, p);
    for (int k = 0; k < p; ++k) {
      cs(k, k) = std::cos(S(k));
      sn(k, k) = std::sin(S(k));
    }
    X.topRows(p) = svd.matrixV() * cs * svd.matrixV().adjoint();
    X.bottomRows(p) = svd.matrixU() * sn * svd.matrixV().adjoint();
    return X;
  }
  for (int s = 0; s < p; ++s) {
    const int k = kind == GrassmannKind::spin_summed ? 0 : s;
    const Complex w(z(2 * k), z(2 * k + 1));
    const double r = std::abs(w);
    X(s, s) = std::cos(r);
    X(p + s, s) = w * sinc(r);
  }
  return X;
}

Matrix LocalGeometry::random_unitary(std::mt19937_64& rng) const {
  if (kind == GrassmannKind::full) return haar_unitary(a(), rng);
  Matrix U = Matrix::Zero(a(), a());
  Matrix u = haar_unitary(2, rng);
  for (int s = 0; s < p; ++s) {
    if (kind == GrassmannKind::per_species && s > 0) u = haar_unitary(2, rng);
    U(s, s) = u(0, 0);
    U(s, p + s) = u(0, 1);
    U(p + s, s) = u(1, 0);
    U(p + s, p + s) = u(1, 1);
  }
  return U;
}

Matrix LocalGeometry::random_right_factor(std::mt19937_64& rng) const {
  if (kind == GrassmannKind::full) return haar_unitary(b(), rng);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  Matrix V = Matrix::Zero(b(), b());
  const double common = phase(rng);
  for (int s = 0; s < p; ++s) V(s, s) = std::polar(1.0, kind == GrassmannKind::spin_summed ? common : phase(rng));
  return V;
}

bool LocalGeometry::is_structured(const Matrix& M, double tol) const {
  if (kind == GrassmannKind::full) return true;
  for (int i = 0; i < M.rows(); ++i)
    for (int j = 0; j < M.cols(); ++j)
      if (i % p != j % p && std::abs(M(i, j)) > tol) return false;
  if (kind == GrassmannKind::spin_summed)
    for (int s = 1; s < p; ++s)
      for (int x = 0; x < 2; ++x)
        for (int y = 0; y < 2; ++y)
          if (std::abs(M(x * p + s, y * p + s) - M(x * p, y * p)) > tol) return false;
  return true;
}

LocalGeometry local_geometry(const TwoSiteTensor& theta, SymmetryRestriction restriction) {
  LocalGeometry g;
  const int d = theta.d();
  while ((1 << g.p) < d) ++g.p;
  if (restriction == SymmetryRestriction::spin_summed) {
    g.kind = GrassmannKind::spin_summed;
    return g;
  }
  const auto& site = theta.rows.site;
  bool mixing = true;
  for (int s = 1; s < g.p; ++s) mixing = mixing && site[1 << (g.p - 1 - s)] == site[1 << (g.p - 1)];
  g.kind = mixing ? GrassmannKind::full : GrassmannKind::per_species;
  return g;
}

Matrix grassmann_selector(int a, int b) { return Matrix::Identity(a, b); }

Matrix householder_formula(const Matrix& X) {
  const int a = static_cast<int>(X.rows()), b = static_cast<int>(X.cols());
  const Matrix P = grassmann_selector(a, b);
  const Matrix D = X - P;
  const Matrix Y = Matrix::Identity(b, b) - X.adjoint() * P;
  return Matrix::Identity(a, a) - D * Y.partialPivLu().solve(D.adjoint());
}

HouseholderResult householder(const Matrix& X, int retry_budget, std::uint64_t seed, const LocalGeometry* geometry,
                              bool allow_trivial) {
  const int a = static_cast<int>(X.rows()), b = static_cast<int>(X.cols());
  if (a < b || b < 1) throw PreconditionError("householder: X must be a x b with a >= b >= 1");
  if ((X.adjoint() * X - Matrix::Identity(b, b)).cwiseAbs().maxCoeff() > 1e-10)
    throw PreconditionError("householder: X is not an isometry");
  HouseholderResult r;
  r.V = Matrix::Identity(b, b);
  const Matrix P = grassmann_selector(a, b);
  if (allow_trivial && (X - P).cwiseAbs().maxCoeff() == 0.0) {
    r.U = Matrix::Identity(a, a);
    return r;
  }
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt <= retry_budget; ++attempt) {
    if (attempt > 0) {
      r.V = geometry ? geometry->random_right_factor(rng) : haar_unitary(b, rng);
      r.retries = attempt;
    }
    const Matrix Xv = X * r.V;
    const Matrix Y = Matrix::Identity(b, b) - Xv.adjoint() * P;
    Eigen::JacobiSVD<Matrix> svd(Y);
    const auto& s = svd.singularValues();
    if (s(b - 1) == 0.0 || s(0) / s(b - 1) > kMaxCondition) continue;
    r.U = householder_formula(Xv);
    if (unitarity_error(r.U) <= kUnitarity) return r;
  }
  throw Error("householder: retry budget exhausted for a singular parametrisation");
}

Matrix householder_unitary(const Matrix& X, int retry_budget, std::uint64_t seed) {
  return householder(X, retry_budget, seed).U;
}

double cost_f1(const SchmidtSpectrum& s) {
  double f = 0;
  for (double x : s.sigma) f += x;
  return f;
}

double cost_f4(const SchmidtSpectrum& s) {
  double f = 0;
  for (double x : s.sigma) f += x * x * x * x;
  return -f;
}

double cost_value(const SchmidtSpectrum& s, CostFunction c) { return c == CostFunction::f1 ? cost_f1(s) : cost_f4(s); }

double local_cost(const TwoSiteTensor& theta, const Matrix& U, CostFunction c) {
  return cost_value(apply_two_site_gate(theta, gaussian_unitary(U)).spectrum(), c);
}

double isometry_cost(const TwoSiteTensor& theta, const Matrix& X, const Matrix& V, CostFunction c) {
  const Matrix U = householder_formula(X * V);
  return cost_value(apply_two_site_gate(theta, exterior_algebra(U.adjoint())).spectrum(), c);
}

namespace {

// Rows alpha*d + beta, columns a*D_r + b.
Matrix slabs(const TwoSiteTensor& t) {
  const Matrix nat = t.natural();
  const int d = t.d();
  const long Dl = nat.rows() / d, Dr = nat.cols() / d;
  Matrix out(d * d, Dl * Dr);
  for (int al = 0; al < d; ++al)
    for (int be = 0; be < d; ++be)
      for (long x = 0; x < Dl; ++x)
        for (long y = 0; y < Dr; ++y) out(al * d + be, x * Dr + y) = nat(x * d + al, be * Dr + y);
  return out;
}

}  // namespace

CostGradient cost_gradient(const TwoSiteTensor& theta, const Matrix& X, CostFunction c, int retry_budget,
                           std::uint64_t seed, const LocalGeometry* geometry) {
  const int a = static_cast<int>(X.rows()), b = static_cast<int>(X.cols());
  const int d2 = theta.d() * theta.d();
  if (1 << a != d2) throw PreconditionError("cost_gradient: X does not match the two-site block");
  HouseholderResult hr = householder(X, retry_budget, seed, geometry, false);
  const Matrix P = grassmann_selector(a, b);
  const Matrix Xv = X * hr.V;
  const Matrix Y = Matrix::Identity(b, b) - Xv.adjoint() * P;
  const auto lu = Y.partialPivLu();
  const Matrix Yinv = lu.inverse();
  const Matrix Z1 = (Xv - P) * Yinv;
  const Matrix Z2 = Yinv * (Xv - P).adjoint();
  const Matrix& U = hr.U;

  TwoSiteTensor rotated = apply_two_site_gate(theta, exterior_algebra(U.adjoint()));
  CostGradient out;
  out.V = hr.V;
  out.value = cost_value(rotated.spectrum(), c);

  TwoSiteTensor K = rotated;
  const double zero = kZeroSigma * rotated.norm();
  for (auto& B : K.blocks) {
    if (B.size() == 0) continue;
    if (c == CostFunction::f4) {
      B = (-4.0 * (B * (B.adjoint() * B))).eval();
    } else {
      Eigen::JacobiSVD<Matrix> svd(B, Eigen::ComputeThinU | Eigen::ComputeThinV);
      Matrix W = Matrix::Zero(B.rows(), B.cols());
      for (int k = 0; k < svd.singularValues().size(); ++k)
        if (svd.singularValues()(k) > zero) W += svd.matrixU().col(k) * svd.matrixV().col(k).adjoint();
      B = W;
    }
  }
  const Matrix Gamma = slabs(K) * slabs(theta).adjoint();

  std::vector<std::vector<int>> occ(d2);
  for (int x = 0; x < d2; ++x) occ[x] = occupied_modes(static_cast<unsigned>(x), a);
  Matrix Xi = Matrix::Zero(a, a);
  for (int x = 0; x < d2; ++x)
    for (int y = 0; y < d2; ++y) {
      if (Gamma(x, y) == 0.0 || occ[x].size() != occ[y].size() || occ[x].empty()) continue;
      const Complex w = std::conj(Gamma(x, y));
      for (int i : occ[x])
        for (int j : occ[y]) Xi(i, j) += w * gaussian_minor(U, occ[x], occ[y], i, j);
    }
  const Matrix H = Xi.transpose();
  const Matrix Gv = -H * Z2.adjoint() - H.adjoint() * Z1 - P * Z2 * H.adjoint() * Z1;
  out.gradient = Gv * hr.V.adjoint();
  return out;
}

CostGradient grad_f4(const TwoSiteTensor& theta, const Matrix& X, int retry_budget, std::uint64_t seed) {
  return cost_gradient(theta, X, CostFunction::f4, retry_budget, seed);
}

namespace {

class LocalOptimizer {
 public:
  LocalOptimizer(const TwoSiteTensor& theta, const LocalOptConfig& cfg, const LocalGeometry& geo)
      : theta_(theta), cfg_(cfg), geo_(geo), rng_(cfg.seed) {}

  double evaluate(const Matrix& X, Matrix* U_out = nullptr) {
    HouseholderResult hr = householder(X, cfg_.retry_budget, rng_(), &geo_);
    const double f = local_cost(theta_, hr.U, cfg_.cost);
    ++evals_;
    trace_.push_back(f);
    if (f < best_f_) {
      best_f_ = f;
      best_X_ = X;
    }
    if (U_out) *U_out = hr.U;
    return f;
  }

  CostGradient gradient(const Matrix& X) {
    CostGradient g = cost_gradient(theta_, X, cfg_.cost, cfg_.retry_budget, rng_(), &geo_);
    ++evals_;
    trace_.push_back(g.value);
    if (g.value < best_f_) {
      best_f_ = g.value;
      best_X_ = X;
    }
    return g;
  }

  void nelder_mead(const Matrix& base) {
    const int n = geo_.real_dims();
    struct Ctx {
      LocalOptimizer* self;
      const Matrix* base;
      std::exception_ptr error;
    } ctx{this, &base, nullptr};
    gsl_multimin_function fn;
    fn.n = n;
    fn.params = &ctx;
    fn.f = [](const gsl_vector* v, void* params) -> double {
      auto* c = static_cast<Ctx*>(params);
      if (c->error) return 1e300;
      try {
        RealVector z(v->size);
        for (std::size_t k = 0; k < v->size; ++k) z(k) = gsl_vector_get(v, k);
        return c->self->evaluate(*c->base * c->self->geo_.chart(z));
      } catch (...) {
        c->error = std::current_exception();
        return 1e300;
      }
    };
    gsl_vector* x = gsl_vector_calloc(n);
    gsl_vector* step = gsl_vector_alloc(n);
    gsl_vector_set_all(step, cfg_.radius);
    gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
    gsl_multimin_fminimizer_set(s, &fn, x, step);
    const int start = evals_;
    while (!ctx.error && evals_ - start < cfg_.max_evals) {
      if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
      if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), 1e-10) == GSL_SUCCESS) break;
    }
    gsl_multimin_fminimizer_free(s);
    gsl_vector_free(step);
    gsl_vector_free(x);
    if (ctx.error) std::rethrow_exception(ctx.error);
  }

  void conjugate_gradient(const Matrix& X0) {
    const int start = evals_;
    const int restart_every = std::max(1, geo_.real_dims() / 2);
    Matrix X = X0;
    CostGradient cg = gradient(X);
    double f = cg.value;
    Matrix g = geo_.tangent(X, cg.gradient);
    Matrix D = -g;
    double t = cfg_.radius / std::max(D.norm(), 1e-300);
    bool steepest = true;
    int stalls = 0;
    for (int it = 0; evals_ - start < cfg_.max_evals; ++it) {
      const double gg = g.squaredNorm();
      if (std::sqrt(gg) < 1e-12) break;
      double slope = (g.adjoint() * D).trace().real();
      if (slope >= 0) {
        D = -g;
        slope = -gg;
        steepest = true;
      }
      Matrix Xn;
      double fn = 0;
      bool ok = false;
      for (int k = 0; k < 40 && evals_ - start < cfg_.max_evals; ++k) {
        Xn = geo_.retract(X + t * D);
        fn = evaluate(Xn);
        if (fn <= f + 1e-4 * t * slope) {
          ok = true;
          break;
        }
        t *= 0.5;
      }
      if (!ok) {
        if (steepest) break;
        D = -g;
        steepest = true;
        t = cfg_.radius / std::max(D.norm(), 1e-300);
        continue;
      }
      CostGradient cn = gradient(Xn);
      Matrix gn = geo_.tangent(Xn, cn.gradient);
      Matrix Dt = geo_.tangent(Xn, D);
      Matrix gt = geo_.tangent(Xn, g);
      double beta = std::max(0.0, (gn.adjoint() * (gn - gt)).trace().real() / gg);
      if ((it + 1) % restart_every == 0) beta = 0.0;
      D = -gn + beta * Dt;
      steepest = beta == 0.0;
      stalls = f - fn < 1e-15 * std::max(1.0, std::abs(f)) ? stalls + 1 : 0;
      X = Xn;
      f = fn;
      g = gn;
      t *= 2.0;
      if (stalls >= 2) break;
    }
  }

  void run(OptimizerMethod method, double f0) {
    const Matrix P = grassmann_selector(geo_.a(), geo_.b());
    best_f_ = f0;
    best_X_ = P;
    auto once = [&](const Matrix& base) {
      if (method == OptimizerMethod::nelder_mead)
        nelder_mead(base);
      else
        conjugate_gradient(base * P);
    };
    once(Matrix::Identity(geo_.a(), geo_.a()));
    for (int r = 0; r < cfg_.restarts && best_f_ > f0 - cfg_.delta_accept; ++r) once(geo_.random_unitary(rng_));
  }

  const TwoSiteTensor& theta_;
  const LocalOptConfig& cfg_;
  const LocalGeometry& geo_;
  std::mt19937_64 rng_;
  int evals_ = 0;
  std::vector<double> trace_;
  double best_f_ = 0;
  Matrix best_X_;
};

}  // namespace

LocalOptResult optimize_local_basis(const TwoSiteTensor& theta, const LocalOptConfig& config,
                                    const std::optional<TruncationPolicy>& policy) {
  config.validate();
  const LocalGeometry geo = local_geometry(theta, config.restriction);
  LocalOptResult res;
  res.parameters = geo.real_dims();
  res.U_loc = Matrix::Identity(geo.a(), geo.a());
  const SchmidtSpectrum before = theta.spectrum();
  res.f_before = cost_value(before, config.cost);
  res.f_after = res.f_before;
  if (policy) {
    res.kept = kept_rank(before, *policy);
    res.eps_before = discarded_weight(before, res.kept);
    res.eps_after = res.eps_before;
  }
  LocalOptimizer opt(theta, config, geo);
  try {
    opt.run(config.method, res.f_before);
    res.evaluations = opt.evals_;
    res.trace = opt.trace_;
    if (opt.best_f_ > res.f_before - config.delta_accept) return res;
    Matrix U;
    const double f = opt.evaluate(opt.best_X_, &U);
    res.trace.push_back(f);
    ++res.evaluations;
    if (f > res.f_before - config.delta_accept) return res;
    if (!geo.is_structured(U, 1e-12)) throw Error("optimize_local_basis: rotation left the admissible class");
    if (policy) {
      const SchmidtSpectrum after = apply_two_site_gate(theta, gaussian_unitary(U)).spectrum();
      const double eps = discarded_weight(after, res.kept);
      if (eps > res.eps_before) {
        res.warning = "rejected: truncation error would increase";
        return res;
      }
      res.eps_after = eps;
    }
    res.U_loc = U;
    res.f_after = f;
    res.accepted = true;
  } catch (const Error& e) {
    res.failed = true;
    res.warning = e.what();
    res.U_loc = Matrix::Identity(geo.a(), geo.a());
    res.f_after = res.f_before;
    res.accepted = false;
  }
  return res;
}

LocalBasisHook make_local_basis_hook(const LocalOptConfig& config, LocalOptObserver observer) {
  config.validate();
  return [config, observer](const TwoSiteTensor& theta, const StepContext& ctx) {
    LocalOptConfig c = config;
    std::uint64_t s = splitmix(config.seed);
    for (std::uint64_t k : {std::uint64_t(ctx.macro), std::uint64_t(ctx.sweep), std::uint64_t(ctx.site),
                            std::uint64_t(ctx.right_moving)})
      s = splitmix(s ^ k);
    c.seed = s;
    LocalOptResult r = optimize_local_basis(theta, c, ctx.policy);
    if (observer) observer(r, ctx);
    HookResult h;
    h.accepted = r.accepted;
    h.U_loc = r.U_loc;
    h.cost_before = r.f_before;
    h.cost_after = r.f_after;
    return h;
  };
}

}  // namespace orbdmrg
