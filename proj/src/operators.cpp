#include "orbdmrg/operators.hpp"

#include <array>
#include <cmath>
#include <istream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

namespace orbdmrg {

using nlohmann::json;

double SecondQuantizedOperator::hermiticity_error() const {
  const int N = modes();
  double e = (t - t.adjoint()).cwiseAbs().maxCoeff();
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      for (int k = 0; k < N; ++k)
        for (int l = 0; l < N; ++l) e = std::max(e, std::abs(V(i, j, k, l) - std::conj(V(k, l, i, j))));
  return e;
}

void SecondQuantizedOperator::validate() const {
  mode_space.validate();
  const std::size_t N = modes();
  if (t.rows() != static_cast<Eigen::Index>(N) || t.cols() != static_cast<Eigen::Index>(N))
    throw Error("operator: one-body tensor has wrong shape");
  if (v.size() != N * N * N * N) throw Error("operator: two-body tensor has wrong size");
  if (hermiticity_error() > 1e-12) throw Error("operator: coefficients are not Hermitian");
}

SecondQuantizedOperator zero_operator(int n, int p) {
  SecondQuantizedOperator op;
  op.mode_space = ModeSpace::identity(n, p);
  const std::size_t N = n * p;
  op.t = Matrix::Zero(N, N);
  op.v.assign(N * N * N * N, 0.0);
  return op;
}

namespace {

// new[.., a, ..] = sum_x A(x, a) old[.., x, ..] on slot `pos` of the 4-index tensor.
void transform_slot(std::vector<Complex>& v, int N, int pos, const Matrix& A) {
  std::size_t stride = 1;
  for (int k = pos + 1; k < 4; ++k) stride *= N;
  std::size_t outer = 1;
  for (int k = 0; k < pos; ++k) outer *= N;
  for (std::size_t o = 0; o < outer; ++o) {
    Eigen::Map<Matrix> blk(v.data() + o * N * stride, stride, N);
    blk = (blk * A).eval();
  }
}

// Same as transform_slot for A = 1 + A_loc + 1 with A_loc on modes [lo, lo + w).
void transform_slot_local(std::vector<Complex>& v, int N, int pos, const Matrix& A_loc, int lo) {
  const int w = static_cast<int>(A_loc.rows());
  std::size_t stride = 1;
  for (int k = pos + 1; k < 4; ++k) stride *= N;
  std::size_t outer = 1;
  for (int k = 0; k < pos; ++k) outer *= N;
  for (std::size_t o = 0; o < outer; ++o) {
    Eigen::Map<Matrix> blk(v.data() + o * N * stride + lo * stride, stride, w);
    blk = (blk * A_loc).eval();
  }
}

}  // namespace

SecondQuantizedOperator rotate_coefficients(const SecondQuantizedOperator& op, const Matrix& U) {
  const int N = op.modes();
  if (U.rows() != N || U.cols() != N) throw PreconditionError("rotate_coefficients: dimension mismatch");
  require_unitary(U, 1e-10, "rotate_coefficients");
  SecondQuantizedOperator out = op;
  if (U == Matrix::Identity(N, N)) return out;
  out.t = U.adjoint() * op.t * U;
  const Matrix Uc = U.conjugate();
  transform_slot(out.v, N, 0, Uc);
  transform_slot(out.v, N, 1, Uc);
  transform_slot(out.v, N, 2, U);
  transform_slot(out.v, N, 3, U);
  out.mode_space.accumulated = op.mode_space.accumulated * U;
  return out;
}

Matrix embed_local(const Matrix& U_loc, int m, int n, int p) {
  if (m < 0 || m > n - 2) throw Error("embed_local: site index out of range");
  if (U_loc.rows() != 2 * p || U_loc.cols() != 2 * p) throw Error("embed_local: local block must be 2p x 2p");
  Matrix U = Matrix::Identity(n * p, n * p);
  U.block(m * p, m * p, 2 * p, 2 * p) = U_loc;
  return U;
}

SecondQuantizedOperator rotate_local(const SecondQuantizedOperator& op, const Matrix& U_loc, int m) {
  const int N = op.modes();
  const int p = op.p();
  if (m < 0 || m > op.n() - 2) throw Error("rotate_local: site index out of range");
  if (U_loc.rows() != 2 * p || U_loc.cols() != 2 * p) throw Error("rotate_local: local block must be 2p x 2p");
  require_unitary(U_loc, 1e-10, "rotate_local");
  SecondQuantizedOperator out = op;
  if (U_loc == Matrix::Identity(2 * p, 2 * p)) return out;
  const int lo = m * p;
  out.t.middleCols(lo, 2 * p) = (out.t.middleCols(lo, 2 * p) * U_loc).eval();
  out.t.middleRows(lo, 2 * p) = (U_loc.adjoint() * out.t.middleRows(lo, 2 * p)).eval();
  const Matrix Uc = U_loc.conjugate();
  transform_slot_local(out.v, N, 0, Uc, lo);
  transform_slot_local(out.v, N, 1, Uc, lo);
  transform_slot_local(out.v, N, 2, U_loc, lo);
  transform_slot_local(out.v, N, 3, U_loc, lo);
  out.mode_space.accumulated.middleCols(lo, 2 * p) =
      (op.mode_space.accumulated.middleCols(lo, 2 * p) * U_loc).eval();
  return out;
}

namespace {

std::string strip(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int header_int(const std::string& header, const std::string& key, bool required, int line) {
  std::regex re("(^|[^A-Za-z0-9_])" + key + "\\s*=\\s*(-?[0-9]+)", std::regex::icase);
  std::smatch m;
  if (std::regex_search(header, m, re)) return std::stoi(m[2]);
  if (required) throw ParseError("FCIDUMP header lacks " + key, line);
  return 0;
}

struct HeaderRead {
  FcidumpHeader h;
  int line = 0;
};

HeaderRead read_header(std::istream& in) {
  std::string header, line;
  int lineno = 0;
  bool started = false, ended = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = strip(line);
    if (s.empty()) continue;
    if (!started) {
      if (s.size() < 4 || (s.compare(0, 4, "&FCI") != 0 && s.compare(0, 4, "&fci") != 0))
        throw ParseError("FCIDUMP must start with &FCI", lineno);
      started = true;
    }
    header += ' ' + s;
    if (s.find("&END") != std::string::npos || s.find("&end") != std::string::npos || s.back() == '/') {
      ended = true;
      break;
    }
  }
  if (!started) throw ParseError("empty FCIDUMP", lineno);
  if (!ended) throw ParseError("FCIDUMP header is not terminated", lineno);
  HeaderRead r;
  r.h.norb = header_int(header, "NORB", true, lineno);
  r.h.nelec = header_int(header, "NELEC", false, lineno);
  r.h.ms2 = header_int(header, "MS2", false, lineno);
  if (r.h.norb < 1) throw ParseError("NORB must be positive", lineno);
  r.line = lineno;
  return r;
}

}  // namespace

FcidumpHeader read_fcidump_header(std::istream& in) { return read_header(in).h; }

SecondQuantizedOperator parse_fcidump(std::istream& in, int p, std::optional<int> expected_norb) {
  HeaderRead hr = read_header(in);
  const int norb = hr.h.norb;
  if (expected_norb && *expected_norb != norb)
    throw Error("FCIDUMP NORB=" + std::to_string(norb) + " does not match requested " +
                std::to_string(*expected_norb) + " orbitals");
  SecondQuantizedOperator op = zero_operator(norb, p);
  std::map<std::array<int, 4>, double> eri;
  std::map<std::pair<int, int>, double> h;
  double core = 0.0;
  std::string line;
  int lineno = hr.line;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = strip(line);
    if (s.empty()) continue;
    for (char& ch : s)
      if (ch == 'D' || ch == 'd') ch = 'E';
    std::istringstream ls(s);
    double value;
    int i, j, k, l;
    if (!(ls >> value >> i >> j >> k >> l)) throw ParseError("malformed integral line", lineno);
    std::string rest;
    if (ls >> rest) throw ParseError("trailing tokens on integral line", lineno);
    for (int x : {i, j, k, l})
      if (x < 0 || x > norb) throw ParseError("orbital index out of range", lineno);
    if (i == 0 && j == 0 && k == 0 && l == 0) {
      core = value;
    } else if (k == 0 && l == 0) {
      if (i == 0) throw ParseError("malformed one-body index", lineno);
      if (j == 0) continue;  // orbital energy
      h[{std::min(i, j), std::max(i, j)}] = value;
    } else {
      if (i == 0 || j == 0 || k == 0 || l == 0) throw ParseError("malformed two-body index", lineno);
      std::array<int, 4> key{i, j, k, l};
      std::array<std::array<int, 4>, 8> perms{{{i, j, k, l},
                                              {j, i, k, l},
                                              {i, j, l, k},
                                              {j, i, l, k},
                                              {k, l, i, j},
                                              {l, k, i, j},
                                              {k, l, j, i},
                                              {l, k, j, i}}};
      key = *std::min_element(perms.begin(), perms.end());
      eri[key] = value;
    }
  }
  op.e_core = core;
  for (const auto& [ij, val] : h)
    for (int s = 0; s < p; ++s) {
      int a = (ij.first - 1) * p + s, b = (ij.second - 1) * p + s;
      op.t(a, b) = val;
      op.t(b, a) = val;
    }
  for (const auto& [key, val] : eri) {
    auto [i, j, k, l] = key;
    std::set<std::array<int, 4>> images{{i, j, k, l}, {j, i, k, l}, {i, j, l, k}, {j, i, l, k},
                                        {k, l, i, j}, {l, k, i, j}, {k, l, j, i}, {l, k, j, i}};
    for (const auto& im : images)
      for (int s = 0; s < p; ++s)
        for (int r = 0; r < p; ++r) {
          int I = (im[0] - 1) * p + s, J = (im[1] - 1) * p + s;
          int K = (im[2] - 1) * p + r, L = (im[3] - 1) * p + r;
          // (IJ|KL) -> c_I^dag c_K^dag c_L c_J
          op.V(I, K, J, L) += 0.5 * val;
        }
  }
  return op;
}

SecondQuantizedOperator build_hubbard(const HubbardParams& hp) {
  if (hp.n < 2) throw PreconditionError("build_hubbard: n must be >= 2");
  if (hp.p < 1) throw PreconditionError("build_hubbard: p must be >= 1");
  if (hp.gamma < 0) throw PreconditionError("build_hubbard: decay must be non-negative");
  const int n = hp.n, p = hp.p;
  SecondQuantizedOperator op = zero_operator(n, p);
  auto bond = [&](int q, int r) {
    for (int s = 0; s < p; ++s) {
      op.t(q * p + s, r * p + s) -= hp.t0;
      op.t(r * p + s, q * p + s) -= hp.t0;
    }
  };
  for (int q = 0; q + 1 < n; ++q) bond(q, q + 1);
  if (hp.boundary == Boundary::periodic && n > 2) bond(n - 1, 0);
  for (int q = 0; q < n; ++q)
    for (int s = 0; s < p; ++s)
      for (int r = s + 1; r < p; ++r) op.V(q * p + s, q * p + r, q * p + s, q * p + r) += hp.U0;
  if (std::isfinite(hp.gamma)) {
    for (int q = 0; q < n; ++q)
      for (int r = q + 1; r < n; ++r) {
        int dist = r - q;
        if (hp.boundary == Boundary::periodic) dist = std::min(dist, n - dist);
        const double w = hp.U0 * std::exp(-hp.gamma * dist);
        if (w == 0.0) continue;
        for (int s = 0; s < p; ++s)
          for (int u = 0; u < p; ++u) op.V(q * p + s, r * p + u, q * p + s, r * p + u) += w;
      }
  }
  return op;
}

json matrix_to_json(const Matrix& M) {
  json re = json::array(), im = json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r)
    for (Eigen::Index c = 0; c < M.cols(); ++c) {
      re.push_back(M(r, c).real());
      im.push_back(M(r, c).imag());
    }
  return {{"rows", M.rows()}, {"cols", M.cols()}, {"re", re}, {"im", im}};
}

Matrix matrix_from_json(const json& j) {
  const Eigen::Index rows = j.at("rows").get<Eigen::Index>(), cols = j.at("cols").get<Eigen::Index>();
  const auto& re = j.at("re");
  const auto& im = j.at("im");
  if (static_cast<Eigen::Index>(re.size()) != rows * cols || im.size() != re.size())
    throw Error("matrix json: size mismatch");
  Matrix M(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      M(r, c) = Complex(re[r * cols + c].get<double>(), im[r * cols + c].get<double>());
  return M;
}

json operator_to_json(const SecondQuantizedOperator& op) {
  json re = json::array(), im = json::array();
  for (const Complex& z : op.v) {
    re.push_back(z.real());
    im.push_back(z.imag());
  }
  return {{"format", "orbdmrg-operator"},
          {"version", 1},
          {"n", op.n()},
          {"p", op.p()},
          {"e_core", op.e_core},
          {"t", matrix_to_json(op.t)},
          {"v", {{"re", re}, {"im", im}}},
          {"mode_order", op.mode_space.mode_order},
          {"accumulated", matrix_to_json(op.mode_space.accumulated)}};
}

SecondQuantizedOperator operator_from_json(const json& j) {
  if (j.value("format", "") != "orbdmrg-operator") throw Error("not an operator file");
  if (j.value("version", 0) != 1) throw Error("unsupported operator file version");
  SecondQuantizedOperator op = zero_operator(j.at("n").get<int>(), j.at("p").get<int>());
  op.e_core = j.at("e_core").get<double>();
  op.t = matrix_from_json(j.at("t"));
  const auto& re = j.at("v").at("re");
  const auto& im = j.at("v").at("im");
  if (re.size() != op.v.size() || im.size() != op.v.size()) throw Error("operator file: v size mismatch");
  for (std::size_t k = 0; k < op.v.size(); ++k) op.v[k] = Complex(re[k].get<double>(), im[k].get<double>());
  op.mode_space.mode_order = j.at("mode_order").get<std::vector<int>>();
  op.mode_space.accumulated = matrix_from_json(j.at("accumulated"));
  op.validate();
  return op;
}

}  // namespace orbdmrg
