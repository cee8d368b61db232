#include "orbdmrg/driver.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "orbdmrg/oracle.hpp"

namespace orbdmrg {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  int x = 0;
  const std::string s = trim(v);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw Error("config " + key + ": expected an integer, got '" + v + "'");
  return x;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const std::string s = trim(v);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw Error("config " + key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

double parse_double(const std::string& key, const std::string& v) {
  const std::string s = trim(v);
  if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
  try {
    std::size_t pos = 0;
    double x = std::stod(s, &pos);
    if (pos == s.size()) return x;
  } catch (const std::exception&) {
  }
  throw Error("config " + key + ": expected a number, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  const std::string s = trim(v);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw Error("config " + key + ": expected true/false, got '" + v + "'");
}

std::vector<int> parse_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::string s = trim(v);
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, item));
  return out;
}

std::string fmt(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

std::string fmt(bool b) { return b ? "true" : "false"; }

std::string fmt_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + std::to_string(v[k]);
  return s;
}

std::string to_string(ModelSource s) {
  switch (s) {
    case ModelSource::hubbard:
      return "hubbard";
    case ModelSource::fcidump:
      return "fcidump";
    case ModelSource::operator_file:
      return "operator";
  }
  return "";
}

ModelSource model_source_from_string(const std::string& s) {
  if (s == "hubbard") return ModelSource::hubbard;
  if (s == "fcidump") return ModelSource::fcidump;
  if (s == "operator") return ModelSource::operator_file;
  throw Error("config model.source: unknown source '" + s + "'");
}

std::string to_string(InitialBasis b) {
  switch (b) {
    case InitialBasis::identity:
      return "identity";
    case InitialBasis::one_body:
      return "one_body";
    case InitialBasis::hartree_fock:
      return "hartree_fock";
    case InitialBasis::file:
      return "file";
    case InitialBasis::random:
      return "random";
  }
  return "";
}

InitialBasis initial_basis_from_string(const std::string& s) {
  if (s == "identity") return InitialBasis::identity;
  if (s == "one_body") return InitialBasis::one_body;
  if (s == "hartree_fock") return InitialBasis::hartree_fock;
  if (s == "file") return InitialBasis::file;
  if (s == "random") return InitialBasis::random;
  throw Error("config basis.initial: unknown basis '" + s + "'");
}

struct KeyDef {
  const char* name;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define INT_KEY(NAME, FIELD)                                                                            \
  KeyDef {                                                                                              \
    NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_int(k, v); }, \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                                      \
  }
#define DOUBLE_KEY(NAME, FIELD)                                                                            \
  KeyDef {                                                                                                 \
    NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_double(k, v); }, \
        [](const RunConfig& c) { return fmt(c.FIELD); }                                                    \
  }
#define BOOL_KEY(NAME, FIELD)                                                                            \
  KeyDef {                                                                                               \
    NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_bool(k, v); }, \
        [](const RunConfig& c) { return fmt(c.FIELD); }                                                  \
  }
#define U64_KEY(NAME, FIELD)                                                                            \
  KeyDef {                                                                                              \
    NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = parse_u64(k, v); }, \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                                      \
  }
#define STRING_KEY(NAME, FIELD)                                                                     \
  KeyDef {                                                                                          \
    NAME, [](RunConfig& c, const std::string&, const std::string& v) { c.FIELD = trim(v); },        \
        [](const RunConfig& c) { return c.FIELD; }                                                  \
  }
#define ENUM_KEY(NAME, FIELD, PARSE)                                                                   \
  KeyDef {                                                                                             \
    NAME, [](RunConfig& c, const std::string&, const std::string& v) { c.FIELD = PARSE(trim(v)); },    \
        [](const RunConfig& c) { return to_string(c.FIELD); }                                          \
  }

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> keys = {
      ENUM_KEY("model.source", source, model_source_from_string),
      STRING_KEY("model.path", path),
      INT_KEY("model.n", hubbard.n),
      INT_KEY("model.p", hubbard.p),
      DOUBLE_KEY("model.t0", hubbard.t0),
      DOUBLE_KEY("model.U0", hubbard.U0),
      DOUBLE_KEY("model.gamma", hubbard.gamma),
      KeyDef{"model.boundary",
             [](RunConfig& c, const std::string& k, const std::string& v) {
               const std::string s = trim(v);
               if (s == "open")
                 c.hubbard.boundary = Boundary::open;
               else if (s == "periodic")
                 c.hubbard.boundary = Boundary::periodic;
               else
                 throw Error("config " + k + ": expected open or periodic");
             },
             [](const RunConfig& c) { return std::string(c.hubbard.boundary == Boundary::open ? "open" : "periodic"); }},
      KeyDef{"model.particles",
             [](RunConfig& c, const std::string& k, const std::string& v) { c.particles = parse_list(k, v); },
             [](const RunConfig& c) { return fmt_list(c.particles); }},
      ENUM_KEY("model.symmetry", symmetry, symmetry_from_string),
      ENUM_KEY("basis.initial", initial_basis, initial_basis_from_string),
      STRING_KEY("basis.unitary", unitary_path),
      U64_KEY("basis.seed", basis_seed),
      DOUBLE_KEY("truncation.eps", policy.eps),
      INT_KEY("truncation.D_min", policy.D_min),
      INT_KEY("truncation.D_max", policy.D_max),
      BOOL_KEY("truncation.renormalize", policy.renormalize),
      INT_KEY("state.initial_D", initial_D),
      INT_KEY("schedule.plain_sweeps", plain_sweeps),
      INT_KEY("schedule.opt_sweeps", opt_sweeps),
      INT_KEY("schedule.macro_iterations", macro_iterations),
      BOOL_KEY("schedule.reorder", reorder),
      ENUM_KEY("local.cost", local.cost, cost_function_from_string),
      ENUM_KEY("local.method", local.method, optimizer_method_from_string),
      ENUM_KEY("local.restriction", local.restriction, symmetry_restriction_from_string),
      INT_KEY("local.max_evals", local.max_evals),
      DOUBLE_KEY("local.delta_accept", local.delta_accept),
      INT_KEY("local.retry_budget", local.retry_budget),
      INT_KEY("local.restarts", local.restarts),
      DOUBLE_KEY("local.radius", local.radius),
      BOOL_KEY("local.log_trace", log_trace),
      DOUBLE_KEY("eigensolver.tol", eig_tol),
      INT_KEY("eigensolver.max_iter", eig_max_iter),
      U64_KEY("run.seed", seed),
      STRING_KEY("run.output_dir", output_dir),
      BOOL_KEY("run.wall_time", wall_time),
      INT_KEY("run.stop_after", stop_after),
      STRING_KEY("run.restart", restart),
  };
  return keys;
}

#undef INT_KEY
#undef DOUBLE_KEY
#undef BOOL_KEY
#undef U64_KEY
#undef STRING_KEY
#undef ENUM_KEY

}  // namespace

void RunConfig::validate() const {
  policy.validate();
  local.validate();
  if (plain_sweeps < 0 || opt_sweeps < 0 || macro_iterations < 0 || stop_after < 0)
    throw PreconditionError("schedule counts must be >= 0");
  if (initial_D < 1) throw PreconditionError("state.initial_D must be >= 1");
  if (!(eig_tol > 0) || eig_max_iter < 1) throw PreconditionError("invalid eigensolver settings");
  if (source != ModelSource::hubbard && path.empty()) throw PreconditionError("model.path is required");
  if (initial_basis == InitialBasis::file && unitary_path.empty()) throw PreconditionError("basis.unitary is required");
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : key_table())
    if (key == k.name) {
      k.set(cfg, key, value);
      return;
    }
  throw Error("unknown config key '" + key + "'");
}

std::map<std::string, std::string> config_values(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& k : key_table()) out[k.name] = k.get(cfg);
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.emplace_back(k.name);
  return out;
}

RunConfig parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError(e.message(), static_cast<int>(e.line()));
  }
  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      set_config_value(cfg, section, body.data());
      continue;
    }
    for (const auto& [key, node] : body) set_config_value(cfg, section + "." + key, node.data());
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file '" + path + "'");
  return parse_config(in);
}

json config_to_json(const RunConfig& cfg) {
  json j = json::object();
  for (const auto& [k, v] : config_values(cfg))
    if (k != "run.output_dir" && k != "run.restart" && k != "run.stop_after") j[k] = v;
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig cfg;
  for (const auto& [k, v] : j.items()) set_config_value(cfg, k, v.get<std::string>());
  return cfg;
}

SecondQuantizedOperator load_operator_file(const std::string& path, int p) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open operator file '" + path + "'");
  char first = 0;
  in >> std::ws;
  first = static_cast<char>(in.peek());
  if (first == '{') return operator_from_json(json::parse(in));
  return parse_fcidump(in, p);
}

SecondQuantizedOperator load_model(const RunConfig& cfg) {
  switch (cfg.source) {
    case ModelSource::hubbard:
      return build_hubbard(cfg.hubbard);
    case ModelSource::fcidump: {
      std::ifstream in(cfg.path);
      if (!in) throw Error("cannot open FCIDUMP '" + cfg.path + "'");
      return parse_fcidump(in, cfg.hubbard.p);
    }
    case ModelSource::operator_file:
      return load_operator_file(cfg.path, cfg.hubbard.p);
  }
  throw Error("unknown model source");
}

std::vector<int> particle_numbers(const RunConfig& cfg, const SecondQuantizedOperator& op) {
  const int n = op.n(), p = op.p();
  if (!cfg.particles.empty()) {
    if (static_cast<int>(cfg.particles.size()) != p) throw Error("model.particles needs one entry per species");
    for (int x : cfg.particles)
      if (x < 0 || x > n) throw Error("model.particles out of range");
    return cfg.particles;
  }
  if (cfg.source == ModelSource::fcidump) {
    std::ifstream in(cfg.path);
    FcidumpHeader h = read_fcidump_header(in);
    if (p == 2) return {(h.nelec + h.ms2) / 2, (h.nelec - h.ms2) / 2};
    if (p == 1) return {h.nelec};
  }
  return std::vector<int>(p, n / 2);
}

namespace {

Matrix species_unitary(const std::vector<Matrix>& u, int n, int p) {
  Matrix U = Matrix::Zero(n * p, n * p);
  for (int s = 0; s < p; ++s)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) U(i * p + s, j * p + s) = u[s](i, j);
  return U;
}

Matrix haar(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Matrix A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = Complex(g(rng), g(rng));
  Eigen::HouseholderQR<Matrix> qr(A);
  Matrix Q = qr.householderQ();
  for (int j = 0; j < n; ++j) {
    Complex r = qr.matrixQR()(j, j);
    if (std::abs(r) > 0) Q.col(j) *= r / std::abs(r);
  }
  return Q;
}

}  // namespace

Matrix initial_unitary(const RunConfig& cfg, const SecondQuantizedOperator& op, const std::vector<int>& particles) {
  const int n = op.n(), p = op.p();
  switch (cfg.initial_basis) {
    case InitialBasis::identity:
      return Matrix::Identity(n * p, n * p);
    case InitialBasis::one_body: {
      std::vector<Matrix> u;
      for (int s = 0; s < p; ++s) {
        Matrix t(n, n);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) t(i, j) = op.t(i * p + s, j * p + s);
        Eigen::SelfAdjointEigenSolver<Matrix> es(t);
        u.push_back(es.eigenvectors());
      }
      return species_unitary(u, n, p);
    }
    case InitialBasis::hartree_fock: {
      for (int x : particles)
        if (x != particles.front()) throw Error("hartree_fock basis needs equal particle numbers per species");
      return hartree_fock_basis(op, particles.front()).U;
    }
    case InitialBasis::file: {
      std::ifstream in(cfg.unitary_path);
      if (!in) throw Error("cannot open unitary file '" + cfg.unitary_path + "'");
      json j = json::parse(in);
      Matrix U = matrix_from_json(j.contains("unitary") ? j.at("unitary") : j);
      if (U.rows() != n * p || U.cols() != n * p) throw Error("unitary file has the wrong dimension");
      require_unitary(U, 1e-10, "basis.unitary");
      return U;
    }
    case InitialBasis::random: {
      std::mt19937_64 rng(cfg.basis_seed);
      Matrix u = haar(n, rng);
      return species_unitary(std::vector<Matrix>(p, u), n, p);
    }
  }
  throw Error("unknown initial basis");
}

json step_to_json(const StepRecord& r, bool optimising, bool wall_time) {
  json j = {{"type", "step"},
            {"macro", r.macro},
            {"sweep", r.sweep},
            {"phase", optimising ? "opt" : "plain"},
            {"site", r.site},
            {"direction", r.right_moving ? "right" : "left"},
            {"energy", r.energy},
            {"D", r.D},
            {"eps_t", r.eps_t},
            {"iterations", r.iterations},
            {"converged", r.converged}};
  if (optimising) {
    j["accepted"] = r.accepted_rotation;
    j["cost_before"] = r.cost_before;
    j["cost_after"] = r.cost_after;
  }
  if (wall_time) j["wall_time"] = r.wall_time;
  return j;
}

namespace {

json summary_to_json(const SweepSummary& s) {
  return {{"type", "sweep"},   {"macro", s.macro},     {"sweep", s.sweep},         {"phase", s.optimising ? "opt" : "plain"},
          {"energy", s.energy}, {"max_D", s.max_D},     {"max_eps_t", s.max_eps}, {"accepted", s.accepted},
          {"bond_dims", s.bond_dims}};
}

SweepSummary summary_from_json(const json& j) {
  SweepSummary s;
  s.macro = j.at("macro");
  s.sweep = j.at("sweep");
  s.optimising = j.at("phase") == "opt";
  s.energy = j.at("energy");
  s.max_D = j.at("max_D");
  s.max_eps = j.at("max_eps_t");
  s.accepted = j.at("accepted");
  s.bond_dims = j.at("bond_dims").get<std::vector<int>>();
  return s;
}

json reorder_to_json(const ReorderRecord& r) {
  return {{"type", "reorder"},
          {"macro", r.macro},
          {"order", r.permutation.order},
          {"swaps", r.swaps},
          {"trunc_error", r.trunc_error}};
}

ReorderRecord reorder_from_json(const json& j) {
  ReorderRecord r;
  r.macro = j.at("macro");
  r.permutation.order = j.at("order").get<std::vector<int>>();
  r.swaps = j.at("swaps");
  r.trunc_error = j.at("trunc_error");
  return r;
}

}  // namespace

json provenance_to_json(const RunProvenance& p) {
  json sweeps = json::array(), reorders = json::array();
  for (const auto& s : p.sweeps) sweeps.push_back(summary_to_json(s));
  for (const auto& r : p.reorders) reorders.push_back(reorder_to_json(r));
  return {{"version", p.version},
          {"config", p.config},
          {"accumulated", matrix_to_json(p.accumulated)},
          {"mode_order", p.mode_order},
          {"sweeps", sweeps},
          {"reorders", reorders}};
}

namespace {

RunProvenance provenance_from_json(const json& j) {
  RunProvenance p;
  p.version = j.at("version");
  p.config = j.at("config");
  p.accumulated = matrix_from_json(j.at("accumulated"));
  p.mode_order = j.at("mode_order").get<std::vector<int>>();
  for (const auto& s : j.at("sweeps")) p.sweeps.push_back(summary_from_json(s));
  for (const auto& r : j.at("reorders")) p.reorders.push_back(reorder_from_json(r));
  return p;
}

}  // namespace

json checkpoint_to_json(const Checkpoint& c) {
  return {{"format", "orbdmrg-checkpoint"},
          {"version", 1},
          {"config", config_to_json(c.config)},
          {"macro", c.macro},
          {"stage", c.stage},
          {"mps", mps_to_json(c.psi)},
          {"operator", operator_to_json(c.op)},
          {"initial_operator", operator_to_json(c.initial)},
          {"provenance", provenance_to_json(c.provenance)}};
}

Checkpoint checkpoint_from_json(const json& j) {
  if (j.value("format", "") != "orbdmrg-checkpoint") throw Error("not a checkpoint file");
  if (j.value("version", 0) != 1) throw Error("unsupported checkpoint version");
  Checkpoint c;
  c.config = config_from_json(j.at("config"));
  c.macro = j.at("macro");
  c.stage = j.at("stage");
  c.psi = mps_from_json(j.at("mps"));
  c.op = operator_from_json(j.at("operator"));
  c.initial = operator_from_json(j.at("initial_operator"));
  c.provenance = provenance_from_json(j.at("provenance"));
  return c;
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  return checkpoint_from_json(json::parse(in));
}

void write_matrix_text(std::ostream& out, const RealMatrix& M) {
  out << std::setprecision(17);
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    for (Eigen::Index c = 0; c < M.cols(); ++c) out << (c ? " " : "") << M(r, c);
    out << '\n';
  }
}

namespace {

class Outputs {
 public:
  Outputs(const RunConfig& cfg, bool append) : cfg_(cfg) {
    if (cfg.output_dir.empty()) return;
    dir_ = cfg.output_dir;
    std::filesystem::create_directories(dir_);
    const auto mode = append ? std::ios::app : std::ios::trunc;
    report_.open(dir_ / "report.jsonl", std::ios::out | mode);
    bool fresh_csv = !append || !std::filesystem::exists(dir_ / "bond_dims.csv");
    csv_.open(dir_ / "bond_dims.csv", std::ios::out | (fresh_csv ? std::ios::trunc : std::ios::app));
    csv_header_ = !fresh_csv;
    if (!report_ || !csv_) throw Error("cannot write to output directory '" + cfg.output_dir + "'");
  }

  bool enabled() const { return !dir_.empty(); }

  void line(const json& j) {
    if (enabled()) report_ << j.dump() << '\n' << std::flush;
  }

  void bonds(const SweepSummary& s) {
    if (!enabled()) return;
    if (!csv_header_) {
      csv_ << "macro,sweep,phase";
      for (std::size_t k = 1; k <= s.bond_dims.size(); ++k) csv_ << ",D_" << k;
      csv_ << '\n';
      csv_header_ = true;
    }
    csv_ << s.macro << ',' << s.sweep << ',' << (s.optimising ? "opt" : "plain");
    for (int D : s.bond_dims) csv_ << ',' << D;
    csv_ << '\n' << std::flush;
  }

  void checkpoint(const Checkpoint& c) {
    if (!enabled()) return;
    const auto tmp = dir_ / "checkpoint.json.tmp";
    {
      std::ofstream out(tmp);
      out << checkpoint_to_json(c).dump();
      if (!out) throw Error("cannot write checkpoint");
    }
    std::filesystem::rename(tmp, dir_ / "checkpoint.json");
  }

  void finish(const RunResult& r) {
    if (!enabled()) return;
    std::ofstream u(dir_ / "unitary.json");
    u << json{{"format", "orbdmrg-unitary"}, {"version", 1}, {"unitary", matrix_to_json(r.op.mode_space.accumulated)},
              {"mode_order", r.op.mode_space.mode_order}}
             .dump()
      << '\n';
    std::ofstream mi(dir_ / "mutual_information.txt");
    write_matrix_text(mi, mutual_information(r.psi));
    std::ofstream op(dir_ / "operator.json");
    op << operator_to_json(r.op).dump() << '\n';
  }

 private:
  const RunConfig& cfg_;
  std::filesystem::path dir_;
  std::ofstream report_, csv_;
  bool csv_header_ = false;
};

RunResult execute(const RunConfig& cfg, Checkpoint cp, bool resumed, const RunObserver& observer) {
  Outputs out(cfg, resumed);
  RunResult res;
  res.initial = cp.initial;
  res.provenance = cp.provenance;
  const int stages = cfg.plain_sweeps + cfg.opt_sweeps;
  if (!resumed)
    out.line({{"type", "start"},
              {"version", kVersion},
              {"config", config_to_json(cfg)},
              {"n", cp.op.n()},
              {"p", cp.op.p()},
              {"target", cp.psi.target.str()}});
  else
    out.line({{"type", "resume"}, {"macro", cp.macro}, {"stage", cp.stage}});

  DmrgEngine engine(cp.op, cp.psi);
  std::vector<LocalOptResult> opt_results;
  LocalOptObserver opt_observer = [&](const LocalOptResult& r, const StepContext&) { opt_results.push_back(r); };
  LocalOptConfig local = cfg.local;
  local.seed = cfg.seed;
  const LocalBasisHook hook = make_local_basis_hook(local, opt_observer);

  auto snapshot = [&](int macro, int stage) {
    cp.macro = macro;
    cp.stage = stage;
    cp.psi = engine.state();
    cp.op = engine.coefficients();
    cp.provenance = res.provenance;
    cp.provenance.accumulated = cp.op.mode_space.accumulated;
    cp.provenance.mode_order = cp.op.mode_space.mode_order;
    out.checkpoint(cp);
  };

  int sweeps_run = 0;
  for (int macro = cp.macro; macro < cfg.macro_iterations; ++macro) {
    const int first = macro == cp.macro ? cp.stage : 0;
    for (int stage = first; stage <= stages; ++stage) {
      if (stage == stages) {
        if (!cfg.reorder || macro + 1 >= cfg.macro_iterations) continue;
        SymmetricMPS psi = engine.state();
        SecondQuantizedOperator op = engine.coefficients();
        RealMatrix I = mutual_information(psi);
        ReorderRecord rec;
        rec.macro = macro;
        rec.permutation = fiedler_order(I);
        if (!rec.permutation.is_identity()) {
          auto rep = apply_permutation(psi, op, rec.permutation, cfg.policy);
          rec.swaps = rep.swaps;
          rec.trunc_error = rep.trunc_error;
          engine.reset(op, psi);
        }
        res.provenance.reorders.push_back(rec);
        json line = reorder_to_json(rec);
        line["energy"] = engine.energy();
        out.line(line);
        snapshot(macro + 1, 0);
        continue;
      }
      if (cfg.stop_after > 0 && sweeps_run >= cfg.stop_after) {
        snapshot(macro, stage);
        res.psi = engine.state();
        res.op = engine.coefficients();
        res.energy = engine.energy();
        res.provenance.accumulated = res.op.mode_space.accumulated;
        res.provenance.mode_order = res.op.mode_space.mode_order;
        res.completed = false;
        out.line({{"type", "stopped"}, {"macro", macro}, {"stage", stage}});
        return res;
      }
      const bool optimising = stage >= cfg.plain_sweeps;
      SweepOptions so;
      so.policy = cfg.policy;
      so.tol = cfg.eig_tol;
      so.max_iter = cfg.eig_max_iter;
      so.macro = macro;
      so.sweep = stage;
      SweepSummary sum;
      sum.macro = macro;
      sum.sweep = stage;
      sum.optimising = optimising;
      auto emit = [&](const StepRecord& r, const LocalOptResult* last_opt) {
        json j = step_to_json(r, optimising, cfg.wall_time);
        if (optimising && last_opt) {
          j["evaluations"] = last_opt->evaluations;
          if (last_opt->failed) j["warning"] = last_opt->warning;
          if (cfg.log_trace) j["trace"] = last_opt->trace;
        }
        out.line(j);
        if (observer.on_step) observer.on_step(r, optimising ? last_opt : nullptr);
        sum.accepted += r.accepted_rotation ? 1 : 0;
        sum.max_eps = std::max(sum.max_eps, r.eps_t);
      };
      for (bool right : {true, false}) {
        opt_results.clear();
        auto half = engine.half_sweep(so, right, optimising ? hook : LocalBasisHook());
        for (std::size_t k = 0; k < half.size(); ++k)
          emit(half[k], optimising && k < opt_results.size() ? &opt_results[k] : nullptr);
      }
      sum.energy = engine.energy();
      const SymmetricMPS& psi = engine.state();
      for (int k = 1; k < psi.n; ++k) sum.bond_dims.push_back(psi.bond_dim(k));
      sum.max_D = psi.max_bond_dim();
      res.provenance.sweeps.push_back(sum);
      out.line(summary_to_json(sum));
      out.bonds(sum);
      if (observer.on_sweep) observer.on_sweep(sum);
      ++sweeps_run;
      snapshot(macro, stage + 1);
    }
  }
  res.psi = engine.state();
  res.op = engine.coefficients();
  res.energy = engine.energy();
  res.provenance.accumulated = res.op.mode_space.accumulated;
  res.provenance.mode_order = res.op.mode_space.mode_order;
  res.completed = true;
  snapshot(cfg.macro_iterations, 0);
  out.line({{"type", "final"},
            {"energy", res.energy},
            {"max_D", res.psi.max_bond_dim()},
            {"sweeps", res.provenance.sweeps.size()},
            {"reorders", res.provenance.reorders.size()}});
  out.finish(res);
  return res;
}

}  // namespace

RunResult run_ground_state(const RunConfig& cfg, const SecondQuantizedOperator& model, const RunObserver& observer) {
  cfg.validate();
  model.validate();
  Checkpoint cp;
  cp.config = cfg;
  cp.initial = model;
  const auto particles = particle_numbers(cfg, model);
  const Matrix U0 = initial_unitary(cfg, model, particles);
  cp.op = cfg.initial_basis == InitialBasis::identity ? model : rotate_coefficients(model, U0);
  const Charge target = target_charge(particles, cfg.symmetry);
  cp.psi = random_mps(model.n(), model.p(), cfg.symmetry, target, cfg.initial_D, cfg.seed);
  cp.provenance.config = config_to_json(cfg);
  cp.provenance.accumulated = cp.op.mode_space.accumulated;
  cp.provenance.mode_order = cp.op.mode_space.mode_order;
  return execute(cfg, std::move(cp), false, observer);
}

RunResult run_ground_state(const RunConfig& cfg, const RunObserver& observer) {
  if (!cfg.restart.empty()) {
    Checkpoint cp = read_checkpoint(cfg.restart);
    RunConfig c = cp.config;
    c.stop_after = cfg.stop_after;
    c.output_dir = cfg.output_dir;
    c.restart = cfg.restart;
    c.validate();
    return execute(c, std::move(cp), true, observer);
  }
  return run_ground_state(cfg, load_model(cfg), observer);
}

}  // namespace orbdmrg
