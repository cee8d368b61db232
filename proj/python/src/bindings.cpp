#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "orbdmrg/driver.hpp"
#include "orbdmrg/modeopt.hpp"
#include "orbdmrg/oracle.hpp"
#include "orbdmrg/ordering.hpp"

namespace py = pybind11;
using namespace orbdmrg;

namespace {

RunConfig config_from_dict(const std::map<std::string, std::string>& values) {
  RunConfig cfg;
  for (const auto& [k, v] : values) set_config_value(cfg, k, v);
  return cfg;
}

SchmidtSpectrum spectrum(const std::vector<double>& sigma) {
  SchmidtSpectrum s;
  s.sigma = sigma;
  s.sector.resize(sigma.size());
  return s;
}

py::dict run(const std::map<std::string, std::string>& values, std::optional<SecondQuantizedOperator> model) {
  RunConfig cfg = config_from_dict(values);
  RunResult r;
  {
    py::gil_scoped_release release;
    r = model ? run_ground_state(cfg, *model) : run_ground_state(cfg);
  }
  py::list sweeps;
  for (const auto& s : r.provenance.sweeps) {
    py::dict d;
    d["macro"] = s.macro;
    d["sweep"] = s.sweep;
    d["optimising"] = s.optimising;
    d["energy"] = s.energy;
    d["max_D"] = s.max_D;
    d["max_eps"] = s.max_eps;
    d["accepted"] = s.accepted;
    d["bond_dims"] = s.bond_dims;
    sweeps.append(d);
  }
  py::dict out;
  out["energy"] = r.energy;
  out["completed"] = r.completed;
  out["max_D"] = r.psi.max_bond_dim();
  out["sweeps"] = sweeps;
  out["accumulated"] = r.provenance.accumulated;
  out["mode_order"] = r.provenance.mode_order;
  out["mutual_information"] = mutual_information(r.psi);
  out["operator"] = r.op;
  return out;
}

}  // namespace

PYBIND11_MODULE(_orbdmrg, m) {
  m.doc() = "Two-site DMRG with local fermionic mode transformations";
  m.attr("__version__") = kVersion;

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<PreconditionError>(m, "PreconditionError", error.ptr());

  py::class_<SecondQuantizedOperator>(m, "Operator")
      .def_property_readonly("n", &SecondQuantizedOperator::n)
      .def_property_readonly("p", &SecondQuantizedOperator::p)
      .def_property_readonly("modes", &SecondQuantizedOperator::modes)
      .def_readwrite("t", &SecondQuantizedOperator::t)
      .def_readwrite("e_core", &SecondQuantizedOperator::e_core)
      .def_property_readonly("accumulated", [](const SecondQuantizedOperator& o) { return o.mode_space.accumulated; })
      .def("V", [](const SecondQuantizedOperator& o, int i, int j, int k, int l) { return o.V(i, j, k, l); })
      .def("rotate", &rotate_coefficients, py::arg("U"))
      .def("to_json", [](const SecondQuantizedOperator& o) { return operator_to_json(o).dump(); })
      .def_static("from_json", [](const std::string& s) { return operator_from_json(nlohmann::json::parse(s)); })
      .def("__repr__", [](const SecondQuantizedOperator& o) {
        return "<Operator n=" + std::to_string(o.n()) + " p=" + std::to_string(o.p()) + ">";
      });

  m.def(
      "hubbard",
      [](int n, int p, double t0, double U0, double gamma, bool periodic) {
        HubbardParams hp;
        hp.n = n;
        hp.p = p;
        hp.t0 = t0;
        hp.U0 = U0;
        hp.gamma = gamma;
        hp.boundary = periodic ? Boundary::periodic : Boundary::open;
        return build_hubbard(hp);
      },
      py::arg("n"), py::arg("p") = 2, py::arg("t0") = 1.0, py::arg("U0") = 0.0,
      py::arg("gamma") = std::numeric_limits<double>::infinity(), py::arg("periodic") = false,
      "Long-range Hubbard chain; gamma = inf keeps only the on-site interaction.");

  m.def("load_operator", &load_operator_file, py::arg("path"), py::arg("p") = 2,
        "Operator JSON or FCIDUMP file.");

  m.def(
      "exact_energy",
      [](const SecondQuantizedOperator& op, const std::vector<int>& particles) {
        return exact_ground_state(op, particles).energy;
      },
      py::arg("op"), py::arg("particles"), "Ground energy in a particle-number sector by exact diagonalisation.");

  m.def("config_keys", &config_keys);
  m.def(
      "default_config", [] { return config_values(RunConfig{}); }, "All config keys with their default values.");
  m.def("run", &run, py::arg("config") = std::map<std::string, std::string>{}, py::arg("model") = py::none(),
        "Runs the ground-state schedule. config maps section.key to a value string.");

  m.def(
      "fiedler_order", [](const RealMatrix& I) { return fiedler_order(I).order; }, py::arg("I"));
  m.def(
      "seriation_cost", [](const RealMatrix& I, const std::vector<int>& order) { return seriation_cost(I, order); },
      py::arg("I"), py::arg("order"));

  m.def(
      "householder",
      [](const Matrix& X, int retry_budget, std::uint64_t seed) {
        HouseholderResult r = householder(X, retry_budget, seed);
        return py::make_tuple(r.U, r.V, r.retries);
      },
      py::arg("X"), py::arg("retry_budget") = 8, py::arg("seed") = 0,
      "Unitary U with leading columns X V; returns (U, V, retries).");

  m.def(
      "cost_f1", [](const std::vector<double>& s) { return cost_f1(spectrum(s)); }, py::arg("sigma"));
  m.def(
      "cost_f4", [](const std::vector<double>& s) { return cost_f4(spectrum(s)); }, py::arg("sigma"));
  m.def("gaussian_unitary", &gaussian_unitary, py::arg("U"), "Fock-space representation of a mode rotation.");
}
