#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>

#include "orbdmrg/driver.hpp"
#include "orbdmrg/oracle.hpp"

using namespace orbdmrg;
using nlohmann::json;

namespace {

struct ConfigFlags {
  std::string config;
  std::vector<std::string> sets;
  std::string output;
  std::optional<std::uint64_t> seed;
  std::optional<int> D_max, plain, opt, macro, stop_after;
  std::optional<double> eps;
  std::string restart;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f, bool run_flags) {
  cmd->add_option("--config,-c", f.config, "key = value config file with [sections]")->check(CLI::ExistingFile);
  cmd->add_option("--set,-s", f.sets, "override a config key, section.key=value (repeatable)");
  cmd->add_option("--seed", f.seed, "run.seed");
  if (!run_flags) return;
  cmd->add_option("--output,-o", f.output, "run.output_dir");
  cmd->add_option("--D-max", f.D_max, "truncation.D_max");
  cmd->add_option("--eps", f.eps, "truncation.eps");
  cmd->add_option("--plain-sweeps", f.plain, "schedule.plain_sweeps");
  cmd->add_option("--opt-sweeps", f.opt, "schedule.opt_sweeps");
  cmd->add_option("--macro", f.macro, "schedule.macro_iterations");
  cmd->add_option("--stop-after", f.stop_after, "run.stop_after");
  cmd->add_option("--restart", f.restart, "run.restart (checkpoint file)")->check(CLI::ExistingFile);
}

RunConfig resolve(const ConfigFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
  for (const auto& s : f.sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos) throw Error("--set expects section.key=value, got '" + s + "'");
    set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (!f.output.empty()) cfg.output_dir = f.output;
  if (f.seed) cfg.seed = *f.seed;
  if (f.D_max) cfg.policy.D_max = *f.D_max;
  if (f.eps) cfg.policy.eps = *f.eps;
  if (f.plain) cfg.plain_sweeps = *f.plain;
  if (f.opt) cfg.opt_sweeps = *f.opt;
  if (f.macro) cfg.macro_iterations = *f.macro;
  if (f.stop_after) cfg.stop_after = *f.stop_after;
  if (!f.restart.empty()) cfg.restart = f.restart;
  return cfg;
}

int cmd_run(const ConfigFlags& f) {
  RunConfig cfg = resolve(f);
  RunResult r = run_ground_state(cfg);
  std::cout << std::setprecision(15);
  std::cout << "energy " << r.energy << '\n';
  std::cout << "max_D " << r.psi.max_bond_dim() << '\n';
  std::cout << "sweeps " << r.provenance.sweeps.size() << '\n';
  std::cout << "completed " << (r.completed ? "true" : "false") << '\n';
  return 0;
}

int cmd_ed(const ConfigFlags& f) {
  RunConfig cfg = resolve(f);
  SecondQuantizedOperator op = load_model(cfg);
  auto particles = particle_numbers(cfg, op);
  GroundState gs = exact_ground_state(op, particles);
  std::cout << std::setprecision(15) << "E0 " << gs.energy << '\n';
  std::cout << "residual " << gs.residual << '\n';
  return 0;
}

int cmd_hf(const ConfigFlags& f, const std::string& output) {
  RunConfig cfg = resolve(f);
  SecondQuantizedOperator op = load_model(cfg);
  auto particles = particle_numbers(cfg, op);
  for (int x : particles)
    if (x != particles.front()) throw Error("hf needs equal particle numbers per species");
  HartreeFockResult hf = hartree_fock_basis(op, particles.front());
  std::cout << std::setprecision(15) << "E_HF " << hf.energy << '\n';
  std::cout << "converged " << (hf.converged ? "true" : "false") << '\n';
  if (hf.fallback) std::cerr << "warning: SCF did not converge, using the one-body eigenbasis\n";
  if (!output.empty()) {
    std::ofstream out(output);
    out << json{{"format", "orbdmrg-unitary"}, {"version", 1}, {"unitary", matrix_to_json(hf.U)}}.dump() << '\n';
    if (!out) throw Error("cannot write '" + output + "'");
  }
  return 0;
}

int cmd_mi(const std::string& checkpoint, const std::string& output) {
  Checkpoint cp = read_checkpoint(checkpoint);
  RealMatrix I = mutual_information(cp.psi);
  if (output.empty()) {
    write_matrix_text(std::cout, I);
  } else {
    std::ofstream out(output);
    write_matrix_text(out, I);
    if (!out) throw Error("cannot write '" + output + "'");
  }
  return 0;
}

int cmd_rotate(const std::string& op_path, const std::string& unitary_path, const std::string& output, int p) {
  SecondQuantizedOperator op = load_operator_file(op_path, p);
  std::ifstream in(unitary_path);
  if (!in) throw Error("cannot open '" + unitary_path + "'");
  json j = json::parse(in);
  Matrix U = matrix_from_json(j.contains("unitary") ? j.at("unitary") : j);
  SecondQuantizedOperator rotated = rotate_coefficients(op, U);
  std::ofstream out(output);
  out << operator_to_json(rotated).dump() << '\n';
  if (!out) throw Error("cannot write '" + output + "'");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-site DMRG with local fermionic mode transformations"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.set_version_flag("--version", kVersion);

  ConfigFlags run_flags, ed_flags, hf_flags;
  auto* run = app.add_subcommand("run", "ground-state schedule: plain sweeps, optimising sweeps, reordering");
  add_config_flags(run, run_flags, true);

  auto* ed = app.add_subcommand("ed", "exact ground-state energy of the configured model");
  add_config_flags(ed, ed_flags, false);

  std::string hf_output;
  auto* hf = app.add_subcommand("hf", "restricted Hartree-Fock reference basis");
  add_config_flags(hf, hf_flags, false);
  hf->add_option("--output,-o", hf_output, "unitary JSON output");

  std::string mi_checkpoint, mi_output;
  auto* mi = app.add_subcommand("mi", "mutual information matrix of a checkpoint");
  mi->add_option("checkpoint", mi_checkpoint, "checkpoint.json")->required()->check(CLI::ExistingFile);
  mi->add_option("--output,-o", mi_output, "text output (default stdout)");

  std::string rot_op, rot_u, rot_out;
  int rot_p = 2;
  auto* rotate = app.add_subcommand("rotate", "apply a unitary file to an operator file");
  rotate->add_option("--operator", rot_op, "operator JSON or FCIDUMP")->required()->check(CLI::ExistingFile);
  rotate->add_option("--unitary", rot_u, "unitary JSON")->required()->check(CLI::ExistingFile);
  rotate->add_option("--output,-o", rot_out, "operator JSON output")->required();
  rotate->add_option("--species", rot_p, "species per orbital when reading an FCIDUMP");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(run_flags);
    if (*ed) return cmd_ed(ed_flags);
    if (*hf) return cmd_hf(hf_flags, hf_output);
    if (*mi) return cmd_mi(mi_checkpoint, mi_output);
    if (*rotate) return cmd_rotate(rot_op, rot_u, rot_out, rot_p);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
