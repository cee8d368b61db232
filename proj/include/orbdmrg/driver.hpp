#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "orbdmrg/dmrg.hpp"
#include "orbdmrg/modeopt.hpp"
#include "orbdmrg/operators.hpp"
#include "orbdmrg/ordering.hpp"

namespace orbdmrg {

inline constexpr const char* kVersion = "0.1.0";

enum class ModelSource { hubbard, fcidump, operator_file };
enum class InitialBasis { identity, one_body, hartree_fock, file, random };

struct RunConfig {
  // [model]
  ModelSource source = ModelSource::hubbard;
  std::string path;  // FCIDUMP or operator JSON
  HubbardParams hubbard;
  std::vector<int> particles;  // per species; empty: half filling or FCIDUMP header
  Symmetry symmetry = Symmetry::per_species;
  // [basis]
  InitialBasis initial_basis = InitialBasis::identity;
  std::string unitary_path;
  std::uint64_t basis_seed = 7;
  // [truncation]
  TruncationPolicy policy;
  // [state]
  int initial_D = 16;
  // [schedule]
  int plain_sweeps = 2;
  int opt_sweeps = 8;
  int macro_iterations = 1;
  bool reorder = true;
  // [local]
  LocalOptConfig local;
  bool log_trace = false;
  // [eigensolver]
  double eig_tol = 1e-9;
  int eig_max_iter = 400;
  // [run]
  std::uint64_t seed = 1;
  std::string output_dir;  // empty: no files written
  bool wall_time = false;
  int stop_after = 0;      // sweeps to run in this invocation (0: all)
  std::string restart;     // checkpoint to resume from

  void validate() const;
};

// Keys are "section.key"; values use the same spelling as the config file.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::map<std::string, std::string> config_values(const RunConfig& cfg);
std::vector<std::string> config_keys();
RunConfig load_config(const std::string& path);
RunConfig parse_config(std::istream& in);
nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j);

// Model operator and particle numbers per species from the config.
SecondQuantizedOperator load_model(const RunConfig& cfg);
std::vector<int> particle_numbers(const RunConfig& cfg, const SecondQuantizedOperator& op);
SecondQuantizedOperator load_operator_file(const std::string& path, int p = 2);

// Single-particle basis named by the config (identity for InitialBasis::identity).
Matrix initial_unitary(const RunConfig& cfg, const SecondQuantizedOperator& op, const std::vector<int>& particles);

struct SweepSummary {
  int macro = 0;
  int sweep = 0;
  bool optimising = false;
  double energy = 0.0;
  int max_D = 0;
  double max_eps = 0.0;
  int accepted = 0;
  std::vector<int> bond_dims;
};

struct ReorderRecord {
  int macro = 0;
  OrbitalPermutation permutation;
  int swaps = 0;
  double trunc_error = 0.0;
};

struct RunProvenance {
  Matrix accumulated;
  std::vector<int> mode_order;
  std::vector<ReorderRecord> reorders;
  std::vector<SweepSummary> sweeps;
  nlohmann::json config;
  std::string version = kVersion;
};

struct RunResult {
  RunProvenance provenance;
  SymmetricMPS psi;
  SecondQuantizedOperator op;       // final basis
  SecondQuantizedOperator initial;  // physical basis, before the initial rotation
  double energy = 0.0;
  bool completed = false;
};

struct RunObserver {
  std::function<void(const StepRecord&, const LocalOptResult*)> on_step;
  std::function<void(const SweepSummary&)> on_sweep;
};

RunResult run_ground_state(const RunConfig& cfg, const RunObserver& observer = {});
// Starts from the given physical operator instead of the configured model.
RunResult run_ground_state(const RunConfig& cfg, const SecondQuantizedOperator& model,
                           const RunObserver& observer = {});

nlohmann::json provenance_to_json(const RunProvenance& p);
nlohmann::json step_to_json(const StepRecord& r, bool optimising, bool wall_time);

struct Checkpoint {
  RunConfig config;
  int macro = 0;
  int stage = 0;  // next sweep index within the macro-iteration; plain + opt means reorder
  SymmetricMPS psi;
  SecondQuantizedOperator op;
  SecondQuantizedOperator initial;
  RunProvenance provenance;
};

nlohmann::json checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
Checkpoint read_checkpoint(const std::string& path);

// Whitespace-separated dense matrix, one row per line.
void write_matrix_text(std::ostream& out, const RealMatrix& M);

}  // namespace orbdmrg
