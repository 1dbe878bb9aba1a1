#pragma once

// Run configuration, run ledger, parameter sweeps and plot-data emission.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "chemolab/analysis.hpp"
#include "chemolab/entire.hpp"
#include "chemolab/model.hpp"
#include "chemolab/stepper.hpp"
#include "json.hpp"

namespace chemo::harness {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kVersion = "chemolab 0.1.0";

enum class Experiment { thresholds, simulate, periodic, steady, entire, sweep };

const char* to_string(Experiment e);
/// Throws ConfigError for an unknown name.
Experiment parse_experiment(const std::string& name, const std::string& path = "experiment");

enum ExitCode : int { kOk = 0, kConfigError = 2, kRuntimeFailure = 3, kVerdictFailure = 4 };

struct InitialSpec {
  enum class Kind { constant, lognormal, expression, file } kind = Kind::constant;
  double value = 1.0;         // constant
  double mean = 1.0;          // lognormal: median cell value
  double sigma = 0.3;         // lognormal: std-dev of log u
  std::optional<std::uint64_t> seed;  // lognormal: overrides the run seed
  model::SpacePart expression;        // expression
  std::string file;                   // file: one value per cell
};

struct MonitorSpec {
  std::optional<double> q;  // defaults to the report's q
  double theta = 0.5;
  double tail_fraction = 0.2;
  long row_spacing = 10;
};

struct SweepSpec {
  std::vector<std::pair<std::string, std::vector<json>>> axes;  // in config order
  std::size_t cap = 10000;
  Experiment inner = Experiment::simulate;
};

struct RunConfig {
  json raw;       // the configuration as read
  json resolved;  // every field explicit, defaults filled in
  std::optional<Experiment> experiment;
  model::Domain domain = model::Domain::interval(1.0, 64);
  model::Coefficients coeffs = model::Coefficients::constant(1.0, 1.0, 1.0, 1.0, 1.0);
  stepper::StepControl step;
  InitialSpec initial;
  double t_start = 0.0;
  double t_end = 10.0;
  MonitorSpec monitor;
  double c_star = 1.0;
  std::optional<double> m2_star;
  std::uint64_t seed = 0;
  std::size_t delta0_max_columns = 4096;
  std::optional<double> delta0_value;  // overrides the computed kernel constant
  entire::PeriodicOptions periodic;
  entire::SteadyOptions steady;
  double entire_window = 5.0;
  std::vector<int> entire_schedule = {5, 10, 20, 40};
  double entire_tol = 1e-8;
  std::optional<SweepSpec> sweep;
  std::string out_dir = "out";
};

/// Validates and resolves a configuration document. Throws ConfigError whose
/// path() names the offending field.
RunConfig parse_config(const json& doc);
RunConfig load_config(const fs::path& path);

/// Parses a coefficient descriptor (number, {"constant"}, {"separable"} or {"tabulated"}).
model::CoeffExpr parse_coeff(const json& j, const std::string& path);

model::ScalarField initial_field(const RunConfig& cfg);

struct RunOutcome {
  int exit_code = kOk;
  json result;
};

/// Runs one experiment, writing the ledger into `out`:
///   manifest.json (first), diagnostics.csv, checkpoints.csv and field dumps,
///   result.json (last, atomically).
RunOutcome run(const RunConfig& cfg, Experiment experiment, const fs::path& out, unsigned parallelism = 1);

/// Cartesian sweep over cfg.sweep axes; per-point ledgers under out/point_NNNNN
/// and a summary.csv ordered by grid index.
RunOutcome sweep(const RunConfig& cfg, const fs::path& out, unsigned parallelism = 1);

/// Sets a dotted path ("coefficients.chi") in a JSON document.
void set_path(json& doc, const std::string& path, const json& value);

/// Writes <ledger>/plot_<kind>.csv. kind: envelope | persistence | region.
/// Throws ConfigError for an unknown kind or a ledger missing required files.
fs::path emit_plotdata(const fs::path& ledger, const std::string& kind);

/// RFC-4180 field quoting.
std::string csv_field(const std::string& s);
std::string fmt(double x);

/// Writes text to path via a temporary file and rename.
void write_atomic(const fs::path& path, const std::string& text);

}  // namespace chemo::harness
