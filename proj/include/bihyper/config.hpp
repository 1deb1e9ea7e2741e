#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bihyper/estimators.hpp"
#include "bihyper/search.hpp"

namespace bihyper {

// Per-axis value lists for ablation sweeps.  An empty list means the axis is
// not swept and the base config value is used.
struct SweepAxes {
  std::vector<int> T;
  std::vector<int> K;
  std::vector<double> gamma;
  std::vector<double> gamma_alpha;
  std::vector<std::uint64_t> seed;

  bool any() const;
  std::size_t product_size() const;  // unswept axes count as 1
};

enum class OutputFormat { csv, json, both };

std::string to_string(OutputFormat f);

// A fully parsed run configuration: problem selection, base estimator and
// search settings, optional sweep axes, and output options.
struct RunConfig {
  std::string problem;  // preset name, or "quad-inline" with the pieces below
  std::optional<RealMatrix> inline_A;
  std::optional<RealMatrix> inline_B;
  std::optional<RealVector> inline_c;
  std::optional<double> inline_lambda;

  EstimatorSpec estimator;
  SearchConfig search;
  SweepAxes sweep;

  std::string out_dir;  // empty = not set (CLI falls back to flag/env/default)
  OutputFormat format = OutputFormat::csv;
  std::optional<bool> record_oracle;  // unset = on for quadratic problems

  // Instantiates the configured problem (preset lookup or inline quadratic).
  std::shared_ptr<BilevelProblem> make_problem() const;
  bool is_quadratic() const;
};

// One concrete run produced by sweep expansion, already validated.
struct RunInstance {
  std::string run_id;  // "r%06zu" in expansion order
  EstimatorSpec spec;
  SearchConfig search;
};

// Cartesian expansion over the sweep axes in row-major order
// (T, K, gamma, gamma_alpha, seed); a config without sweep axes yields one
// instance.  gamma is shared between the inner loop and the estimator.
std::vector<RunInstance> expand_sweep(const RunConfig& cfg);

// Parses the flat key=value format (dotted prefixes, '#' comments).  Throws
// ConfigError whose message lists every offending line as "line N: ...",
// followed by semantic errors.  Unknown keys are errors.
RunConfig parse_config(const std::string& text);
RunConfig parse_config_file(const std::string& path);

// One CSV row of search output.  Optional fields render as empty cells.
struct ResultRow {
  std::string run_id;
  std::string problem;
  std::string estimator;
  std::optional<int> K;
  std::optional<int> T;
  std::optional<int> S;
  double gamma = 0.0;
  double gamma_alpha = 0.0;
  std::uint64_t seed = 0;
  int round = 0;
  double inner_loss = 0.0;
  double outer_loss = 0.0;
  double hyper_norm = 0.0;
  std::optional<double> hyper_oracle_err;
  long hvp_count_cum = 0;
  long stored_vector_peak = 0;
  long long wall_ns = 0;  // kept last: timing is outside the determinism contract
};

// Header matching ResultRow's field order exactly.
std::string result_csv_header();
std::string to_csv_line(const ResultRow& r);

// Shortest decimal form that round-trips to the same double.
std::string format_double(double v);

}  // namespace bihyper
