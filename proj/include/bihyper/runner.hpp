#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bihyper/config.hpp"

namespace bihyper {

// Resolved execution options for one CLI invocation.  The front end applies
// the output-directory precedence (flag > config > BIHYPER_OUT > "out") and
// flag overrides before calling into the runner.
struct RunnerOptions {
  std::string out_dir = "out";
  int jobs = 1;
  OutputFormat format = OutputFormat::csv;
  std::optional<std::uint64_t> seed_override;
  bool require_sweep = false;  // the `sweep` subcommand demands sweep.* axes
};

// Executes the (possibly swept) benchmark: results.csv and/or
// trajectories.json plus errors.csv in opt.out_dir, summary on stdout.
// Returns 0 when every run completed, 1 when any run failed.
int run_bench(RunConfig cfg, const RunnerOptions& opt);

// Executes exactly one search run and writes its outputs; rejects configs
// with sweep axes.  Returns 0 on completion, 1 on divergence.
int run_single_search(RunConfig cfg, const RunnerOptions& opt);

// Runs the named verification suites ("all" expands to every suite) with
// their documented default instances, writing <name>.json per suite.
// Returns 0 iff every selected check passes.  Unknown names throw
// ConfigError (a usage error).
int run_verify(const std::vector<std::string>& selection, const std::string& out_dir);

}  // namespace bihyper
