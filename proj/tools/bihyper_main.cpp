#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "bihyper/errors.hpp"
#include "bihyper/runner.hpp"

namespace {

// Precedence: --out flag, then config `output=`, then $BIHYPER_OUT, then "out".
std::string resolve_out_dir(const std::string& flag_out, const std::string& cfg_out) {
  if (!flag_out.empty()) return flag_out;
  if (!cfg_out.empty()) return cfg_out;
  if (const char* env = std::getenv("BIHYPER_OUT"); env != nullptr && *env != '\0') {
    return env;
  }
  return "out";
}

bihyper::OutputFormat format_from_flag(const std::string& flag,
                                       bihyper::OutputFormat from_config) {
  if (flag == "csv") return bihyper::OutputFormat::csv;
  if (flag == "json") return bihyper::OutputFormat::json;
  if (flag == "both") return bihyper::OutputFormat::both;
  return from_config;  // flag not given
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bihyper: bilevel hypergradient estimation, search and verification"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string out_flag;
  std::string format_flag;
  int jobs = 1;
  std::optional<std::uint64_t> seed_flag;
  app.add_option("--out", out_flag, "output directory (overrides config and $BIHYPER_OUT)");
  app.add_option("--format", format_flag, "output format")
      ->check(CLI::IsMember({"csv", "json", "both"}));
  app.add_option("--jobs", jobs, "concurrent runs for bench/sweep")
      ->check(CLI::PositiveNumber);
  app.add_option("--seed", seed_flag, "override the config seed (collapses sweep.seed)");

  std::string bench_cfg, search_cfg, sweep_cfg;
  CLI::App* bench = app.add_subcommand("bench", "execute the configured runs, sweeps allowed");
  bench->add_option("config", bench_cfg, "config file")->required();
  CLI::App* search = app.add_subcommand("search", "execute exactly one search run");
  search->add_option("config", search_cfg, "config file")->required();
  CLI::App* sweep = app.add_subcommand("sweep", "execute a sweep (config must define sweep.*)");
  sweep->add_option("config", sweep_cfg, "config file")->required();
  std::vector<std::string> checks;
  CLI::App* verify = app.add_subcommand("verify", "run theory verification suites");
  verify->add_option("checks", checks,
                     "suites to run: theorem1 corollary2 descent unbiasedness convergence "
                     "equivalences, or 'all' (default)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (verify->parsed()) {
      return bihyper::run_verify(checks, resolve_out_dir(out_flag, ""));
    }
    const std::string& cfg_path =
        bench->parsed() ? bench_cfg : (search->parsed() ? search_cfg : sweep_cfg);
    bihyper::RunConfig cfg = bihyper::parse_config_file(cfg_path);
    bihyper::RunnerOptions opt;
    opt.out_dir = resolve_out_dir(out_flag, cfg.out_dir);
    opt.jobs = jobs;
    opt.format = format_from_flag(format_flag, cfg.format);
    opt.seed_override = seed_flag;
    opt.require_sweep = sweep->parsed();
    if (search->parsed()) return bihyper::run_single_search(std::move(cfg), opt);
    return bihyper::run_bench(std::move(cfg), opt);
  } catch (const bihyper::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const bihyper::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
