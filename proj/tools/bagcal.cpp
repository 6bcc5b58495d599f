// bagcal: command-line front end for bagged calibration weighting.
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "bagcal/cli/commands.hpp"

namespace {

void print_error(std::string_view module, std::string_view code, const std::string& message) {
  std::string flat = message;
  for (char& ch : flat) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  std::cerr << "error: module=" << module << " code=" << code << " message=" << flat << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  using namespace bagcal;
  cli::RunConfig cfg;

  CLI::App app{"Bagged calibration weighting over principal components"};
  app.set_config("--config", "", "Config file (TOML/INI); command-line flags take precedence");
  app.require_subcommand(1);

  app.add_option("--input", cfg.input, "Unit-level CSV (unit id, x_*, y_*, optional pi)");
  app.add_option("--population", cfg.population, "Population CSV with the same x_ columns");
  app.add_option("--totals", cfg.totals, "Known totals CSV (variable,total; row N = population size)");
  app.add_option("--out-dir", cfg.out_dir, "Output directory (default: $BAGCAL_OUT_DIR or .)");
  app.add_option("--seed", cfg.seed, "Master RNG seed")->capture_default_str();
  app.add_option("--B", cfg.B, "Bagging iterations (weights/estimate: 500, simulate/sweep: 100)");
  app.add_option("--c", cfg.c, "Components per calibration (default min(round(sqrt(n)), number of x_ columns))");
  app.add_option("--alpha", cfg.alpha, "Selection exponent on eigenvalues (default 0.5)");
  app.add_option("--n", cfg.n, "Sample size per simulation run (default round(0.2 N))");
  app.add_option("--runs", cfg.runs, "Simulation runs")->capture_default_str();
  app.add_option("--estimators", cfg.estimators, "Comma list of CAL,PCA,BAG,BAG+PCA,HT");
  app.add_option("--exact-vars", cfg.exact_vars, "Comma list of auxiliaries to calibrate exactly");
  app.add_option("--sampler", cfg.sampler, "Component sampler")
      ->check(CLI::IsMember({"systematic", "rejective"}))
      ->capture_default_str();
  app.add_option("--singularity", cfg.singularity, "Policy for singular calibrations")
      ->check(CLI::IsMember({"error", "pseudo-inverse"}))
      ->capture_default_str();
  app.add_option("--threads", cfg.threads, "Worker threads (results do not depend on it)")->capture_default_str();
  app.add_option("--axis", cfg.axis, "Sweep axis")->check(CLI::IsMember({"c", "alpha"}))->capture_default_str();
  app.add_option("--grid", cfg.grid, "Sweep values, comma separated");
  app.add_option("--population-seed", cfg.population_seed, "Seed of the synthetic population")->capture_default_str();
  app.add_option("--population-size", cfg.population_size, "Size of the synthetic population");

  auto* pca = app.add_subcommand("pca", "Eigenvalues, explained variance and loadings");
  auto* weights = app.add_subcommand("weights", "Bagged calibration weights for a sample");
  auto* estimate = app.add_subcommand("estimate", "Estimated totals per estimator and response");
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo comparison of the estimators");
  auto* sweep = app.add_subcommand("sweep", "Monte Carlo sweep over c or alpha");
  auto* generate = app.add_subcommand("generate", "Write a synthetic population");
  for (auto* sub : {pca, weights, estimate, simulate, sweep, generate}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("cli", "InvalidConfig", e.what());
    return 2;
  }

  try {
    std::vector<std::filesystem::path> written;
    if (*pca) {
      written = cli::cmd_pca(cfg);
    } else if (*weights) {
      written = cli::cmd_weights(cfg);
    } else if (*estimate) {
      written = cli::cmd_estimate(cfg);
    } else if (*simulate) {
      written = cli::cmd_simulate(cfg);
    } else if (*sweep) {
      written = cli::cmd_sweep(cfg);
    } else if (*generate) {
      written = cli::cmd_generate(cfg);
    }
    for (const auto& path : written) std::cout << path.string() << '\n';
  } catch (const Error& e) {
    print_error(e.module(), to_string(e.code()), e.message());
    return 1;
  } catch (const std::exception& e) {
    print_error("cli", "IoError", e.what());
    return 1;
  }
  return 0;
}
