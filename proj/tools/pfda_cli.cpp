#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pfda/experiment/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Particle filtering and data assimilation experiments"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  pfda::experiment::RunOptions opt;
  std::uint64_t seed = 0;
  std::string out;

  const std::pair<const char*, const char*> commands[] = {
      {"simulate", "Simulate a truth trajectory and observations"},
      {"filter", "Run a bootstrap, auxiliary or SIS particle filter"},
      {"smooth", "Run a particle smoother"},
      {"enkf", "Run an ensemble Kalman filter"},
      {"pmmh", "Particle marginal Metropolis-Hastings"},
      {"pgibbs", "Particle Gibbs with an optional ancestor sampling step"},
      {"tune-n", "Choose a particle count from the variance of the log-likelihood estimate"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Seed; overrides the config");
    sub->add_option("--out", out, "Output directory; overrides the config");
    sub->add_option("--threads", opt.threads, "Worker threads (results do not depend on it)")
        ->check(CLI::Range(1u, 1024u));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pfda::experiment::kConfigFailure;
  }

  for (CLI::App* sub : app.get_subcommands()) {
    opt.command = sub->get_name();
    if (sub->count("--seed")) opt.seed = seed;
    if (sub->count("--out")) opt.out = out;
  }
  return pfda::experiment::run_experiment(opt);
}
