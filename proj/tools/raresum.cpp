// raresum: run or validate an experiment file.
//
//   raresum run <config> [--threads N] [--out PATH] [--seed S] [--timing]
//   raresum validate <config>

#include "raresum/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Rare-event probability estimation for sums of i.i.d. vectors"};
  app.require_subcommand(1);

  std::string config_path;
  int threads = 1;
  std::string out_path;
  std::uint64_t seed = 0;
  bool timing = false;

  auto* run = app.add_subcommand("run", "run every sweep point and scheme of an experiment file");
  run->add_option("config", config_path, "experiment file")->required();
  run->add_option("--threads", threads, "worker threads; 1 gives the reference output")->check(CLI::PositiveNumber);
  auto* out_opt = run->add_option("--out", out_path, "CSV output path (overrides [output] csv)");
  auto* seed_opt = run->add_option("--seed", seed, "base seed (overrides [run] seed)");
  run->add_flag("--timing", timing, "write measured wall_time to the CSV instead of 0");

  auto* validate = app.add_subcommand("validate", "check an experiment file without running it");
  validate->add_option("config", config_path, "experiment file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  raresum::ExperimentConfig config;
  try {
    config = raresum::load_config(config_path);
  } catch (const raresum::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  if (*validate) {
    const auto diags = raresum::validate_config(config);
    raresum::print_diagnostics(diags, std::cout);
    return raresum::has_errors(diags) ? 3 : 0;
  }

  raresum::RunSettings settings;
  settings.threads = threads;
  settings.timing = timing;
  if (*out_opt) settings.out = out_path;
  if (*seed_opt) settings.seed = seed;
  return raresum::run_experiment(config, settings, std::cout, std::cerr);
}
