#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "eki/experiments.hpp"

namespace {

void print_config_error(const eki::ConfigError& e) {
  nlohmann::json err;
  err["error"] = e.what();
  err["key"] = e.key_path();
  std::cerr << err.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ensemble Kalman inversion for linear Gaussian problems"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_dir;
  uint64_t seed = 0;
  int replicates = 0;

  CLI::App* run = app.add_subcommand("run", "run an experiment from a JSON config");
  run->add_option("config", config_path, "experiment configuration file")
      ->required();
  CLI::Option* out_opt =
      run->add_option("--output", output_dir, "output directory (overrides config)");
  CLI::Option* seed_opt = run->add_option("--seed", seed, "override the RNG seed");
  CLI::Option* rep_opt = run->add_option(
      "--replicates", replicates, "replicates for stochastic averaging");

  CLI::App* list = app.add_subcommand("list", "list registered experiments");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (list->parsed()) {
    for (const auto& entry : eki::experiment_registry()) {
      std::cout << entry.first << "\n";
    }
    return 0;
  }

  try {
    const eki::ExperimentConfig cfg = eki::load_config(config_path);
    eki::RunOptions opts;
    if (*out_opt) opts.output_dir = output_dir;
    if (*seed_opt) opts.seed = seed;
    if (*rep_opt) opts.replicates = replicates;
    return eki::run_experiment(cfg, opts);
  } catch (const eki::ConfigError& e) {
    print_config_error(e);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
