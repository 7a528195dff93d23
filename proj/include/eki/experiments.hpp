#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eki/ensemble.hpp"
#include "eki/linalg.hpp"

namespace eki {

// Invalid configuration input; key_path names the offending JSON location,
// e.g. "problem.Gamma".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& message, std::string key_path)
      : std::runtime_error(key_path.empty() ? message : key_path + ": " + message),
        key_path_(std::move(key_path)) {}
  const std::string& key_path() const { return key_path_; }

 private:
  std::string key_path_;
};

enum class ExperimentKind {
  kFigCovariances,
  kAsymptoticProfile,
  kNonmonotonicity,
  kRates,
  kDaeSpectrum,
  kSubspace,
  kDiscreteVsContinuous,
};

struct GridSpec {
  double t_start = 0.0;
  double t_end = 1.0;
  int num_points = 101;
  bool log_spaced = false;

  std::vector<double> points() const;
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::kFigCovariances;
  InverseProblem problem;
  double alpha = 2.0;
  Matrix c0;
  Vector m0;
  SimConfig sim;
  GridSpec grid;
  int ensemble_size = 45;
  uint64_t seed = 0;
  std::string output_dir = "out";
};

// Registered experiments in CLI order.
const std::vector<std::pair<std::string, ExperimentKind>>& experiment_registry();
const std::string& experiment_name(ExperimentKind kind);

// Strict parser: unknown keys anywhere are rejected, value errors carry the
// key path. Throws ConfigError.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& file);

// Canonical serialization (sorted keys, defaults made explicit); parsing the
// output reproduces it byte for byte.
std::string serialize_config(const ExperimentConfig& cfg);

struct RunOptions {
  std::optional<std::string> output_dir;
  std::optional<uint64_t> seed;
  std::optional<int> replicates;
  std::optional<int> threads;  // otherwise EKI_THREADS, otherwise all cores
};

// Runs one experiment: writes trajectory.csv / spreads.csv / eigen.csv /
// particles.csv as applicable plus summary.json with every embedded check.
// Returns 0 when all checks passed, 1 otherwise.
int run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

int resolve_threads(const RunOptions& opts);

}  // namespace eki
