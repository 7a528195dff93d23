#include "eki/experiments.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "json.hpp"

namespace eki {
namespace {

namespace fs = std::filesystem;

std::string minimal_config(const std::string& extra = "") {
  return std::string(R"({
    "experiment": "rates",
    "problem": {
      "A": [[4.0, 0.0], [0.0, 1.0]],
      "Gamma": [[1.0, 0.0], [0.0, 1.0]],
      "y": [2.0, 1.0],
      "u_truth": [0.5, 1.0]
    },
    "flow": {
      "alpha": 2.0,
      "C0": [[2.0, -1.0], [-1.0, 2.0]],
      "m0": [4.0, 4.0]
    })") +
         extra + "\n}\n";
}

std::string key_path_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.key_path();
  }
  return "<no error>";
}

TEST(GridSpec, CoversLinearLogAndDegenerateSpacings) {
  GridSpec linear{0.0, 1.0, 5, false};
  const std::vector<double> lin = linear.points();
  ASSERT_EQ(lin.size(), 5u);
  EXPECT_EQ(lin.front(), 0.0);
  EXPECT_EQ(lin.back(), 1.0);
  EXPECT_NEAR(lin[2], 0.5, 1e-15);

  GridSpec log{1.0, 100.0, 3, true};
  const std::vector<double> lg = log.points();
  ASSERT_EQ(lg.size(), 3u);
  EXPECT_NEAR(lg[0], 1.0, 1e-12);
  EXPECT_NEAR(lg[1], 10.0, 1e-12);
  EXPECT_NEAR(lg[2], 100.0, 1e-12);

  GridSpec single{0.7, 9.0, 1, false};
  const std::vector<double> one = single.points();
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0], 0.7);
}

TEST(ParseConfig, AppliesDocumentedDefaults) {
  const ExperimentConfig cfg = parse_config(minimal_config());
  EXPECT_EQ(cfg.experiment, ExperimentKind::kRates);
  EXPECT_EQ(cfg.alpha, 2.0);
  EXPECT_EQ(cfg.sim.sigma_mode, SigmaMode::kDeterministic);
  EXPECT_EQ(cfg.sim.scheme, Scheme::kRk4);
  EXPECT_EQ(cfg.sim.dt, 1e-3);
  EXPECT_EQ(cfg.sim.t_end, 1.0);
  EXPECT_EQ(cfg.sim.sigma_scale, 1.0);
  EXPECT_EQ(cfg.sim.record_stride, 1);
  EXPECT_EQ(cfg.grid.t_start, 0.0);
  EXPECT_EQ(cfg.grid.t_end, 1.0);
  EXPECT_EQ(cfg.grid.num_points, 101);
  EXPECT_FALSE(cfg.grid.log_spaced);
  EXPECT_EQ(cfg.ensemble_size, 45);
  EXPECT_EQ(cfg.seed, 0u);
  EXPECT_EQ(cfg.output_dir, "out");
  ASSERT_TRUE(cfg.problem.u_truth.has_value());
}

TEST(ParseConfig, SchemeFollowsTheSigmaModeWhenOmitted) {
  const ExperimentConfig stoch = parse_config(minimal_config(
      R"(, "sim": {"sigma_mode": "stochastic", "dt": 0.01})"));
  EXPECT_EQ(stoch.sim.sigma_mode, SigmaMode::kStochastic);
  EXPECT_EQ(stoch.sim.scheme, Scheme::kEulerMaruyama);

  const ExperimentConfig det =
      parse_config(minimal_config(R"(, "sim": {"dt": 0.01})"));
  EXPECT_EQ(det.sim.scheme, Scheme::kRk4);
}

TEST(ParseConfig, ReportsTheOffendingKeyPath) {
  EXPECT_EQ(key_path_of(minimal_config(R"(, "surprise": 1)")), "surprise");
  EXPECT_EQ(key_path_of("{\"experiment\": \"rates\"}"), "problem");
  EXPECT_EQ(key_path_of(minimal_config(R"(, "sim": {"step": 0.1})")),
            "sim.step");
  EXPECT_EQ(key_path_of(minimal_config(R"(, "ensemble": {"J": 0})")),
            "ensemble.J");
  EXPECT_EQ(key_path_of(minimal_config(
                R"(, "grid": {"t_start": 0.0, "spacing": "log"})")),
            "grid.t_start");
  EXPECT_EQ(key_path_of(minimal_config(
                R"(, "sim": {"sigma_mode": "stochastic", "scheme": "rk4"})")),
            "sim");
  EXPECT_EQ(key_path_of("not json at all"), "");

  std::string bad_experiment = minimal_config();
  bad_experiment.replace(bad_experiment.find("rates"), 5, "nope!");
  EXPECT_EQ(key_path_of(bad_experiment), "experiment");

  std::string bad_alpha = minimal_config();
  bad_alpha.replace(bad_alpha.find("\"alpha\": 2.0"), 12, "\"alpha\": 0.5");
  EXPECT_EQ(key_path_of(bad_alpha), "flow.alpha");

  std::string bad_c0 = minimal_config();
  bad_c0.replace(bad_c0.find("[[2.0, -1.0], [-1.0, 2.0]]"), 26,
                 "[[1.0, 3.0], [3.0, 1.0]]");
  try {
    parse_config(bad_c0);
    FAIL() << "indefinite C0 accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key_path(), "flow.C0");
    EXPECT_NE(std::string(e.what()).find("positive definite"), std::string::npos);
  }

  std::string bad_y = minimal_config();
  bad_y.replace(bad_y.find("\"y\": [2.0, 1.0]"), 15, "\"y\": [2.0]");
  EXPECT_EQ(key_path_of(bad_y), "problem.y");

  std::string bad_gamma = minimal_config();
  bad_gamma.replace(bad_gamma.find("\"Gamma\": [[1.0, 0.0], [0.0, 1.0]]"), 33,
                    "\"Gamma\": [[1.0]]");
  EXPECT_EQ(key_path_of(bad_gamma), "problem.Gamma");
}

TEST(SerializeConfig, RoundTripsByteForByte) {
  const ExperimentConfig cfg = parse_config(minimal_config(
      R"(, "sim": {"sigma_mode": "stochastic", "dt": 0.01, "t_end": 0.5},
         "grid": {"t_start": 1.0, "t_end": 100.0, "num_points": 7,
                  "spacing": "log"},
         "ensemble": {"J": 12}, "seed": 31, "output_dir": "elsewhere")"));
  const std::string first = serialize_config(cfg);
  const ExperimentConfig reparsed = parse_config(first);
  const std::string second = serialize_config(reparsed);
  EXPECT_EQ(first, second);

  EXPECT_EQ(reparsed.seed, 31u);
  EXPECT_EQ(reparsed.ensemble_size, 12);
  EXPECT_EQ(reparsed.output_dir, "elsewhere");
  EXPECT_TRUE(reparsed.grid.log_spaced);
  EXPECT_EQ(reparsed.sim.scheme, Scheme::kEulerMaruyama);
  EXPECT_EQ((reparsed.c0 - cfg.c0).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((reparsed.problem.A - cfg.problem.A).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ExperimentRegistry, ListsAllSevenExperimentsOnce) {
  const auto& registry = experiment_registry();
  ASSERT_EQ(registry.size(), 7u);
  for (const auto& entry : registry) {
    EXPECT_EQ(experiment_name(entry.second), entry.first);
  }
  EXPECT_EQ(registry.front().first, "fig-covariances");
}

TEST(ResolveThreads, PrefersTheExplicitValueThenTheEnvironment) {
  RunOptions opts;
  opts.threads = 3;
  ::setenv("EKI_THREADS", "2", 1);
  EXPECT_EQ(resolve_threads(opts), 3);

  EXPECT_EQ(resolve_threads({}), 2);

  ::setenv("EKI_THREADS", "notanumber", 1);
  EXPECT_GE(resolve_threads({}), 1);
  ::setenv("EKI_THREADS", "-4", 1);
  EXPECT_GE(resolve_threads({}), 1);
  ::unsetenv("EKI_THREADS");
  EXPECT_GE(resolve_threads({}), 1);
}

TEST(RunExperiment, WritesThePromisedArtifactsAndPasses) {
  ExperimentConfig cfg = parse_config(minimal_config(
      R"(, "grid": {"t_start": 1.0, "t_end": 10000.0, "num_points": 21,
                    "spacing": "log"})"));
  const fs::path dir =
      fs::temp_directory_path() / "eki_test_run_experiment";
  fs::remove_all(dir);
  cfg.output_dir = dir.string();

  const int rc = run_experiment(cfg);
  EXPECT_EQ(rc, 0);
  ASSERT_TRUE(fs::exists(dir / "summary.json"));
  ASSERT_TRUE(fs::exists(dir / "trajectory.csv"));

  std::ifstream in(dir / "summary.json");
  nlohmann::json summary;
  in >> summary;
  EXPECT_EQ(summary.at("experiment"), "rates");
  EXPECT_EQ(summary.at("seed").get<uint64_t>(), 0u);
  EXPECT_TRUE(summary.at("passed").get<bool>());
  EXPECT_TRUE(summary.at("checks").is_object());
  EXPECT_FALSE(summary.at("checks").empty());
  EXPECT_TRUE(summary.at("metrics").is_object());
  for (const auto& item : summary.at("checks").items()) {
    EXPECT_TRUE(item.value().get<bool>()) << item.key();
  }
  fs::remove_all(dir);
}

TEST(RunExperiment, OptionsOverrideSeedAndOutputDir) {
  ExperimentConfig cfg = parse_config(minimal_config(
      R"(, "grid": {"t_start": 100.0, "t_end": 1000000.0, "num_points": 9,
                    "spacing": "log"}, "seed": 5)"));
  const fs::path dir =
      fs::temp_directory_path() / "eki_test_run_overrides";
  fs::remove_all(dir);
  RunOptions opts;
  opts.output_dir = dir.string();
  opts.seed = 123;
  EXPECT_EQ(run_experiment(cfg, opts), 0);
  std::ifstream in(dir / "summary.json");
  nlohmann::json summary;
  in >> summary;
  EXPECT_EQ(summary.at("seed").get<uint64_t>(), 123u);
  fs::remove_all(dir);
}

TEST(LoadConfig, ReportsUnreadableFiles) {
  EXPECT_THROW(load_config("/nonexistent/eki_config.json"), ConfigError);
}

}  // namespace
}  // namespace eki
