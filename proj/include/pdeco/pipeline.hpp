#pragma once

// Run configuration and the four pipeline commands behind the `pdeco` tool.
//
// One JSON file may hold a section per command:
//
//   { "gen": {...}, "train": {...}, "optimize": {...}, "gradcheck": {...} }
//
// Unknown sections or keys raise ConfigError. Missing keys keep the defaults
// declared below.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pdeco/dataset.hpp"
#include "pdeco/gradcheck.hpp"
#include "pdeco/hybrid.hpp"
#include "pdeco/training.hpp"

namespace pdeco {

struct GenRunConfig {
  std::size_t num_traj = 100;
  std::size_t nx = 32;
  std::size_t ny = 32;
  OptimizerConfig optimizer{};  // steps 12, eta 0.5, r_f 1.5
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::filesystem::path out = "store";
};

struct TrainRunConfig {
  std::filesystem::path store = "store";
  std::filesystem::path out = "model";
  std::optional<std::filesystem::path> init;  // resume from this checkpoint
  double split_ratio = 0.8;
  std::uint64_t split_seed = 0;
  std::vector<double> alpha_sweep;  // non-empty: one training per value
  TrainConfig train{};
  RnoConfig model{};
};

struct OptimizeRunConfig {
  std::optional<std::filesystem::path> checkpoint;
  std::filesystem::path out = "optimize";
  std::uint64_t instance_seed = 0;  // problem drawn by the instance sampler
  std::size_t nx = 32;
  std::size_t ny = 32;
  std::uint64_t seed = 0;  // noise stream
  HybridConfig hybrid{};
};

struct GradcheckRunConfig {
  check::SuiteOptions suite{};
};

struct RunConfig {
  GenRunConfig gen;
  TrainRunConfig train;
  OptimizeRunConfig optimize;
  GradcheckRunConfig gradcheck;
};

/// Parses JSON text. ConfigError on malformed JSON, unknown keys or values
/// of the wrong type.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

struct GenReport {
  StoreManifest manifest;
  std::vector<double> descent_fraction;  // per trajectory
  std::vector<double> initial_J;
  std::vector<double> final_J;
};

struct TrainReport {
  double alpha = 0.0;
  std::filesystem::path dir;  // checkpoint, metrics.json, loss.csv
  TrainResult result;
};

struct OptimizeReport {
  RunLog log;
  std::filesystem::path csv;
};

GenReport cmd_gen(const GenRunConfig& cfg);
/// One report per alpha (a single one without a sweep).
std::vector<TrainReport> cmd_train(const TrainRunConfig& cfg);
OptimizeReport cmd_optimize(const OptimizeRunConfig& cfg);
std::vector<check::CheckResult> cmd_gradcheck(const GradcheckRunConfig& cfg);

/// JSON rendering of the final metrics and the loss curve.
std::string metrics_json(const TrainResult& result, const TrainConfig& cfg);
std::string loss_csv(const TrainResult& result);

/// Process exit code for an exception escaping a command:
/// 2 usage/config, 3 I/O and format, 1 otherwise.
int exit_code_for(const std::exception& e);

}  // namespace pdeco
