#pragma once

// Experiment configuration, dataset generation and artifact writers behind the CLI.

#include "imis/imis_core.hpp"
#include "imis/models.hpp"
#include "imis/simulators.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace imis::harness {

/// Bad configuration or input files; the CLI maps it to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataSource {
  enum class Kind { Generate, Csv } kind = Kind::Generate;
  std::filesystem::path csv_path;
  std::uint64_t seed = 1;
  std::vector<double> theta;  // generating parameters; empty means the model's default truth
};

struct EmitFlags {
  bool samples = true;
  bool weights = true;
  bool modes = true;
  bool trajectories = false;
  std::size_t trajectory_draws = 20;
};

struct ExperimentConfig {
  std::string label;
  core::RunConfig run;
  model::ModelOptions model_options;
  DataSource data;
  std::filesystem::path output_dir = "imis_out";
  EmitFlags emit;
};

ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Generating parameters used when a config or command gives none.
std::vector<double> default_truth(const std::string& model);

/// Simulates a dataset for "fhn"/"fhn1"/"fhn2" (7 values), "sir" (alpha, beta, I0)
/// or "ricker" (log r, phi, sigma2_p, log theta~). Throws ConfigError outside the support.
sim::ObservationSet generate_dataset(const std::string& model, const std::vector<double>& theta, std::uint64_t seed,
                                     const model::ModelOptions& options = {});

std::shared_ptr<const sim::ObservationSet> load_data(const ExperimentConfig& config);

void write_samples_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                       const std::vector<Vector>& samples);
/// Reads a samples table; columns are matched to `names` by header.
std::vector<Vector> read_samples_csv(const std::filesystem::path& path, const std::vector<std::string>& names);
void write_weights_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                       const core::ParticleSystem& ps);
void write_modes_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                     const std::vector<core::ModeRecord>& modes);

nlohmann::json report_json(const ExperimentConfig& config, const model::ModelSpec& spec, const core::RunResult& result);

struct TrajectoryRow {
  std::string draw;  // sample row number, or "mean"
  std::string state;
  double time = 0.0;
  double value = 0.0;
};

/// Solves the model at the first n_draws samples and at their posterior mean.
std::vector<TrajectoryRow> trajectory_table(const model::ModelSpec& spec, const std::vector<Vector>& samples,
                                            std::size_t n_draws, const std::vector<double>& times);
void write_trajectories_csv(const std::filesystem::path& path, const std::vector<TrajectoryRow>& rows);

/// Plot grid: 0..20 by 0.1 for FhN, days 0..136 for SIR.
std::vector<double> default_trajectory_times(const std::string& model);

/// Model spec usable for trajectories without observations (likelihood unusable).
model::ModelSpec trajectory_model(const std::string& name, const model::ModelOptions& options = {});

/// Runs one experiment and writes its artifacts. Returns the result for callers that inspect it.
core::RunResult run_experiment(const ExperimentConfig& config);

/// Thread count from IMIS_THREADS, or 1.
std::size_t env_threads();

}  // namespace imis::harness
