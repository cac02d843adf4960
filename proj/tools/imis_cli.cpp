#include "imis/harness.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

namespace {

namespace h = imis::harness;

int cmd_run(const std::string& config_path, const std::optional<std::uint64_t>& seed,
            const std::optional<std::string>& out, const std::optional<std::size_t>& threads) {
  h::ExperimentConfig config = h::load_config(config_path);
  if (seed) config.run.seed = *seed;
  if (out) config.output_dir = *out;
  if (threads) {
    if (*threads == 0) throw h::ConfigError("--threads must be positive");
    config.run.threads = *threads;
  }
  const auto result = h::run_experiment(config);
  const auto& r = result.report;
  std::printf("%s %s: %zu particles, %zu components, %zu importance iterations, stopped=%s, %.1f s\n",
              r.config.model.c_str(), imis::core::variant_name(r.config.variant).c_str(), result.particles.size(),
              result.particles.components.size(), r.iterations, r.stopped ? "yes" : "no", r.wall_seconds);
  std::printf("artifacts in %s\n", config.output_dir.string().c_str());
  for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  return 0;
}

int cmd_generate(const std::string& model, const std::vector<double>& theta, std::uint64_t seed,
                 const std::string& out) {
  const auto data = h::generate_dataset(model, theta, seed);
  imis::sim::write_csv(data, out);
  nlohmann::json meta;
  meta["model"] = model;
  meta["seed"] = seed;
  meta["theta"] = theta.empty() ? h::default_truth(model) : theta;
  meta["columns"] = data.columns;
  meta["rows"] = data.rows();
  meta["domain_ok"] = data.domain_ok;
  std::ofstream side(out + ".meta.json");
  if (!side) throw std::runtime_error("cannot write " + out + ".meta.json");
  side << meta.dump(2) << '\n';
  std::printf("wrote %s (%ld rows)\n", out.c_str(), static_cast<long>(data.rows()));
  return 0;
}

int cmd_trajectories(const std::string& samples_path, const std::string& model, std::size_t draws,
                     const std::optional<std::string>& data_path, const std::string& out) {
  const auto spec = h::trajectory_model(model);
  const auto samples = h::read_samples_csv(samples_path, spec.param_names);
  std::vector<double> times;
  if (data_path) {
    try {
      times = imis::sim::read_csv(*data_path).times;
    } catch (const std::exception& e) {
      throw h::ConfigError(e.what());
    }
  } else {
    times = h::default_trajectory_times(model);
  }
  const auto rows = h::trajectory_table(spec, samples, draws, times);
  h::write_trajectories_csv(out, rows);
  std::printf("wrote %s (%zu rows)\n", out.c_str(), rows.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental mixture importance sampling with shotgun optimization"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run an experiment from a JSON config");
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> threads;
  run->add_option("--config", config_path, "experiment config (JSON)")->required();
  run->add_option("--seed", seed, "override the run seed");
  run->add_option("--out", out_dir, "override the output directory");
  run->add_option("--threads", threads, "worker threads (overrides IMIS_THREADS)");

  auto* gen = app.add_subcommand("generate", "simulate a dataset");
  std::string gen_model, gen_out;
  std::vector<double> gen_theta;
  std::uint64_t gen_seed = 1;
  gen->add_option("--model", gen_model, "fhn, sir or ricker")->required();
  gen->add_option("--theta", gen_theta, "generating parameters (comma separated)")->delimiter(',');
  gen->add_option("--seed", gen_seed, "simulation seed");
  gen->add_option("--out", gen_out, "output CSV; a .meta.json sidecar is written next to it")->required();

  auto* traj = app.add_subcommand("trajectories", "solve the ODE at posterior draws and their mean");
  std::string traj_samples, traj_model, traj_out;
  std::size_t traj_draws = 20;
  std::optional<std::string> traj_data;
  traj->add_option("--samples", traj_samples, "posterior_samples.csv")->required();
  traj->add_option("--model", traj_model, "fhn1, fhn2 or sir")->required();
  traj->add_option("--draws", traj_draws, "number of sample rows to solve");
  traj->add_option("--data", traj_data, "dataset whose time grid is used");
  traj->add_option("--out", traj_out, "output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run) return cmd_run(config_path, seed, out_dir, threads);
    if (*gen) return cmd_generate(gen_model, gen_theta, gen_seed, gen_out);
    if (*traj) return cmd_trajectories(traj_samples, traj_model, traj_draws, traj_data, traj_out);
  } catch (const imis::core::AllFloodError& e) {
    std::fprintf(stderr, "all-flood abort: %s\n", e.what());
    return 2;
  } catch (const h::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 1;
}
