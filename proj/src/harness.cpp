#include "imis/harness.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace imis::harness {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : obj.items())
    if (!allowed.count(item.key())) throw ConfigError(where + ": unknown key '" + item.key() + "'");
}

template <typename T>
void read_if(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

std::size_t read_count(const json& obj, const char* key, std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ConfigError(std::string("'") + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

std::string fhn_family(const std::string& model) {
  if (model == "fhn" || model == "fhn1" || model == "fhn2") return "fhn";
  return model;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string csv_field(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n') ch = ';';
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    out.push_back(field);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

json vector_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(std::isfinite(v(i)) ? json(v(i)) : json(nullptr));
  return out;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

std::size_t env_threads() {
  const char* raw = std::getenv("IMIS_THREADS");
  if (!raw || !*raw) return 1;
  char* end = nullptr;
  const unsigned long v = std::strtoul(raw, &end, 10);
  if (*end != '\0' || v == 0) throw ConfigError("IMIS_THREADS must be a positive integer");
  return v;
}

ExperimentConfig parse_config(const json& j, const std::filesystem::path& base_dir) {
  try {
    check_keys(j, "config", {"label", "model", "variant", "n0", "b", "d", "q", "j", "n_iter", "seed", "threads",
                             "shotgun_methods", "prior", "model_options", "data", "output_dir", "emit"});
    ExperimentConfig c;
    read_if(j, "label", c.label);
    if (!j.contains("model")) throw ConfigError("config: 'model' is required");
    c.run.model = j.at("model").get<std::string>();
    if (!std::set<std::string>{"fhn1", "fhn2", "sir", "ricker"}.count(c.run.model))
      throw ConfigError("config: unknown model '" + c.run.model + "'");
    if (j.contains("variant")) c.run.variant = core::parse_variant(j.at("variant").get<std::string>());
    c.run.n0 = read_count(j, "n0", c.run.n0);
    c.run.b = read_count(j, "b", c.run.b);
    c.run.d = read_count(j, "d", c.run.d);
    c.run.q = read_count(j, "q", c.run.q);
    c.run.j = read_count(j, "j", c.run.j);
    c.run.n_iter = read_count(j, "n_iter", c.run.n_iter);
    read_if(j, "seed", c.run.seed);
    c.run.threads = read_count(j, "threads", env_threads());
    if (j.contains("shotgun_methods")) {
      c.run.shotgun_methods.clear();
      for (const auto& m : j.at("shotgun_methods")) c.run.shotgun_methods.push_back(est::parse_method(m.get<std::string>()));
    }
    if (c.run.model == "sir") c.model_options.conditional_max_i0 = c.run.q;

    if (j.contains("prior")) {
      const json& p = j.at("prior");
      check_keys(p, "prior", {"normal_reading"});
      if (p.contains("normal_reading")) {
        const auto r = p.at("normal_reading").get<std::string>();
        if (r == "sd") c.model_options.normal_reading = model::NormalReading::StandardDeviation;
        else if (r == "variance") c.model_options.normal_reading = model::NormalReading::Variance;
        else throw ConfigError("prior.normal_reading must be 'sd' or 'variance'");
      }
    }
    if (j.contains("model_options")) {
      const json& m = j.at("model_options");
      check_keys(m, "model_options", {"n_replicates", "ridge", "population", "subset_size", "gp_lambda",
                                      "gp_knot_refinement", "bandwidth", "optimizer_max_iterations"});
      c.model_options.n_replicates = read_count(m, "n_replicates", c.model_options.n_replicates);
      read_if(m, "ridge", c.model_options.ridge);
      read_if(m, "population", c.model_options.population);
      c.model_options.subset_size = read_count(m, "subset_size", c.model_options.subset_size);
      if (m.contains("gp_lambda")) {
        const json& l = m.at("gp_lambda");
        c.model_options.gp.lambda = l.is_array() ? l.get<std::vector<double>>() : std::vector<double>{l.get<double>(), l.get<double>()};
      }
      c.model_options.gp.knot_refinement =
          read_count(m, "gp_knot_refinement", c.model_options.gp.knot_refinement);
      if (m.contains("bandwidth")) c.model_options.smooth.bandwidth = m.at("bandwidth").get<double>();
      c.model_options.optimizer.max_iterations =
          read_count(m, "optimizer_max_iterations", c.model_options.optimizer.max_iterations);
    }
    if (j.contains("data")) {
      const json& d = j.at("data");
      check_keys(d, "data", {"source", "seed", "theta", "path"});
      const auto source = d.value("source", std::string("generate"));
      if (source == "generate") {
        c.data.kind = DataSource::Kind::Generate;
        read_if(d, "seed", c.data.seed);
        read_if(d, "theta", c.data.theta);
        if (d.contains("path")) throw ConfigError("data: 'path' only applies to source 'csv'");
      } else if (source == "csv") {
        c.data.kind = DataSource::Kind::Csv;
        if (!d.contains("path")) throw ConfigError("data: source 'csv' needs 'path'");
        std::filesystem::path p = d.at("path").get<std::string>();
        c.data.csv_path = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
      } else {
        throw ConfigError("data.source must be 'generate' or 'csv'");
      }
    }
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("emit")) {
      const json& e = j.at("emit");
      check_keys(e, "emit", {"samples", "weights", "modes", "trajectories", "trajectory_draws"});
      read_if(e, "samples", c.emit.samples);
      read_if(e, "weights", c.emit.weights);
      read_if(e, "modes", c.emit.modes);
      read_if(e, "trajectories", c.emit.trajectories);
      c.emit.trajectory_draws = read_count(e, "trajectory_draws", c.emit.trajectory_draws);
      if (c.emit.trajectories && c.run.model == "ricker") throw ConfigError("emit.trajectories: ricker has no ODE trajectory");
    }
    c.run.validate();
    return c;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

std::vector<double> default_truth(const std::string& model) {
  const std::string family = fhn_family(model);
  if (family == "fhn") return {0.2, 0.2, 3.0, 0.0025, 0.0025, -1.0, 1.0};
  if (family == "sir") return {0.1, 0.00062, 4.0};
  if (family == "ricker") return {0.5, 4.0, 0.01, 1.0};
  throw ConfigError("unknown model '" + model + "'");
}

sim::ObservationSet generate_dataset(const std::string& model, const std::vector<double>& theta_in, std::uint64_t seed,
                                     const model::ModelOptions& options) {
  const std::string family = fhn_family(model);
  const std::vector<double> theta = theta_in.empty() ? default_truth(model) : theta_in;
  Rng rng = make_stream(seed, 0xda7a, 0);
  sim::ObservationSet out;
  try {
    if (family == "fhn") {
      if (theta.size() != 7) throw ConfigError("fhn data needs 7 values (a, b, c, s2V, s2R, V0, R0)");
      if (theta[2] == 0.0 || theta[3] < 0.0 || theta[4] < 0.0) throw ConfigError("fhn: need c != 0 and variances >= 0");
      const auto grid = sim::default_fhn_grid();
      out = sim::generate_fhn_data(theta, grid, rng);
    } else if (family == "sir") {
      if (theta.size() != 3) throw ConfigError("sir data needs 3 values (alpha, beta, I0)");
      if (!(theta[0] >= 0.0) || !(theta[1] >= 0.0) || theta[2] != std::floor(theta[2]) || theta[2] < 1.0 ||
          theta[2] > options.population)
        throw ConfigError("sir: need alpha, beta >= 0 and integer I0 in [1, N]");
      const auto grid = sim::daily_grid();
      out = sim::generate_sir_data(theta, options.population, grid, rng);
    } else if (family == "ricker") {
      if (theta.size() != 4) throw ConfigError("ricker data needs 4 values (log r, phi, sigma2_p, log theta~)");
      sim::RickerParams p;
      p.log_r = theta[0];
      p.phi = theta[1];
      p.sigma2_p = theta[2];
      p.log_theta_tilde = theta[3];
      p.carrying_capacity = options.ricker_k;
      p.initial_abundance = options.ricker_n0;
      p.validate();
      out = sim::ricker_simulate(p, rng).observations;
    } else {
      throw ConfigError("unknown model '" + model + "'");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  out.meta["seed"] = static_cast<double>(seed);
  for (std::size_t i = 0; i < theta.size(); ++i) out.meta["theta" + std::to_string(i)] = theta[i];
  return out;
}

std::shared_ptr<const sim::ObservationSet> load_data(const ExperimentConfig& config) {
  if (config.data.kind == DataSource::Kind::Csv) {
    try {
      return std::make_shared<const sim::ObservationSet>(sim::read_csv(config.data.csv_path));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("data: ") + e.what());
    }
  }
  return std::make_shared<const sim::ObservationSet>(
      generate_dataset(config.run.model, config.data.theta, config.data.seed, config.model_options));
}

void write_samples_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                       const std::vector<Vector>& samples) {
  auto out = open_out(path);
  for (std::size_t k = 0; k < names.size(); ++k) out << (k ? "," : "") << names[k];
  out << '\n';
  for (const Vector& s : samples) {
    for (Eigen::Index k = 0; k < s.size(); ++k) out << (k ? "," : "") << sim::format_double(s(k));
    out << '\n';
  }
}

std::vector<Vector> read_samples_csv(const std::filesystem::path& path, const std::vector<std::string>& names) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open samples " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("samples file is empty");
  const auto header = split_csv(line);
  std::vector<std::size_t> cols;
  for (const auto& n : names) {
    auto it = std::find(header.begin(), header.end(), n);
    if (it == header.end()) throw ConfigError("samples file lacks column '" + n + "'");
    cols.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  std::vector<Vector> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) throw ConfigError("samples file: ragged row");
    Vector v(static_cast<Eigen::Index>(names.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) v(static_cast<Eigen::Index>(k)) = sim::parse_double(fields[cols[k]]);
    out.push_back(std::move(v));
  }
  return out;
}

void write_weights_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                       const core::ParticleSystem& ps) {
  auto out = open_out(path);
  for (const auto& n : names) out << n << ',';
  out << "log_lik,log_prior,log_weight,weight\n";
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (Eigen::Index k = 0; k < ps.thetas[i].size(); ++k) out << sim::format_double(ps.thetas[i](k)) << ',';
    out << sim::format_double(ps.log_liks[i]) << ',' << sim::format_double(ps.log_priors[i]) << ','
        << sim::format_double(ps.log_weights[i]) << ',' << sim::format_double(std::exp(ps.log_weights[i])) << '\n';
  }
}

void write_modes_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                     const std::vector<core::ModeRecord>& modes) {
  auto out = open_out(path);
  out << "d,q,label,method,used,skip_reason,converged,objective,log_posterior,init_index,excluded";
  for (const auto& n : names) out << ",init_" << n;
  for (const auto& n : names) out << ",hat_" << n;
  out << '\n';
  for (const auto& m : modes) {
    out << m.d << ',' << m.q << ',' << csv_field(m.label) << ',' << est::method_name(m.method) << ',' << (m.used ? 1 : 0)
        << ',' << csv_field(m.skip_reason) << ',' << (m.converged ? 1 : 0) << ',' << sim::format_double(m.objective) << ','
        << sim::format_double(m.log_posterior) << ',' << m.init_index << ',' << m.excluded;
    for (std::size_t k = 0; k < names.size(); ++k)
      out << ',' << sim::format_double(k < static_cast<std::size_t>(m.init.size()) ? m.init(static_cast<Eigen::Index>(k)) : NAN);
    for (std::size_t k = 0; k < names.size(); ++k)
      out << ','
          << sim::format_double(k < static_cast<std::size_t>(m.theta_hat.size()) ? m.theta_hat(static_cast<Eigen::Index>(k))
                                                                                   : NAN);
    out << '\n';
  }
}

json report_json(const ExperimentConfig& config, const model::ModelSpec& spec, const core::RunResult& result) {
  const auto& r = result.report;
  json j;
  j["label"] = config.label;
  j["seed"] = r.config.seed;
  json cfg;
  cfg["model"] = r.config.model;
  cfg["variant"] = core::variant_name(r.config.variant);
  cfg["n0"] = r.config.n0;
  cfg["b"] = r.config.b;
  cfg["d"] = r.config.d;
  cfg["q"] = r.config.q;
  cfg["j"] = r.config.j;
  cfg["n_iter"] = r.config.n_iter;
  cfg["seed"] = r.config.seed;
  cfg["threads"] = r.config.threads;
  cfg["shotgun_methods"] = json::array();
  for (auto m : r.config.shotgun_methods) cfg["shotgun_methods"].push_back(est::method_name(m));
  cfg["normal_reading"] = config.model_options.normal_reading == model::NormalReading::StandardDeviation ? "sd" : "variance";
  cfg["n_replicates"] = config.model_options.n_replicates;
  j["config"] = cfg;
  json data;
  if (config.data.kind == DataSource::Kind::Csv) {
    data["source"] = "csv";
    data["path"] = config.data.csv_path.string();
  } else {
    data["source"] = "generate";
    data["seed"] = config.data.seed;
    data["theta"] = config.data.theta.empty() ? default_truth(config.run.model) : config.data.theta;
  }
  j["data"] = data;
  j["param_names"] = spec.param_names;
  j["iterations"] = r.iterations;
  j["stopped"] = r.stopped;
  j["n_particles"] = result.particles.size();
  j["n_components"] = result.particles.components.size();
  j["wall_seconds"] = r.wall_seconds;
  j["optimization_seconds"] = r.optimization_seconds;
  j["criteria_per_init"] = r.criteria_per_init;

  Vector mean = Vector::Zero(static_cast<Eigen::Index>(spec.dim()));
  for (const Vector& s : result.samples) mean += s;
  if (!result.samples.empty()) mean /= static_cast<double>(result.samples.size());
  json pm;
  for (std::size_t k = 0; k < spec.dim(); ++k) pm[spec.param_names[k]] = mean(static_cast<Eigen::Index>(k));
  j["posterior_mean"] = pm;

  j["diagnostics"] = json::array();
  for (const auto& d : r.diagnostics)
    j["diagnostics"].push_back({{"stage", d.stage},
                                {"iteration", d.iteration},
                                {"n_particles", d.n_particles},
                                {"max_weight", d.max_weight},
                                {"expected_unique", d.expected_unique},
                                {"threshold", d.threshold},
                                {"ess", d.ess},
                                {"weight_sum_error", d.weight_sum_error},
                                {"mixture_audit", d.mixture_audit}});
  j["modes"] = json::array();
  for (const auto& m : r.modes)
    j["modes"].push_back({{"d", m.d},
                          {"q", m.q},
                          {"label", m.label},
                          {"method", est::method_name(m.method)},
                          {"used", m.used},
                          {"skip_reason", m.skip_reason},
                          {"theta_hat", vector_json(m.theta_hat)},
                          {"objective", number_or_null(m.objective)},
                          {"log_posterior", number_or_null(m.log_posterior)},
                          {"excluded", m.excluded}});
  j["components"] = r.component_labels;
  j["warnings"] = r.warnings;
  return j;
}

std::vector<double> default_trajectory_times(const std::string& model) {
  std::vector<double> t;
  if (fhn_family(model) == "fhn") {
    for (int i = 0; i <= 200; ++i) t.push_back(0.1 * i);
  } else if (model == "sir") {
    for (std::size_t i = 0; i <= sim::kEyamDays; ++i) t.push_back(static_cast<double>(i));
  } else {
    throw ConfigError("model '" + model + "' has no ODE trajectory");
  }
  return t;
}

model::ModelSpec trajectory_model(const std::string& name, const model::ModelOptions& options) {
  auto stub = std::make_shared<sim::ObservationSet>();
  stub->times = {1.0};
  if (fhn_family(name) == "fhn") stub->columns = {"V", "R"};
  else if (name == "sir") stub->columns = {"deaths", "infected"};
  else throw ConfigError("model '" + name + "' has no ODE trajectory");
  stub->values = Matrix::Constant(1, static_cast<Eigen::Index>(stub->columns.size()), std::nan(""));
  try {
    return model::make_model(name, stub, options);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::vector<TrajectoryRow> trajectory_table(const model::ModelSpec& spec, const std::vector<Vector>& samples,
                                            std::size_t n_draws, const std::vector<double>& times) {
  if (!spec.trajectory) throw ConfigError("model '" + spec.name + "' has no ODE trajectory");
  if (samples.empty()) throw ConfigError("no samples to summarize");
  n_draws = std::min(n_draws, samples.size());
  Vector mean = Vector::Zero(samples.front().size());
  for (const Vector& s : samples) mean += s;
  mean /= static_cast<double>(samples.size());
  if (spec.name == "sir") mean(2) = std::round(mean(2));

  std::vector<TrajectoryRow> rows;
  auto emit = [&](const std::string& id, const Vector& theta) {
    const ode::Trajectory tr = spec.trajectory(theta, times);
    for (std::size_t s = 0; s < spec.state_names.size(); ++s)
      for (std::size_t k = 0; k < times.size(); ++k) {
        const auto row = static_cast<Eigen::Index>(k);
        const double v = row < tr.states.rows() ? tr.states(row, static_cast<Eigen::Index>(s)) : NAN;
        rows.push_back({id, spec.state_names[s], times[k], v});
      }
  };
  for (std::size_t i = 0; i < n_draws; ++i) emit(std::to_string(i), samples[i]);
  emit("mean", mean);
  return rows;
}

void write_trajectories_csv(const std::filesystem::path& path, const std::vector<TrajectoryRow>& rows) {
  auto out = open_out(path);
  out << "draw,state,time,value\n";
  for (const auto& r : rows)
    out << r.draw << ',' << r.state << ',' << sim::format_double(r.time) << ',' << sim::format_double(r.value) << '\n';
}

core::RunResult run_experiment(const ExperimentConfig& config) {
  const auto data = load_data(config);
  model::ModelSpec spec;
  try {
    spec = model::make_model(config.run.model, data, config.model_options);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  core::Sampler sampler(spec, config.run);
  core::RunResult result = sampler.run();

  const auto& dir = config.output_dir;
  std::filesystem::create_directories(dir);
  if (config.data.kind == DataSource::Kind::Generate) sim::write_csv(*data, dir / "data.csv");
  if (config.emit.samples) write_samples_csv(dir / "posterior_samples.csv", spec.param_names, result.samples);
  if (config.emit.weights) write_weights_csv(dir / "weights_pre_resample.csv", spec.param_names, result.particles);
  if (config.emit.modes) write_modes_csv(dir / "modes.csv", spec.param_names, result.report.modes);
  if (config.emit.trajectories) {
    const auto rows = trajectory_table(spec, result.samples, config.emit.trajectory_draws,
                                       default_trajectory_times(config.run.model));
    write_trajectories_csv(dir / "trajectories.csv", rows);
  }
  auto out = open_out(dir / "run_report.json");
  out << report_json(config, spec, result).dump(2) << '\n';
  return result;
}

}  // namespace imis::harness
