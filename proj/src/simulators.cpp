#include "imis/simulators.hpp"

#include "imis/ode_engine.hpp"

#include <cmath>
#include <stdexcept>

namespace imis::sim {

Eigen::Index ObservationSet::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return static_cast<Eigen::Index>(i);
  throw std::invalid_argument("observation set has no column '" + name + "'");
}

void ObservationSet::validate() const {
  if (static_cast<std::size_t>(values.rows()) != times.size())
    throw std::invalid_argument("observation rows do not match times");
  if (static_cast<std::size_t>(values.cols()) != columns.size())
    throw std::invalid_argument("observation columns do not match header");
}

void RickerParams::validate() const {
  if (std::isnan(log_r) || std::isnan(log_theta_tilde)) throw std::invalid_argument("ricker: NaN parameter");
  if (!(phi > 0.0)) throw std::invalid_argument("ricker: phi must be positive");
  if (!(sigma2_p >= 0.0)) throw std::invalid_argument("ricker: process variance must be non-negative");
  if (!(carrying_capacity > 0.0)) throw std::invalid_argument("ricker: K must be positive");
  if (!(initial_abundance > 0.0)) throw std::invalid_argument("ricker: N0 must be positive");
  if (steps == 0) throw std::invalid_argument("ricker: T must be positive");
}

namespace {

struct LatentPath {
  std::vector<double> abundance;
  bool ok = true;
};

LatentPath ricker_latent(const RickerParams& p, Rng& rng) {
  std::normal_distribution<double> noise(0.0, std::sqrt(p.sigma2_p));
  std::vector<double> eps(p.steps);
  for (double& e : eps) e = p.sigma2_p > 0.0 ? noise(rng) : 0.0;

  const double r = std::exp(p.log_r);
  const double shape = std::exp(p.log_theta_tilde);
  LatentPath path;
  path.abundance.reserve(p.steps);
  double n = p.initial_abundance;
  for (std::size_t t = 0; t < p.steps; ++t) {
    n = n * std::exp(r * (1.0 - std::pow(n / p.carrying_capacity, shape)) + eps[t]);
    if (!std::isfinite(n) || n > kRickerOverflow) {
      path.ok = false;
      break;
    }
    path.abundance.push_back(n);
  }
  return path;
}

double poisson_draw(double mean, Rng& rng) {
  if (mean <= 0.0) return 0.0;
  std::poisson_distribution<long long> dist(mean);
  return static_cast<double>(dist(rng));
}

}  // namespace

RickerPath ricker_simulate(const RickerParams& params, Rng& rng) {
  params.validate();
  LatentPath latent = ricker_latent(params, rng);
  RickerPath out;
  out.domain_ok = latent.ok;
  out.latent = latent.abundance;
  auto& obs = out.observations;
  const auto rows = static_cast<Eigen::Index>(latent.abundance.size());
  obs.columns = {"y"};
  obs.values.resize(rows, 1);
  obs.times.resize(latent.abundance.size());
  for (Eigen::Index t = 0; t < rows; ++t) {
    obs.times[static_cast<std::size_t>(t)] = static_cast<double>(t + 1);
    obs.values(t, 0) = poisson_draw(params.phi * latent.abundance[static_cast<std::size_t>(t)], rng);
  }
  obs.domain_ok = latent.ok;
  obs.meta = {{"log_r", params.log_r},
              {"phi", params.phi},
              {"sigma2_p", params.sigma2_p},
              {"log_theta_tilde", params.log_theta_tilde},
              {"K", params.carrying_capacity},
              {"N0", params.initial_abundance},
              {"T", static_cast<double>(params.steps)}};
  return out;
}

std::optional<std::vector<double>> ricker_counts(const RickerParams& params, Rng& rng) {
  LatentPath latent = ricker_latent(params, rng);
  if (!latent.ok) return std::nullopt;
  std::vector<double> y(latent.abundance.size());
  for (std::size_t t = 0; t < y.size(); ++t) y[t] = poisson_draw(params.phi * latent.abundance[t], rng);
  return y;
}

std::vector<double> default_fhn_grid() {
  std::vector<double> grid(41);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = 0.5 * static_cast<double>(i);
  return grid;
}

ObservationSet generate_fhn_data(std::span<const double> theta, std::span<const double> grid, Rng& rng) {
  if (theta.size() != 7) throw std::invalid_argument("fhn data: theta must have 7 entries");
  const double var_v = theta[3], var_r = theta[4];
  if (!(var_v > 0.0) || !(var_r > 0.0)) throw std::invalid_argument("fhn data: noise variances must be positive");

  ode::OdeProblem problem{ode::fhn_rhs, {theta[5], theta[6]}, grid.front(), {grid.begin(), grid.end()}, 0.05, {}};
  const double params[3] = {theta[0], theta[1], theta[2]};
  const ode::Trajectory traj = ode::solve_rk4(problem, params);

  ObservationSet obs;
  obs.times = problem.t_grid;
  obs.columns = {"V", "R"};
  obs.values = traj.states;
  obs.domain_ok = traj.domain_ok;
  std::normal_distribution<double> noise(0.0, 1.0);
  const double sd[2] = {std::sqrt(var_v), std::sqrt(var_r)};
  for (Eigen::Index i = 0; i < obs.values.rows(); ++i)
    for (Eigen::Index s = 0; s < 2; ++s) obs.values(i, s) += sd[s] * noise(rng);
  obs.meta = {{"a", theta[0]}, {"b", theta[1]}, {"c", theta[2]}, {"sigma2_V", var_v},
              {"sigma2_R", var_r}, {"V0", theta[5]}, {"R0", theta[6]}};
  return obs;
}

std::vector<double> daily_grid(std::size_t days) {
  std::vector<double> grid(days);
  for (std::size_t i = 0; i < days; ++i) grid[i] = static_cast<double>(i + 1);
  return grid;
}

ObservationSet generate_sir_data(std::span<const double> theta, double population, std::span<const double> grid,
                                 Rng& rng) {
  if (theta.size() != 3) throw std::invalid_argument("sir data: theta must be (alpha, beta, I0)");
  const double i0 = theta[2];
  if (!(i0 >= 1.0 && i0 <= population)) throw std::invalid_argument("sir data: I0 must lie in [1, N]");
  if (grid.size() < 2) throw std::invalid_argument("sir data: need at least two observation days");

  ode::OdeProblem problem{ode::sir_rhs, {population - i0, i0, 0.0}, 0.0, {grid.begin(), grid.end()}, 0.1,
                          ode::sir_admissible(population)};
  const double params[2] = {theta[0], theta[1]};
  const ode::Trajectory traj = ode::solve_rk4(problem, params);

  ObservationSet obs;
  obs.times = problem.t_grid;
  obs.columns = {"deaths", "infected"};
  const auto n = static_cast<Eigen::Index>(grid.size());
  obs.values = Matrix::Constant(n, 2, std::numeric_limits<double>::quiet_NaN());
  obs.domain_ok = traj.domain_ok;
  obs.meta = {{"alpha", theta[0]}, {"beta", theta[1]}, {"I0", i0}, {"N", population}};
  if (!traj.domain_ok) return obs;

  const auto trials = static_cast<int>(std::llround(population));
  auto draw = [&](double expected) {
    const double p = std::clamp(expected / population, 0.0, 1.0);
    std::binomial_distribution<int> dist(trials, p);
    return static_cast<double>(dist(rng));
  };
  for (Eigen::Index i = 0; i < n; ++i) obs.values(i, 0) = draw(traj.states(i, 2));
  for (Eigen::Index i = n - 2; i < n; ++i) obs.values(i, 1) = draw(traj.states(i, 1));
  return obs;
}

}  // namespace imis::sim
