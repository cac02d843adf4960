#pragma once

#include "imis/common.hpp"

#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace imis::sim {

/// Observations on a time grid. NaN marks an unobserved entry.
struct ObservationSet {
  std::vector<double> times;
  std::vector<std::string> columns;
  Matrix values;  // times.size() x columns.size()
  std::map<std::string, double> meta;  // generating parameters and seed
  bool domain_ok = true;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index column_index(const std::string& name) const;
  void validate() const;
};

struct RickerParams {
  double log_r = 0.5;
  double phi = 4.0;
  double sigma2_p = 0.01;
  double log_theta_tilde = 1.0;
  double carrying_capacity = 100.0;
  double initial_abundance = 3.0;
  std::size_t steps = 50;

  void validate() const;
};

struct RickerPath {
  ObservationSet observations;  // column "y", times 1..T (shorter when truncated)
  std::vector<double> latent;   // N_1..N_T
  bool domain_ok = true;
};

/// Latent abundance above this flags the path instead of overflowing.
inline constexpr double kRickerOverflow = 1e12;

/// N_{t+1} = N_t exp(r (1 - (N_t/K)^theta) + eps_t), eps_t ~ N(0, sigma2_p); y_t ~ Poisson(phi N_t).
/// All process noise is drawn before any count, so the latent path only depends on
/// the stream's first T normals.
RickerPath ricker_simulate(const RickerParams& params, Rng& rng);

/// Counts only, for synthetic-likelihood replicates. nullopt on a flagged path.
std::optional<std::vector<double>> ricker_counts(const RickerParams& params, Rng& rng);

/// theta = (a, b, c, sigma2_V, sigma2_R, V0, R0).
ObservationSet generate_fhn_data(std::span<const double> theta, std::span<const double> grid, Rng& rng);

/// Default FhN observation grid: 41 equally spaced points on [0, 20].
std::vector<double> default_fhn_grid();

inline constexpr double kEyamPopulation = 261.0;
inline constexpr std::size_t kEyamDays = 136;

/// Daily grid 1..days.
std::vector<double> daily_grid(std::size_t days = kEyamDays);

/// Columns "deaths" (cumulative, every day) and "infected" (last two days only).
/// theta = (alpha, beta, I0).
ObservationSet generate_sir_data(std::span<const double> theta, double population, std::span<const double> grid,
                                 Rng& rng);

/// CSV: header "time,<columns>", 17 significant digits, NA for missing values.
void write_csv(const ObservationSet& data, const std::filesystem::path& path);
ObservationSet read_csv(const std::filesystem::path& path);

/// Formats a double with 17 significant digits (NA for NaN).
std::string format_double(double v);
double parse_double(const std::string& field);

}  // namespace imis::sim
