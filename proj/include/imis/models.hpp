#pragma once

// Target posteriors for the experiments: priors, likelihoods with the flood rule,
// and the optimization criteria each model offers to the sampler.

#include "imis/common.hpp"
#include "imis/estimators.hpp"
#include "imis/ode_engine.hpp"
#include "imis/simulators.hpp"
#include "imis/synthetic_likelihood.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace imis::model {

/// Log-likelihood assigned where the model is undefined (trajectory left its domain).
/// Distinct from -inf, which means the prior is zero.
inline constexpr double kFloodLogLik = -1e12;

/// How the second argument of N(m, s) in a prior table is read.
enum class NormalReading { StandardDeviation, Variance };

double normal_logpdf(double x, double mean, double sd);
/// Shape/scale: density proportional to x^{-shape-1} exp(-scale/x).
double inv_gamma_logpdf(double x, double shape, double scale);
double inv_gamma_sample(double shape, double scale, Rng& rng);
double chi_squared_logpdf(double x, double df);
/// Shape/rate.
double gamma_logpdf(double x, double shape, double rate);
/// Binomial(k | n, p) with Binomial(0 | n, 0) = 1; zero-probability outcomes give -inf.
double binomial_logpmf(double k, double n, double p);

/// Whether the sampler asks for a single optimizer per init (IMIS-Opt) or the shotgun set.
enum class OptimizationMode { Single, Shotgun };

struct CriteriaRequest {
  OptimizationMode mode = OptimizationMode::Shotgun;
  std::vector<est::Method> methods;  // FhN shotgun methods; ignored by the other models
  std::size_t q = 3;                 // number of criteria where the model chooses them (synthetic subsets)
  std::uint64_t seed = 0;            // seeds random criterion construction (subset draws)
};

/// One optimization criterion. `fit` starts from a full parameter vector and
/// returns theta_hat in the same coordinates; the sampler adds the Hessian.
/// Exceptions mark the cell as failed.
struct Criterion {
  est::Method method = est::Method::NLS;
  std::string label;
  std::function<est::EstimatorResult(const Vector& init, Rng& rng)> fit;
};

struct ModelOptions {
  NormalReading normal_reading = NormalReading::StandardDeviation;
  double population = sim::kEyamPopulation;  // SIR
  std::size_t n_replicates = 30;             // synthetic likelihood N_Z
  double ridge = 1e-6;
  std::size_t subset_size = 7;
  std::size_t conditional_max_i0 = 10;       // SIR conditional criteria cover I0 = 1..this
  est::SmoothOptions smooth;
  est::GpSettings gp;
  opt::NelderMeadOptions optimizer;
  // theta-Ricker constants not estimated
  double ricker_k = 100.0;
  double ricker_n0 = 3.0;
};

struct ModelSpec {
  std::string name;
  std::vector<std::string> param_names;
  std::vector<bool> free_mask;      // coordinates that move; the rest stay at their prior draw
  std::vector<bool> discrete_mask;  // coordinates held fixed inside Gaussian proposals
  std::function<double(const Vector&)> log_prior;
  std::function<Vector(Rng&)> prior_sample;
  /// Never -inf or NaN: undefined points return kFloodLogLik. Stochastic models consume rng.
  std::function<double(const Vector&, Rng&)> log_lik;
  bool stochastic = false;
  /// Finite-difference steps for the target Hessian over the Gaussian coordinates.
  std::function<Vector(const Vector&)> hessian_steps;
  std::function<std::vector<Criterion>(const CriteriaRequest&)> make_criteria;

  /// Deterministic trajectory for plotting; empty for models without one.
  std::vector<std::string> state_names;
  std::function<ode::Trajectory(const Vector&, const std::vector<double>& times)> trajectory;

  std::shared_ptr<const sim::ObservationSet> data;

  std::size_t dim() const { return param_names.size(); }
  /// Indices that are free and continuous (the Gaussian coordinates).
  std::vector<std::size_t> gaussian_coordinates() const;
  double log_posterior(const Vector& theta, Rng& rng) const;
};

/// Gaussian log-likelihood of both FhN states; theta = (a, b, c, s2V, s2R, V0, R0).
double fhn_loglik(const Vector& theta, const sim::ObservationSet& data);

/// Binomial likelihood of cumulative deaths (column "deaths") and infected counts
/// (column "infected") around the SIR solution; theta = (alpha, beta, I0).
double sir_loglik(const Vector& theta, const sim::ObservationSet& data, double population);

/// Model 1: only c is estimated; a = b = 0.2, sd 0.05 noise, (V0, R0) = (-1, 1).
ModelSpec make_fhn1(std::shared_ptr<const sim::ObservationSet> data, const ModelOptions& options = {});
/// Model 2: all seven parameters.
ModelSpec make_fhn2(std::shared_ptr<const sim::ObservationSet> data, const ModelOptions& options = {});
ModelSpec make_sir(std::shared_ptr<const sim::ObservationSet> data, const ModelOptions& options = {});
/// theta = (log r, phi, sigma2_p, log theta~); data is the count series in column "y".
ModelSpec make_ricker(std::shared_ptr<const sim::ObservationSet> data, const ModelOptions& options = {});

/// Selects "fhn1", "fhn2", "sir" or "ricker".
ModelSpec make_model(const std::string& name, std::shared_ptr<const sim::ObservationSet> data,
                     const ModelOptions& options = {});

/// Fixed FhN Model 1 settings.
inline constexpr double kFhnA = 0.2, kFhnB = 0.2, kFhnNoiseVar = 0.0025, kFhnV0 = -1.0, kFhnR0 = 1.0;

}  // namespace imis::model
