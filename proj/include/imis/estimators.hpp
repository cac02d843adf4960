#pragma once

// ODE parameter estimators used as optimization criteria: nonlinear least
// squares, two-stage derivative matching and generalized profiling.

#include "imis/bspline.hpp"
#include "imis/common.hpp"
#include "imis/linalg_stats.hpp"
#include "imis/nelder_mead.hpp"
#include "imis/ode_engine.hpp"
#include "imis/simulators.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace imis::est {

/// Objective value assigned to inadmissible or failed evaluations (minimization).
inline constexpr double kFloodObjective = 1e12;

enum class Method { NLS, TwoStage, GP, ConditionalNLS, SyntheticSubset, SyntheticFull, ConditionalPosterior };

std::string method_name(Method m);
Method parse_method(const std::string& name);

struct EstimatorResult {
  Vector theta_hat;
  std::optional<linalg::CovarianceMatrix> inv_neg_hessian;  // of the target posterior at theta_hat
  double objective_value = 0.0;
  Method method = Method::NLS;
  bool converged = false;
  Vector init;
  std::string label;  // criterion name, e.g. "NLS" or "ConditionalNLS[I0=3]"
};

/// An ODE fit in "estimation coordinates" z = (free ODE parameters, initial state if estimated).
struct OdeFitProblem {
  ode::RhsFn rhs;
  ode::JacobianFn jacobian;  // needed by generalized profiling
  std::vector<double> params;             // full ODE parameter vector; free entries are overwritten
  std::vector<std::size_t> free_params;   // indices into params
  std::vector<double> x0;                 // initial state at t0
  bool estimate_x0 = false;
  double t0 = 0.0;
  double step = 0.05;
  ode::AdmissibleFn admissible;
  std::shared_ptr<const sim::ObservationSet> data;
  std::vector<Eigen::Index> state_columns;  // data column observing each state, -1 if unobserved
  std::function<bool(const Vector& z)> feasible;  // optional; infeasible z gets kFloodObjective

  void validate() const;
  std::size_t n_states() const { return x0.size(); }
  std::size_t dim() const { return free_params.size() + (estimate_x0 ? x0.size() : 0); }
  void unpack(const Vector& z, std::vector<double>& params_out, std::vector<double>& x0_out) const;
  Vector pack(const std::vector<double>& params_in, const std::vector<double>& x0_in) const;
  ode::OdeProblem ode_problem(const std::vector<double>& x0_in) const;
};

struct OdeFit {
  Vector z;
  std::vector<double> params;
  std::vector<double> x0;
  std::vector<double> state_sse;         // residual sum of squares per state against its fitted curve
  std::vector<std::size_t> state_count;  // observed entries per state
  double objective = kFloodObjective;
  bool converged = false;
  Vector init;
};

struct FitOptions {
  opt::NelderMeadOptions optimizer;
};

/// Sum over observed entries of (y - X(t))^2; kFloodObjective on a domain failure.
double nls_objective(const OdeFitProblem& problem, const Vector& z);

/// Per-state squared residuals of the ODE solution at (params, x0) against the data.
/// False when the solution leaves the admissible domain.
bool ode_state_sse(const OdeFitProblem& problem, const std::vector<double>& params, const std::vector<double>& x0,
                   std::vector<double>& sse, std::vector<std::size_t>& counts);

OdeFit nls_fit(const OdeFitProblem& problem, const Vector& z_init, const FitOptions& options = {});

struct SmoothOptions {
  int degree = 2;                     // local polynomial order nu
  std::optional<double> bandwidth;    // default: kDefaultBandwidthSpacings x mean spacing
  int max_widenings = 4;              // each widening multiplies the bandwidth by 1.5
};

inline constexpr double kDefaultBandwidthSpacings = 2.2;

struct SmoothResult {
  std::vector<double> values;
  std::vector<double> derivatives;
  double bandwidth = 0.0;
};

/// Epanechnikov-weighted local polynomial regression; returns the intercept and
/// slope of the local fit at each evaluation point (data times when `at` is empty).
SmoothResult local_poly_smooth(std::span<const double> times, std::span<const double> values,
                               const SmoothOptions& options = {}, std::span<const double> at = {});

/// Stage-2 pseudo-least-squares objective over z given fixed smooths.
OdeFit two_stage_fit(const OdeFitProblem& problem, const Vector& z_init, const SmoothOptions& smooth = {},
                     const FitOptions& options = {});

/// Observation-time knots alone cannot follow the fast FhN transitions, which biases the fit.
inline constexpr std::size_t kDefaultKnotRefinement = 4;

struct GpSettings {
  std::vector<double> lambda;  // per state; empty -> kDefaultLambda for every state
  std::vector<double> omega;   // per state; empty -> 1 / sample variance of the state's data
  std::size_t knot_refinement = kDefaultKnotRefinement;  // breakpoint intervals per observation gap
  std::size_t quadrature_points = 5;
  std::size_t max_iterations = 200;
  double tolerance = 1e-10;
};

inline constexpr double kDefaultLambda = 100.0;

struct GpInnerResult {
  Matrix coefficients;  // n_states x n_basis
  double data_term = 0.0;
  std::vector<double> penalty;  // per state, unweighted integral
  double objective = 0.0;       // data_term + sum_s lambda_s penalty_s
  std::size_t iterations = 0;
  bool converged = false;
};

/// Precomputed basis values at the data and quadrature points for one problem.
class GpWorkspace {
 public:
  GpWorkspace(const OdeFitProblem& problem, spline::BasisSystem basis, GpSettings settings);

  const spline::BasisSystem& basis() const { return basis_; }
  const GpSettings& settings() const { return settings_; }

  /// Minimum-norm least-squares fit of each observed state to its data.
  Matrix data_smooth_start() const;

  /// Gauss-Newton minimization of the penalized criterion at fixed ODE parameters.
  GpInnerResult inner(std::span<const double> params, const std::optional<Matrix>& start = std::nullopt) const;

  /// Evaluates data and penalty terms for given coefficients.
  GpInnerResult evaluate(std::span<const double> params, const Matrix& coefficients) const;

  /// Spline values at time t for every state.
  std::vector<double> state_at(const Matrix& coefficients, double t) const;

 private:
  struct Row {
    spline::LocalBasis basis;
    double weight;
    double time;
  };

  double accumulate(std::span<const double> params, const Matrix& coefficients, Matrix* jtj, Vector* jtr,
                    std::vector<double>* penalty, double* data_term) const;

  const OdeFitProblem& problem_;
  spline::BasisSystem basis_;
  GpSettings settings_;
  std::vector<std::vector<std::pair<spline::LocalBasis, double>>> data_rows_;  // per state: (basis, y)
  std::vector<Row> quad_rows_;
};

/// Breakpoints at every observation time of the problem's data, each gap split into
/// `refinement` equal intervals.
spline::BasisSystem default_basis(const OdeFitProblem& problem, std::size_t refinement = kDefaultKnotRefinement);

GpInnerResult gp_inner(const OdeFitProblem& problem, std::span<const double> params, const spline::BasisSystem& basis,
                       const GpSettings& settings = {});

/// Outer Nelder-Mead over the free ODE parameters of J = sum omega (y - Phi c(theta))^2,
/// re-solving the inner problem from the data-smooth start at every evaluation.
OdeFit gp_outer_fit(const OdeFitProblem& problem, const Vector& z_init, const spline::BasisSystem& basis,
                    const GpSettings& settings = {}, const FitOptions& options = {});

}  // namespace imis::est
