#pragma once

#include "imis/common.hpp"

#include <functional>
#include <span>
#include <vector>

namespace imis::ode {

/// deriv = f(state, params, t)
using RhsFn = std::function<void(std::span<const double> state, std::span<const double> params, double t,
                                 std::span<double> deriv)>;
/// Row-major n x n Jacobian of the right-hand side with respect to the state.
using JacobianFn = std::function<void(std::span<const double> state, std::span<const double> params, double t,
                                      std::span<double> jac)>;
/// False once the state has left the model's admissible region.
using AdmissibleFn = std::function<bool(std::span<const double> state)>;

struct OdeProblem {
  RhsFn rhs;
  std::vector<double> x0;
  double t0 = 0.0;                // time at which x0 holds; t0 <= t_grid.front()
  std::vector<double> t_grid;     // strictly increasing observation times
  double step = 0.05;             // nominal RK4 step; each grid gap is split evenly
  AdmissibleFn admissible;        // optional

  void validate() const;
};

struct Trajectory {
  std::vector<double> times;
  Matrix states;  // times.size() x n_states; rows after a domain failure are NaN
  bool domain_ok = true;
};

/// Classical fixed-step RK4, substepped to land on every grid time exactly.
/// Stops and clears domain_ok on a non-finite stage or an inadmissible state.
Trajectory solve_rk4(const OdeProblem& problem, std::span<const double> params);

/// Number of solve_rk4 calls made on the calling thread (test instrumentation).
std::size_t& solve_counter();

/// FitzHugh-Nagumo: dV = c(V - V^3/3 + R), dR = -(V - a + bR)/c with params (a, b, c).
void fhn_rhs(std::span<const double> state, std::span<const double> params, double t, std::span<double> deriv);
void fhn_jacobian(std::span<const double> state, std::span<const double> params, double t, std::span<double> jac);

/// SIR: dS = -bSI, dI = bSI - aI, dR = aI with params (alpha, beta).
void sir_rhs(std::span<const double> state, std::span<const double> params, double t, std::span<double> deriv);
void sir_jacobian(std::span<const double> state, std::span<const double> params, double t, std::span<double> jac);

/// Admissible region for SIR with population n: every compartment in [-1e-6, n + 1e-6].
AdmissibleFn sir_admissible(double population);

/// Forward-difference Jacobian fallback for systems without an analytic one.
JacobianFn finite_difference_jacobian(RhsFn rhs, std::size_t n_states);

}  // namespace imis::ode
