#include "imis/ode_engine.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace imis::ode {

void OdeProblem::validate() const {
  if (!rhs) throw std::invalid_argument("ode problem: missing right-hand side");
  if (x0.empty()) throw std::invalid_argument("ode problem: empty initial state");
  if (t_grid.empty()) throw std::invalid_argument("ode problem: empty time grid");
  if (!(step > 0.0)) throw std::invalid_argument("ode problem: step must be positive");
  if (t0 > t_grid.front()) throw std::invalid_argument("ode problem: grid starts before t0");
  for (std::size_t i = 1; i < t_grid.size(); ++i)
    if (!(t_grid[i] > t_grid[i - 1])) throw std::invalid_argument("ode problem: grid must be strictly increasing");
}

namespace {

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

class Rk4Stepper {
 public:
  Rk4Stepper(const OdeProblem& problem, std::span<const double> params)
      : problem_(problem), params_(params), n_(problem.x0.size()),
        k1_(n_), k2_(n_), k3_(n_), k4_(n_), tmp_(n_) {}

  // Advances x over [t, t + span] in equal substeps; false on a domain failure.
  bool advance(std::vector<double>& x, double t, double span) {
    const auto substeps = static_cast<std::size_t>(std::max(1.0, std::ceil(span / problem_.step - 1e-9)));
    const double h = span / static_cast<double>(substeps);
    for (std::size_t s = 0; s < substeps; ++s) {
      const double ts = t + h * static_cast<double>(s);
      if (!step(x, ts, h)) return false;
      if (problem_.admissible && !problem_.admissible(x)) return false;
    }
    return true;
  }

 private:
  bool stage(std::span<const double> state, double t, std::vector<double>& k) {
    problem_.rhs(state, params_, t, k);
    return all_finite(k);
  }

  bool step(std::vector<double>& x, double t, double h) {
    if (!stage(x, t, k1_)) return false;
    for (std::size_t i = 0; i < n_; ++i) tmp_[i] = x[i] + 0.5 * h * k1_[i];
    if (!stage(tmp_, t + 0.5 * h, k2_)) return false;
    for (std::size_t i = 0; i < n_; ++i) tmp_[i] = x[i] + 0.5 * h * k2_[i];
    if (!stage(tmp_, t + 0.5 * h, k3_)) return false;
    for (std::size_t i = 0; i < n_; ++i) tmp_[i] = x[i] + h * k3_[i];
    if (!stage(tmp_, t + h, k4_)) return false;
    for (std::size_t i = 0; i < n_; ++i) x[i] += h / 6.0 * (k1_[i] + 2.0 * (k2_[i] + k3_[i]) + k4_[i]);
    return all_finite(x);
  }

  const OdeProblem& problem_;
  std::span<const double> params_;
  std::size_t n_;
  std::vector<double> k1_, k2_, k3_, k4_, tmp_;
};

}  // namespace

std::size_t& solve_counter() {
  thread_local std::size_t count = 0;
  return count;
}

Trajectory solve_rk4(const OdeProblem& problem, std::span<const double> params) {
  problem.validate();
  ++solve_counter();
  const std::size_t n_states = problem.x0.size();
  Trajectory traj;
  traj.times = problem.t_grid;
  traj.states = Matrix::Constant(static_cast<Eigen::Index>(problem.t_grid.size()), static_cast<Eigen::Index>(n_states),
                                 std::numeric_limits<double>::quiet_NaN());

  std::vector<double> x = problem.x0;
  Rk4Stepper stepper(problem, params);
  double t = problem.t0;
  for (std::size_t row = 0; row < problem.t_grid.size(); ++row) {
    const double target = problem.t_grid[row];
    if (target > t) {
      if (!stepper.advance(x, t, target - t)) {
        traj.domain_ok = false;
        return traj;
      }
      t = target;
    } else if (!all_finite(x) || (problem.admissible && !problem.admissible(x))) {
      traj.domain_ok = false;
      return traj;
    }
    for (std::size_t s = 0; s < n_states; ++s) traj.states(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(s)) = x[s];
  }
  return traj;
}

void fhn_rhs(std::span<const double> state, std::span<const double> params, double, std::span<double> deriv) {
  const double v = state[0], r = state[1];
  const double a = params[0], b = params[1], c = params[2];
  if (c == 0.0) throw std::invalid_argument("fhn_rhs: c must be non-zero");
  deriv[0] = c * (v - v * v * v / 3.0 + r);
  deriv[1] = -(v - a + b * r) / c;
}

void fhn_jacobian(std::span<const double> state, std::span<const double> params, double, std::span<double> jac) {
  const double v = state[0];
  const double b = params[1], c = params[2];
  if (c == 0.0) throw std::invalid_argument("fhn_jacobian: c must be non-zero");
  jac[0] = c * (1.0 - v * v);
  jac[1] = c;
  jac[2] = -1.0 / c;
  jac[3] = -b / c;
}

void sir_rhs(std::span<const double> state, std::span<const double> params, double, std::span<double> deriv) {
  const double s = state[0], i = state[1];
  const double alpha = params[0], beta = params[1];
  const double infection = beta * s * i;
  const double removal = alpha * i;
  deriv[0] = -infection;
  deriv[1] = infection - removal;
  deriv[2] = removal;
}

void sir_jacobian(std::span<const double> state, std::span<const double> params, double, std::span<double> jac) {
  const double s = state[0], i = state[1];
  const double alpha = params[0], beta = params[1];
  jac[0] = -beta * i;
  jac[1] = -beta * s;
  jac[2] = 0.0;
  jac[3] = beta * i;
  jac[4] = beta * s - alpha;
  jac[5] = 0.0;
  jac[6] = 0.0;
  jac[7] = alpha;
  jac[8] = 0.0;
}

AdmissibleFn sir_admissible(double population) {
  return [population](std::span<const double> x) {
    for (double v : x)
      if (!(v >= -1e-6 && v <= population + 1e-6)) return false;
    return true;
  };
}

JacobianFn finite_difference_jacobian(RhsFn rhs, std::size_t n_states) {
  return [rhs = std::move(rhs), n_states](std::span<const double> state, std::span<const double> params, double t,
                                          std::span<double> jac) {
    std::vector<double> x(state.begin(), state.end()), f0(n_states), f1(n_states);
    rhs(x, params, t, f0);
    for (std::size_t j = 0; j < n_states; ++j) {
      const double h = 1e-7 * std::max(1.0, std::abs(x[j]));
      const double saved = x[j];
      x[j] = saved + h;
      rhs(x, params, t, f1);
      x[j] = saved;
      for (std::size_t i = 0; i < n_states; ++i) jac[i * n_states + j] = (f1[i] - f0[i]) / h;
    }
  };
}

}  // namespace imis::ode
