#include "imis/estimators.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace imis::est {

std::string method_name(Method m) {
  switch (m) {
    case Method::NLS: return "NLS";
    case Method::TwoStage: return "TwoStage";
    case Method::GP: return "GP";
    case Method::ConditionalNLS: return "ConditionalNLS";
    case Method::SyntheticSubset: return "SyntheticSubset";
    case Method::SyntheticFull: return "SyntheticFull";
    case Method::ConditionalPosterior: return "ConditionalPosterior";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::NLS, Method::TwoStage, Method::GP, Method::ConditionalNLS, Method::SyntheticSubset,
                   Method::SyntheticFull, Method::ConditionalPosterior})
    if (method_name(m) == name) return m;
  throw std::invalid_argument("unknown estimation method '" + name + "'");
}

// ---------------------------------------------------------------------------
// Problem plumbing

void OdeFitProblem::validate() const {
  if (!rhs) throw std::invalid_argument("fit problem: missing right-hand side");
  if (!data) throw std::invalid_argument("fit problem: missing data");
  data->validate();
  if (state_columns.size() != x0.size()) throw std::invalid_argument("fit problem: one data column entry per state");
  for (auto c : state_columns)
    if (c >= data->values.cols()) throw std::invalid_argument("fit problem: data column out of range");
  for (auto i : free_params)
    if (i >= params.size()) throw std::invalid_argument("fit problem: free parameter index out of range");
  if (dim() == 0) throw std::invalid_argument("fit problem: nothing to estimate");
}

void OdeFitProblem::unpack(const Vector& z, std::vector<double>& params_out, std::vector<double>& x0_out) const {
  if (static_cast<std::size_t>(z.size()) != dim()) throw std::invalid_argument("fit problem: z has the wrong size");
  params_out = params;
  x0_out = x0;
  for (std::size_t k = 0; k < free_params.size(); ++k) params_out[free_params[k]] = z(static_cast<Eigen::Index>(k));
  if (estimate_x0)
    for (std::size_t s = 0; s < x0.size(); ++s) x0_out[s] = z(static_cast<Eigen::Index>(free_params.size() + s));
}

Vector OdeFitProblem::pack(const std::vector<double>& params_in, const std::vector<double>& x0_in) const {
  Vector z(static_cast<Eigen::Index>(dim()));
  for (std::size_t k = 0; k < free_params.size(); ++k) z(static_cast<Eigen::Index>(k)) = params_in[free_params[k]];
  if (estimate_x0)
    for (std::size_t s = 0; s < x0_in.size(); ++s) z(static_cast<Eigen::Index>(free_params.size() + s)) = x0_in[s];
  return z;
}

ode::OdeProblem OdeFitProblem::ode_problem(const std::vector<double>& x0_in) const {
  return ode::OdeProblem{rhs, x0_in, t0, data->times, step, admissible};
}

namespace {

double residual_sse(const OdeFitProblem& problem, const Matrix& fitted, std::vector<double>* per_state,
                    std::vector<std::size_t>* counts) {
  const Matrix& y = problem.data->values;
  double total = 0.0;
  if (per_state) per_state->assign(problem.n_states(), 0.0);
  if (counts) counts->assign(problem.n_states(), 0);
  for (std::size_t s = 0; s < problem.n_states(); ++s) {
    const Eigen::Index col = problem.state_columns[s];
    if (col < 0) continue;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      if (std::isnan(y(i, col))) continue;
      const double r = y(i, col) - fitted(i, static_cast<Eigen::Index>(s));
      total += r * r;
      if (per_state) (*per_state)[s] += r * r;
      if (counts) ++(*counts)[s];
    }
  }
  return total;
}

bool feasible(const OdeFitProblem& problem, const Vector& z) {
  if (!z.allFinite()) return false;
  return !problem.feasible || problem.feasible(z);
}

}  // namespace

double nls_objective(const OdeFitProblem& problem, const Vector& z) {
  if (!feasible(problem, z)) return kFloodObjective;
  std::vector<double> params, x0;
  problem.unpack(z, params, x0);
  try {
    const ode::Trajectory traj = ode::solve_rk4(problem.ode_problem(x0), params);
    if (!traj.domain_ok) return kFloodObjective;
    const double sse = residual_sse(problem, traj.states, nullptr, nullptr);
    return std::isfinite(sse) ? std::min(sse, kFloodObjective) : kFloodObjective;
  } catch (const std::invalid_argument&) {
    return kFloodObjective;
  }
}

bool ode_state_sse(const OdeFitProblem& problem, const std::vector<double>& params, const std::vector<double>& x0,
                   std::vector<double>& sse, std::vector<std::size_t>& counts) {
  try {
    const ode::Trajectory traj = ode::solve_rk4(problem.ode_problem(x0), params);
    if (!traj.domain_ok) return false;
    return std::isfinite(residual_sse(problem, traj.states, &sse, &counts));
  } catch (const std::invalid_argument&) {
    return false;
  }
}

OdeFit nls_fit(const OdeFitProblem& problem, const Vector& z_init, const FitOptions& options) {
  problem.validate();
  OdeFit fit;
  fit.init = z_init;
  const auto nm = opt::nelder_mead([&](const Vector& z) { return nls_objective(problem, z); }, z_init, options.optimizer);
  fit.z = nm.x;
  fit.objective = nm.value;
  fit.converged = nm.converged && nm.value < kFloodObjective;
  problem.unpack(fit.z, fit.params, fit.x0);
  if (fit.objective < kFloodObjective) {
    const ode::Trajectory traj = ode::solve_rk4(problem.ode_problem(fit.x0), fit.params);
    residual_sse(problem, traj.states, &fit.state_sse, &fit.state_count);
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Local polynomial smoothing and the two-stage estimator

namespace {

bool smooth_at(std::span<const double> times, std::span<const double> values, int degree, double h, double t_star,
               double& value, double& slope) {
  const auto p = static_cast<Eigen::Index>(degree + 1);
  std::vector<Eigen::Index> idx;
  std::vector<double> w;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double u = (times[i] - t_star) / h;
    if (std::abs(u) < 1.0) {
      idx.push_back(static_cast<Eigen::Index>(i));
      w.push_back(0.75 * (1.0 - u * u));
    }
  }
  if (static_cast<Eigen::Index>(idx.size()) < p) return false;
  const auto m = static_cast<Eigen::Index>(idx.size());
  Matrix x(m, p);
  Vector y(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const double sw = std::sqrt(w[static_cast<std::size_t>(r)]);
    const double u = (times[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])] - t_star) / h;
    double pw = 1.0;
    for (Eigen::Index k = 0; k < p; ++k) {
      x(r, k) = sw * pw;
      pw *= u;
    }
    y(r) = sw * values[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])];
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) return false;
  const Vector beta = qr.solve(y);
  value = beta(0);
  slope = p > 1 ? beta(1) / h : 0.0;
  return std::isfinite(value) && std::isfinite(slope);
}

}  // namespace

SmoothResult local_poly_smooth(std::span<const double> times, std::span<const double> values,
                               const SmoothOptions& options, std::span<const double> at) {
  if (times.size() != values.size()) throw std::invalid_argument("local_poly_smooth: times and values differ in length");
  if (times.size() < 2) throw std::invalid_argument("local_poly_smooth: need at least two points");
  if (options.degree < 1) throw std::invalid_argument("local_poly_smooth: degree must be at least 1");
  const double spacing = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
  double h = options.bandwidth.value_or(kDefaultBandwidthSpacings * spacing);
  if (!(h > 0.0)) throw std::invalid_argument("local_poly_smooth: bandwidth must be positive");
  if (at.empty()) at = times;

  SmoothResult out;
  for (int attempt = 0; attempt <= options.max_widenings; ++attempt, h *= 1.5) {
    out.values.assign(at.size(), 0.0);
    out.derivatives.assign(at.size(), 0.0);
    bool ok = true;
    for (std::size_t i = 0; i < at.size() && ok; ++i)
      ok = smooth_at(times, values, options.degree, h, at[i], out.values[i], out.derivatives[i]);
    if (ok) {
      out.bandwidth = h;
      return out;
    }
  }
  throw std::runtime_error("local_poly_smooth: local design singular after widening the bandwidth");
}

OdeFit two_stage_fit(const OdeFitProblem& problem, const Vector& z_init, const SmoothOptions& smooth,
                     const FitOptions& options) {
  problem.validate();
  const std::size_t n_states = problem.n_states();
  const auto& data = *problem.data;
  const auto n_times = static_cast<Eigen::Index>(data.times.size());

  Matrix x_hat(n_times, static_cast<Eigen::Index>(n_states)), dx_hat(n_times, static_cast<Eigen::Index>(n_states));
  std::vector<double> x0_hat(n_states);
  for (std::size_t s = 0; s < n_states; ++s) {
    const Eigen::Index col = problem.state_columns[s];
    if (col < 0) throw std::invalid_argument("two_stage_fit: every state must be observed");
    std::vector<double> t, y;
    for (Eigen::Index i = 0; i < n_times; ++i)
      if (!std::isnan(data.values(i, col))) {
        t.push_back(data.times[static_cast<std::size_t>(i)]);
        y.push_back(data.values(i, col));
      }
    const SmoothResult sm = local_poly_smooth(t, y, smooth, data.times);
    for (Eigen::Index i = 0; i < n_times; ++i) {
      x_hat(i, static_cast<Eigen::Index>(s)) = sm.values[static_cast<std::size_t>(i)];
      dx_hat(i, static_cast<Eigen::Index>(s)) = sm.derivatives[static_cast<std::size_t>(i)];
    }
    const double t0 = problem.t0;
    x0_hat[s] = local_poly_smooth(t, y, smooth, std::span<const double>(&t0, 1)).values[0];
  }

  // The objective only sees the free ODE parameters; initial states come from the smooth.
  std::vector<double> scratch_x0;
  auto objective = [&](const Vector& q) {
    Vector z(static_cast<Eigen::Index>(problem.dim()));
    z.head(q.size()) = q;
    if (problem.estimate_x0) z.tail(static_cast<Eigen::Index>(n_states)) = to_eigen(x0_hat);
    if (!feasible(problem, z)) return kFloodObjective;
    std::vector<double> params, x0;
    problem.unpack(z, params, x0);
    std::vector<double> state(n_states), deriv(n_states);
    double total = 0.0;
    try {
      for (Eigen::Index i = 0; i < n_times; ++i) {
        for (std::size_t s = 0; s < n_states; ++s) state[s] = x_hat(i, static_cast<Eigen::Index>(s));
        problem.rhs(state, params, data.times[static_cast<std::size_t>(i)], deriv);
        for (std::size_t s = 0; s < n_states; ++s) {
          const double r = dx_hat(i, static_cast<Eigen::Index>(s)) - deriv[s];
          total += r * r;
        }
      }
    } catch (const std::invalid_argument&) {
      return kFloodObjective;
    }
    return std::isfinite(total) ? std::min(total, kFloodObjective) : kFloodObjective;
  };

  const auto n_free = static_cast<Eigen::Index>(problem.free_params.size());
  if (n_free == 0) throw std::invalid_argument("two_stage_fit: no free ODE parameters");
  const auto nm = opt::nelder_mead(objective, z_init.head(n_free), options.optimizer);

  OdeFit fit;
  fit.init = z_init;
  fit.z = Vector(static_cast<Eigen::Index>(problem.dim()));
  fit.z.head(n_free) = nm.x;
  if (problem.estimate_x0) fit.z.tail(static_cast<Eigen::Index>(n_states)) = to_eigen(x0_hat);
  fit.objective = nm.value;
  fit.converged = nm.converged && nm.value < kFloodObjective;
  problem.unpack(fit.z, fit.params, fit.x0);
  residual_sse(problem, x_hat, &fit.state_sse, &fit.state_count);
  return fit;
}

// ---------------------------------------------------------------------------
// Generalized profiling

spline::BasisSystem default_basis(const OdeFitProblem& problem, std::size_t refinement) {
  if (refinement == 0) throw std::invalid_argument("default_basis: refinement must be positive");
  std::vector<double> times;
  if (problem.t0 < problem.data->times.front()) times.push_back(problem.t0);
  times.insert(times.end(), problem.data->times.begin(), problem.data->times.end());
  std::vector<double> breaks{times.front()};
  for (std::size_t i = 1; i < times.size(); ++i) {
    for (std::size_t k = 1; k < refinement; ++k)
      breaks.push_back(times[i - 1] + (times[i] - times[i - 1]) * static_cast<double>(k) / static_cast<double>(refinement));
    breaks.push_back(times[i]);
  }
  return spline::BasisSystem(std::move(breaks), 4);
}

GpWorkspace::GpWorkspace(const OdeFitProblem& problem, spline::BasisSystem basis, GpSettings settings)
    : problem_(problem), basis_(std::move(basis)), settings_(std::move(settings)) {
  problem_.validate();
  const std::size_t n_states = problem_.n_states();
  const auto& data = *problem_.data;
  if (settings_.lambda.empty()) settings_.lambda.assign(n_states, kDefaultLambda);
  if (settings_.lambda.size() != n_states) throw std::invalid_argument("gp: one lambda per state");
  for (double l : settings_.lambda)
    if (!(l >= 0.0)) throw std::invalid_argument("gp: lambda must be non-negative");

  data_rows_.resize(n_states);
  std::vector<double> variance(n_states, 1.0);
  for (std::size_t s = 0; s < n_states; ++s) {
    const Eigen::Index col = problem_.state_columns[s];
    if (col < 0) continue;
    double sum = 0.0, sum2 = 0.0;
    for (Eigen::Index i = 0; i < data.values.rows(); ++i) {
      const double y = data.values(i, col);
      if (std::isnan(y)) continue;
      data_rows_[s].emplace_back(basis_.evaluate(data.times[static_cast<std::size_t>(i)]), y);
      sum += y;
      sum2 += y * y;
    }
    const auto n = static_cast<double>(data_rows_[s].size());
    if (n > 1.0) variance[s] = (sum2 - sum * sum / n) / (n - 1.0);
  }
  if (settings_.omega.empty()) {
    settings_.omega.resize(n_states);
    for (std::size_t s = 0; s < n_states; ++s) settings_.omega[s] = variance[s] > 0.0 ? 1.0 / variance[s] : 1.0;
  }
  if (settings_.omega.size() != n_states) throw std::invalid_argument("gp: one omega per state");

  std::vector<double> nodes, weights;
  basis_.quadrature(settings_.quadrature_points, nodes, weights);
  quad_rows_.reserve(nodes.size());
  for (std::size_t q = 0; q < nodes.size(); ++q) quad_rows_.push_back({basis_.evaluate(nodes[q]), weights[q], nodes[q]});
}

Matrix GpWorkspace::data_smooth_start() const {
  const std::size_t n_states = problem_.n_states();
  const auto nb = static_cast<Eigen::Index>(basis_.n_basis());
  Matrix coef = Matrix::Zero(static_cast<Eigen::Index>(n_states), nb);
  for (std::size_t s = 0; s < n_states; ++s) {
    const auto& rows = data_rows_[s];
    if (rows.empty()) continue;
    Matrix phi = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), nb);
    Vector y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& b = rows[i].first;
      for (std::size_t j = 0; j < b.values.size(); ++j)
        phi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b.first + j)) = b.values[j];
      y(static_cast<Eigen::Index>(i)) = rows[i].second;
    }
    coef.row(static_cast<Eigen::Index>(s)) = phi.completeOrthogonalDecomposition().solve(y).transpose();
  }
  return coef;
}

std::vector<double> GpWorkspace::state_at(const Matrix& coefficients, double t) const {
  const spline::LocalBasis b = basis_.evaluate(t);
  std::vector<double> x(problem_.n_states(), 0.0);
  for (std::size_t s = 0; s < x.size(); ++s)
    for (std::size_t j = 0; j < b.values.size(); ++j)
      x[s] += b.values[j] * coefficients(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(b.first + j));
  return x;
}

// Residual rows:
//   data:    sqrt(omega_s) (phi(t_j) c_s - y_sj)
//   penalty: sqrt(lambda_s w_q) (phi'(t_q) c_s - f_s(phi(t_q) C, theta))
// Each row touches at most order * n_states coefficients, so J'J is accumulated row by row.
double GpWorkspace::accumulate(std::span<const double> params, const Matrix& coefficients, Matrix* jtj, Vector* jtr,
                               std::vector<double>* penalty, double* data_term) const {
  const std::size_t n_states = problem_.n_states();
  const std::size_t nb = basis_.n_basis();
  const std::size_t order = basis_.order();
  if (jtj) jtj->setZero(static_cast<Eigen::Index>(n_states * nb), static_cast<Eigen::Index>(n_states * nb));
  if (jtr) jtr->setZero(static_cast<Eigen::Index>(n_states * nb));
  std::vector<Eigen::Index> cols;
  std::vector<double> vals;
  auto add_row = [&](double r) {
    if (!jtj) return;
    for (std::size_t a = 0; a < cols.size(); ++a) {
      (*jtr)(cols[a]) += vals[a] * r;
      for (std::size_t b = 0; b < cols.size(); ++b) (*jtj)(cols[a], cols[b]) += vals[a] * vals[b];
    }
  };

  double data_sum = 0.0;
  for (std::size_t s = 0; s < n_states; ++s) {
    const double sw = std::sqrt(settings_.omega[s]);
    for (const auto& [b, y] : data_rows_[s]) {
      double fit = 0.0;
      cols.clear();
      vals.clear();
      for (std::size_t j = 0; j < order; ++j) {
        const auto c = static_cast<Eigen::Index>(b.first + j);
        fit += b.values[j] * coefficients(static_cast<Eigen::Index>(s), c);
        cols.push_back(static_cast<Eigen::Index>(s * nb) + c);
        vals.push_back(sw * b.values[j]);
      }
      const double r = sw * (fit - y);
      data_sum += r * r;
      add_row(r);
    }
  }

  std::vector<double> pen(n_states, 0.0);
  std::vector<double> x(n_states), dx(n_states), f(n_states), jac(n_states * n_states);
  ode::JacobianFn jacobian = problem_.jacobian ? problem_.jacobian : ode::finite_difference_jacobian(problem_.rhs, n_states);
  for (const Row& row : quad_rows_) {
    const auto& b = row.basis;
    for (std::size_t s = 0; s < n_states; ++s) {
      x[s] = dx[s] = 0.0;
      for (std::size_t j = 0; j < order; ++j) {
        const double c = coefficients(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(b.first + j));
        x[s] += b.values[j] * c;
        dx[s] += b.derivs[j] * c;
      }
    }
    problem_.rhs(x, params, row.time, f);
    if (jtj) jacobian(x, params, row.time, jac);
    for (std::size_t s = 0; s < n_states; ++s) {
      const double e = dx[s] - f[s];
      if (!std::isfinite(e)) return std::numeric_limits<double>::infinity();
      pen[s] += row.weight * e * e;
      if (settings_.lambda[s] == 0.0) continue;
      const double sw = std::sqrt(settings_.lambda[s] * row.weight);
      cols.clear();
      vals.clear();
      for (std::size_t u = 0; u < n_states; ++u) {
        const double dfdx = jac[s * n_states + u];
        for (std::size_t j = 0; j < order; ++j) {
          double v = -dfdx * b.values[j];
          if (u == s) v += b.derivs[j];
          cols.push_back(static_cast<Eigen::Index>(u * nb + b.first + j));
          vals.push_back(sw * v);
        }
      }
      add_row(sw * e);
    }
  }

  double total = data_sum;
  for (std::size_t s = 0; s < n_states; ++s) total += settings_.lambda[s] * pen[s];
  if (penalty) *penalty = pen;
  if (data_term) *data_term = data_sum;
  return total;
}

GpInnerResult GpWorkspace::evaluate(std::span<const double> params, const Matrix& coefficients) const {
  GpInnerResult out;
  out.coefficients = coefficients;
  out.objective = accumulate(params, coefficients, nullptr, nullptr, &out.penalty, &out.data_term);
  return out;
}

GpInnerResult GpWorkspace::inner(std::span<const double> params, const std::optional<Matrix>& start) const {
  const auto n_states = static_cast<Eigen::Index>(problem_.n_states());
  const auto nb = static_cast<Eigen::Index>(basis_.n_basis());
  Matrix coef = start ? *start : data_smooth_start();
  if (coef.rows() != n_states || coef.cols() != nb) throw std::invalid_argument("gp_inner: start has the wrong shape");

  GpInnerResult out;
  Matrix jtj;
  Vector jtr;
  double value = accumulate(params, coef, &jtj, &jtr, nullptr, nullptr);
  if (!std::isfinite(value)) {
    out.coefficients = coef;
    out.objective = value;
    return out;
  }

  auto flat = [&](const Matrix& c) {
    Vector v(n_states * nb);
    for (Eigen::Index s = 0; s < n_states; ++s) v.segment(s * nb, nb) = c.row(s).transpose();
    return v;
  };
  auto unflat = [&](const Vector& v) {
    Matrix c(n_states, nb);
    for (Eigen::Index s = 0; s < n_states; ++s) c.row(s) = v.segment(s * nb, nb).transpose();
    return c;
  };

  for (out.iterations = 0; out.iterations < settings_.max_iterations; ++out.iterations) {
    Vector delta;
    Eigen::LDLT<Matrix> ldlt(jtj);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) delta = ldlt.solve(-jtr);
    if (delta.size() == 0 || !delta.allFinite() || (jtj * delta + jtr).norm() > 1e-6 * (1.0 + jtr.norm()))
      delta = jtj.completeOrthogonalDecomposition().solve(-jtr);
    if (!delta.allFinite()) break;

    const Vector base = flat(coef);
    double step = 1.0, trial_value = std::numeric_limits<double>::infinity();
    Matrix trial;
    for (int halving = 0; halving < 30; ++halving, step *= 0.5) {
      trial = unflat(base + step * delta);
      trial_value = accumulate(params, trial, nullptr, nullptr, nullptr, nullptr);
      if (trial_value <= value) break;
    }
    if (!(trial_value <= value)) {
      // No descent along the Gauss-Newton direction: already at the minimum to rounding.
      out.converged = true;
      break;
    }
    const double decrease = value - trial_value;
    coef = trial;
    value = accumulate(params, coef, &jtj, &jtr, nullptr, nullptr);
    if (decrease <= settings_.tolerance * (1.0 + value) || step * delta.cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + base.cwiseAbs().maxCoeff())) {
      out.converged = true;
      break;
    }
  }

  GpInnerResult final = evaluate(params, coef);
  final.iterations = out.iterations;
  final.converged = out.converged && std::isfinite(final.objective);
  return final;
}

GpInnerResult gp_inner(const OdeFitProblem& problem, std::span<const double> params, const spline::BasisSystem& basis,
                       const GpSettings& settings) {
  GpWorkspace ws(problem, basis, settings);
  return ws.inner(params);
}

OdeFit gp_outer_fit(const OdeFitProblem& problem, const Vector& z_init, const spline::BasisSystem& basis,
                    const GpSettings& settings, const FitOptions& options) {
  GpWorkspace ws(problem, basis, settings);
  const Matrix start = ws.data_smooth_start();
  const auto n_free = static_cast<Eigen::Index>(problem.free_params.size());
  if (n_free == 0) throw std::invalid_argument("gp_outer_fit: no free ODE parameters");

  auto params_of = [&](const Vector& q) {
    std::vector<double> params = problem.params;
    for (Eigen::Index k = 0; k < n_free; ++k) params[problem.free_params[static_cast<std::size_t>(k)]] = q(k);
    return params;
  };
  auto objective = [&](const Vector& q) {
    Vector z = z_init;
    z.head(n_free) = q;
    if (!feasible(problem, z)) return kFloodObjective;
    try {
      const GpInnerResult r = ws.inner(params_of(q), start);
      if (!r.converged || !std::isfinite(r.data_term)) return kFloodObjective;
      return std::min(r.data_term, kFloodObjective);
    } catch (const std::invalid_argument&) {
      return kFloodObjective;
    }
  };
  const auto nm = opt::nelder_mead(objective, z_init.head(n_free), options.optimizer);

  OdeFit fit;
  fit.init = z_init;
  fit.objective = nm.value;
  fit.converged = nm.converged && nm.value < kFloodObjective;
  fit.params = params_of(nm.x);
  fit.x0 = problem.x0;
  fit.state_sse.assign(problem.n_states(), 0.0);
  fit.state_count.assign(problem.n_states(), 0);
  if (fit.objective < kFloodObjective) {
    const GpInnerResult r = ws.inner(fit.params, start);
    if (problem.estimate_x0) fit.x0 = ws.state_at(r.coefficients, problem.t0);
    const auto& data = *problem.data;
    for (std::size_t s = 0; s < problem.n_states(); ++s) {
      const Eigen::Index col = problem.state_columns[s];
      if (col < 0) continue;
      for (Eigen::Index i = 0; i < data.values.rows(); ++i) {
        const double y = data.values(i, col);
        if (std::isnan(y)) continue;
        const double e = y - ws.state_at(r.coefficients, data.times[static_cast<std::size_t>(i)])[s];
        fit.state_sse[s] += e * e;
        ++fit.state_count[s];
      }
    }
  }
  fit.z = problem.pack(fit.params, fit.x0);
  return fit;
}

}  // namespace imis::est
