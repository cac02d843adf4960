#include "imis/models.hpp"

#include "imis/linalg_stats.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace imis::model {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double clamp_flood(double v) { return std::isfinite(v) ? std::max(v, kFloodLogLik) : kFloodLogLik; }

}  // namespace

double normal_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

constexpr double kFhnVarianceShape = 3.0, kFhnVarianceScale = 3.0;

double inv_gamma_logpdf(double x, double shape, double scale) {
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

double inv_gamma_sample(double shape, double scale, Rng& rng) {
  std::gamma_distribution<double> g(shape, 1.0);
  return scale / g(rng);
}

double chi_squared_logpdf(double x, double df) {
  if (!(x > 0.0)) return kNegInf;
  const double k = 0.5 * df;
  return (k - 1.0) * std::log(x) - 0.5 * x - k * std::log(2.0) - std::lgamma(k);
}

double gamma_logpdf(double x, double shape, double rate) {
  if (!(x >= 0.0)) return kNegInf;
  if (x == 0.0) {
    if (shape == 1.0) return std::log(rate);
    return shape < 1.0 ? std::numeric_limits<double>::infinity() : kNegInf;
  }
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double binomial_logpmf(double k, double n, double p) {
  if (!(k >= 0.0 && k <= n) || k != std::floor(k)) return kNegInf;
  if (p <= 0.0) return k == 0.0 ? 0.0 : kNegInf;
  if (p >= 1.0) return k == n ? 0.0 : kNegInf;
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(p) +
         (n - k) * std::log1p(-p);
}

std::vector<std::size_t> ModelSpec::gaussian_coordinates() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < dim(); ++i)
    if (free_mask[i] && !discrete_mask[i]) out.push_back(i);
  return out;
}

double ModelSpec::log_posterior(const Vector& theta, Rng& rng) const {
  const double lp = log_prior(theta);
  if (lp == kNegInf || std::isnan(lp)) return kNegInf;
  return lp + log_lik(theta, rng);
}

// ---------------------------------------------------------------------------
// Likelihoods

namespace {

ode::OdeProblem fhn_problem(const sim::ObservationSet& data, double v0, double r0) {
  return ode::OdeProblem{ode::fhn_rhs, {v0, r0}, 0.0, data.times, 0.05, {}};
}

ode::OdeProblem sir_problem(const std::vector<double>& times, double population, double i0) {
  return ode::OdeProblem{ode::sir_rhs, {population - i0, i0, 0.0}, 0.0, times, 0.1, ode::sir_admissible(population)};
}

}  // namespace

double fhn_loglik(const Vector& theta, const sim::ObservationSet& data) {
  if (theta.size() != 7) throw std::invalid_argument("fhn_loglik: theta must have 7 entries");
  const double var[2] = {theta(3), theta(4)};
  if (!(var[0] > 0.0) || !(var[1] > 0.0) || !theta.allFinite() || theta(2) == 0.0) return kFloodLogLik;
  const double params[3] = {theta(0), theta(1), theta(2)};
  const ode::Trajectory traj = ode::solve_rk4(fhn_problem(data, theta(5), theta(6)), params);
  if (!traj.domain_ok) return kFloodLogLik;
  const Eigen::Index cols[2] = {data.column_index("V"), data.column_index("R")};
  double ll = 0.0;
  for (int s = 0; s < 2; ++s) {
    const double norm = -0.5 * std::log(2.0 * std::numbers::pi * var[s]);
    for (Eigen::Index i = 0; i < data.values.rows(); ++i) {
      const double y = data.values(i, cols[s]);
      if (std::isnan(y)) continue;
      const double r = y - traj.states(i, s);
      ll += norm - 0.5 * r * r / var[s];
    }
  }
  return clamp_flood(ll);
}

double sir_loglik(const Vector& theta, const sim::ObservationSet& data, double population) {
  if (theta.size() != 3) throw std::invalid_argument("sir_loglik: theta must be (alpha, beta, I0)");
  const double i0 = theta(2);
  if (!theta.allFinite() || i0 != std::floor(i0) || i0 < 0.0 || i0 > population) return kFloodLogLik;
  const double params[2] = {theta(0), theta(1)};
  const ode::Trajectory traj = ode::solve_rk4(sir_problem(data.times, population, i0), params);
  if (!traj.domain_ok) return kFloodLogLik;

  struct Term {
    Eigen::Index column;
    Eigen::Index state;
  };
  std::vector<Term> terms{{data.column_index("deaths"), 2}};
  for (std::size_t c = 0; c < data.columns.size(); ++c)
    if (data.columns[c] == "infected") terms.push_back({static_cast<Eigen::Index>(c), 1});

  double ll = 0.0;
  for (const Term& term : terms)
    for (Eigen::Index i = 0; i < data.values.rows(); ++i) {
      const double y = data.values(i, term.column);
      if (std::isnan(y)) continue;
      const double p = std::clamp(traj.states(i, term.state) / population, 0.0, 1.0);
      const double lp = binomial_logpmf(y, population, p);
      if (lp == kNegInf) return kFloodLogLik;
      ll += lp;
    }
  return clamp_flood(ll);
}

// ---------------------------------------------------------------------------
// Shared criterion plumbing

namespace {

est::EstimatorResult to_result(est::Method method, std::string label, Vector theta_hat, double objective,
                               bool converged, const Vector& init) {
  est::EstimatorResult r;
  r.theta_hat = std::move(theta_hat);
  r.objective_value = objective;
  r.method = method;
  r.converged = converged;
  r.init = init;
  r.label = std::move(label);
  return r;
}

/// Maximizes f over the coordinates in `coords`, holding the rest at init.
opt::NelderMeadResult maximize(const std::function<double(const Vector&)>& f, const Vector& init,
                               const std::vector<std::size_t>& coords, const opt::NelderMeadOptions& options) {
  auto embed = [&](const Vector& q) {
    Vector theta = init;
    for (std::size_t k = 0; k < coords.size(); ++k) theta(static_cast<Eigen::Index>(coords[k])) = q(static_cast<Eigen::Index>(k));
    return theta;
  };
  Vector q0(static_cast<Eigen::Index>(coords.size()));
  for (std::size_t k = 0; k < coords.size(); ++k) q0(static_cast<Eigen::Index>(k)) = init(static_cast<Eigen::Index>(coords[k]));
  auto nm = opt::nelder_mead(
      [&](const Vector& q) {
        const double v = f(embed(q));
        return std::isfinite(v) ? std::min(-v, est::kFloodObjective) : est::kFloodObjective;
      },
      q0, options);
  nm.x = embed(nm.x);
  return nm;
}

// FhN: theta <-> estimation coordinates z for the two model variants.
struct FhnLayout {
  bool full = false;  // Model 2
  est::OdeFitProblem problem;

  Vector to_z(const Vector& theta) const {
    if (!full) return theta;
    Vector z(5);
    z << theta(0), theta(1), theta(2), theta(5), theta(6);
    return z;
  }
  Vector to_theta(const est::OdeFit& fit) const {
    if (!full) return Vector::Constant(1, fit.params[2]);
    // Noise variances are their conditional posterior mode given the ODE residuals at the
    // fitted structure, whatever residuals the criterion itself minimized. The residual MLE
    // alone can sit far out in the prior tail when a smoother nearly interpolates the data.
    std::vector<double> sse = fit.state_sse;
    std::vector<std::size_t> counts = fit.state_count;
    if (fit.params.size() == 3 && fit.x0.size() == 2) est::ode_state_sse(problem, fit.params, fit.x0, sse, counts);
    auto var = [&](std::size_t s) {
      if (s >= counts.size() || counts[s] == 0) return std::numeric_limits<double>::quiet_NaN();
      return (0.5 * sse[s] + kFhnVarianceScale) / (0.5 * static_cast<double>(counts[s]) + kFhnVarianceShape + 1.0);
    };
    Vector theta(7);
    theta << fit.params[0], fit.params[1], fit.params[2], var(0), var(1), fit.x0[0], fit.x0[1];
    return theta;
  }
};

std::vector<Criterion> fhn_criteria(std::shared_ptr<const FhnLayout> layout, const ModelOptions& options,
                                    const CriteriaRequest& request) {
  std::vector<est::Method> methods = request.methods;
  if (request.mode == OptimizationMode::Single || methods.empty()) methods = {est::Method::NLS};
  if (request.mode == OptimizationMode::Single) methods.resize(1);
  auto basis = std::make_shared<const spline::BasisSystem>(est::default_basis(layout->problem, options.gp.knot_refinement));

  std::vector<Criterion> out;
  for (est::Method m : methods) {
    Criterion c;
    c.method = m;
    c.label = est::method_name(m);
    switch (m) {
      case est::Method::NLS:
        c.fit = [layout, options, m](const Vector& init, Rng&) {
          const est::OdeFit fit = est::nls_fit(layout->problem, layout->to_z(init), {options.optimizer});
          return to_result(m, est::method_name(m), layout->to_theta(fit), fit.objective, fit.converged, init);
        };
        break;
      case est::Method::TwoStage:
        c.fit = [layout, options, m](const Vector& init, Rng&) {
          const est::OdeFit fit = est::two_stage_fit(layout->problem, layout->to_z(init), options.smooth, {options.optimizer});
          return to_result(m, est::method_name(m), layout->to_theta(fit), fit.objective, fit.converged, init);
        };
        break;
      case est::Method::GP:
        c.fit = [layout, options, basis, m](const Vector& init, Rng&) {
          const est::OdeFit fit = est::gp_outer_fit(layout->problem, layout->to_z(init), *basis, options.gp, {options.optimizer});
          return to_result(m, est::method_name(m), layout->to_theta(fit), fit.objective, fit.converged, init);
        };
        break;
      default:
        throw std::invalid_argument("FhN models support NLS, TwoStage and GP criteria, not " + est::method_name(m));
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::shared_ptr<const FhnLayout> fhn_layout(std::shared_ptr<const sim::ObservationSet> data, bool full) {
  auto layout = std::make_shared<FhnLayout>();
  layout->full = full;
  auto& p = layout->problem;
  p.rhs = ode::fhn_rhs;
  p.jacobian = ode::fhn_jacobian;
  p.params = {kFhnA, kFhnB, 3.0};
  p.x0 = {kFhnV0, kFhnR0};
  p.t0 = 0.0;
  p.step = 0.05;
  p.data = data;
  p.state_columns = {data->column_index("V"), data->column_index("R")};
  p.free_params = full ? std::vector<std::size_t>{0, 1, 2} : std::vector<std::size_t>{2};
  p.estimate_x0 = full;
  const Eigen::Index c_index = full ? 2 : 0;
  p.feasible = [c_index](const Vector& z) { return std::abs(z(c_index)) > 1e-8; };
  return layout;
}

ode::Trajectory fhn_trajectory(const Vector& theta7, const std::vector<double>& times) {
  const double params[3] = {theta7(0), theta7(1), theta7(2)};
  return ode::solve_rk4(ode::OdeProblem{ode::fhn_rhs, {theta7(5), theta7(6)}, 0.0, times, 0.05, {}}, params);
}

Vector fhn1_expand(const Vector& theta) {
  Vector full(7);
  full << kFhnA, kFhnB, theta(0), kFhnNoiseVar, kFhnNoiseVar, kFhnV0, kFhnR0;
  return full;
}

double normal_prior(double x, double mean, double spread, NormalReading reading) {
  return normal_logpdf(x, mean, reading == NormalReading::StandardDeviation ? spread : std::sqrt(spread));
}

double normal_draw(double mean, double spread, NormalReading reading, Rng& rng) {
  std::normal_distribution<double> d(mean, reading == NormalReading::StandardDeviation ? spread : std::sqrt(spread));
  return d(rng);
}

void require_column(const sim::ObservationSet& data, const std::string& name) { (void)data.column_index(name); }

}  // namespace

ModelSpec make_fhn1(std::shared_ptr<const sim::ObservationSet> data, const ModelOptions& options) {
  if (!data) throw std::invalid_argument("fhn1: missing data");
  require_column(*data, "V");
  require_column(*data, "R");
  const auto reading = options.normal_reading;
  auto layout = fhn_layout(data, false);

  ModelSpec m;
  m.name = "fhn1";
  m.param_names = {"c"};
  m.free_mask = {true};
  m.discrete_mask = {false};
  m.log_prior = [reading](const Vector& t) { return normal_prior(t(0), 14.0, 2.0, reading); };
  m.prior_sample = [reading](Rng& rng) { return Vector::Constant(1, normal_draw(14.0, 2.0, reading, rng)); };
  m.log_lik = [data](const Vector& t, Rng&) { return fhn_loglik(fhn1_expand(t), *data); };
  m.hessian_steps = [](const Vector& x) { return linalg::default_hessian_steps(x); };
  m.make_criteria = [layout, options](const CriteriaRequest& r) { return fhn_criteria(layout, options, r); };
  m.state_names = {"V", "R"};
  m.trajectory = [](const Vector& t, const std::vector<double>& times) { return fhn_trajectory(fhn1_expand(t), times); };
  m.data = data;
  return m;
}

ModelSpec make_fhn2(std::shared_ptr<const sim::ObservationSet> data, const ModelOptions& options) {
  if (!data) throw std::invalid_argument("fhn2: missing data");
  require_column(*data, "V");
  require_column(*data, "R");
  const auto reading = options.normal_reading;
  auto layout = fhn_layout(data, true);

  ModelSpec m;
  m.name = "fhn2";
  m.param_names = {"a", "b", "c", "sigma2_V", "sigma2_R", "V0", "R0"};
  m.free_mask.assign(7, true);
  m.discrete_mask.assign(7, false);
  m.log_prior = [reading](const Vector& t) {
    const double lv = inv_gamma_logpdf(t(3), kFhnVarianceShape, kFhnVarianceScale),
                 lr = inv_gamma_logpdf(t(4), kFhnVarianceShape, kFhnVarianceScale);
    if (lv == kNegInf || lr == kNegInf) return kNegInf;
    return normal_prior(t(0), 0.0, 0.4, reading) + normal_prior(t(1), 0.0, 0.4, reading) +
           normal_prior(t(2), 14.0, 2.0, reading) + lv + lr + normal_prior(t(5), -1.0, 0.5, reading) +
           normal_prior(t(6), 1.0, 0.5, reading);
  };
  m.prior_sample = [reading](Rng& rng) {
    Vector t(7);
    t(0) = normal_draw(0.0, 0.4, reading, rng);
    t(1) = normal_draw(0.0, 0.4, reading, rng);
    t(2) = normal_draw(14.0, 2.0, reading, rng);
    t(3) = inv_gamma_sample(kFhnVarianceShape, kFhnVarianceScale, rng);
    t(4) = inv_gamma_sample(kFhnVarianceShape, kFhnVarianceScale, rng);
    t(5) = normal_draw(-1.0, 0.5, reading, rng);
    t(6) = normal_draw(1.0, 0.5, reading, rng);
    return t;
  };
  m.log_lik = [data](const Vector& t, Rng&) { return fhn_loglik(t, *data); };
  m.hessian_steps = [](const Vector& x) { return linalg::default_hessian_steps(x); };
  m.make_criteria = [layout, options](const CriteriaRequest& r) { return fhn_criteria(layout, options, r); };
  m.state_names = {"V", "R"};
  m.trajectory = fhn_trajectory;
  m.data = data;
  return m;
}

ModelSpec make_sir(std::shared_ptr<const sim::ObservationSet> data, const ModelOptions& options) {
  if (!data) throw std::invalid_argument("sir: missing data");
  require_column(*data, "deaths");
  const double n_pop = options.population;
  if (!(n_pop >= 1.0) || n_pop != std::floor(n_pop)) throw std::invalid_argument("sir: population must be a positive integer");
  const double p_i0 = 5.0 / 261.0;

  ModelSpec m;
  m.name = "sir";
  m.param_names = {"alpha", "beta", "I0"};
  m.free_mask = {true, true, true};
  m.discrete_mask = {false, false, true};
  m.log_prior = [n_pop, p_i0](const Vector& t) {
    const double la = gamma_logpdf(t(0), 1.0, 1.0), lb = gamma_logpdf(t(1), 1.0, 1.0);
    const double li = binomial_logpmf(t(2), n_pop, p_i0);
    if (la == kNegInf || lb == kNegInf || li == kNegInf) return kNegInf;
    return la + lb + li;
  };
  m.prior_sample = [n_pop, p_i0](Rng& rng) {
    std::gamma_distribution<double> g(1.0, 1.0);
    std::binomial_distribution<int> b(static_cast<int>(n_pop), p_i0);
    Vector t(3);
    t(0) = g(rng);
    t(1) = g(rng);
    t(2) = static_cast<double>(b(rng));
    return t;
  };
  m.log_lik = [data, n_pop](const Vector& t, Rng&) { return sir_loglik(t, *data, n_pop); };
  // alpha and beta live on very different scales, so steps are relative.
  m.hessian_steps = [](const Vector& x) {
    return Vector((1e-4 * x.cwiseAbs().array()).max(1e-12).matrix());
  };

  est::OdeFitProblem base;
  base.rhs = ode::sir_rhs;
  base.jacobian = ode::sir_jacobian;
  base.params = {0.1, 0.001};
  base.free_params = {0, 1};
  base.t0 = 0.0;
  base.step = 0.1;
  base.admissible = ode::sir_admissible(n_pop);
  base.data = data;
  Eigen::Index infected = -1;
  for (std::size_t c = 0; c < data->columns.size(); ++c)
    if (data->columns[c] == "infected") infected = static_cast<Eigen::Index>(c);
  base.state_columns = {-1, infected, data->column_index("deaths")};
  base.feasible = [](const Vector& z) { return z(0) > 0.0 && z(1) > 0.0; };

  const std::size_t max_i0 = options.conditional_max_i0;
  const auto optimizer = options.optimizer;
  auto log_prior = m.log_prior;
  auto log_lik = m.log_lik;
  m.make_criteria = [base, max_i0, optimizer, n_pop, log_prior, log_lik](const CriteriaRequest& request) {
    std::vector<Criterion> out;
    if (request.mode == OptimizationMode::Shotgun) {
      for (std::size_t q = 1; q <= max_i0; ++q) {
        Criterion c;
        c.method = est::Method::ConditionalNLS;
        c.label = "ConditionalNLS[I0=" + std::to_string(q) + "]";
        c.fit = [base, q, n_pop, optimizer, label = c.label](const Vector& init, Rng&) {
          est::OdeFitProblem p = base;
          p.x0 = {n_pop - static_cast<double>(q), static_cast<double>(q), 0.0};
          const Vector z0 = init.head(2);
          const est::OdeFit fit = est::nls_fit(p, z0, {optimizer});
          Vector theta(3);
          theta << fit.params[0], fit.params[1], static_cast<double>(q);
          return to_result(est::Method::ConditionalNLS, label, theta, fit.objective, fit.converged, init);
        };
        out.push_back(std::move(c));
      }
    } else {
      // Maximize the conditional posterior for each I0 and keep the best full posterior.
      Criterion c;
      c.method = est::Method::ConditionalPosterior;
      c.label = "ConditionalPosterior[best of I0=1.." + std::to_string(max_i0) + "]";
      c.fit = [max_i0, optimizer, log_prior, log_lik, label = c.label](const Vector& init, Rng& rng) {
        auto target = [&](const Vector& t) {
          const double lp = log_prior(t);
          return lp == kNegInf ? kNegInf : lp + log_lik(t, rng);
        };
        est::EstimatorResult best;
        double best_value = kNegInf;
        bool have = false;
        for (std::size_t q = 1; q <= max_i0; ++q) {
          Vector start = init;
          start(2) = static_cast<double>(q);
          const auto nm = maximize(target, start, {0, 1}, optimizer);
          const double value = -nm.value;
          if (!have || value > best_value) {
            best = to_result(est::Method::ConditionalPosterior, label, nm.x, nm.value, nm.converged, init);
            best_value = value;
            have = true;
          }
        }
        return best;
      };
      out.push_back(std::move(c));
    }
    return out;
  };
  m.state_names = {"S", "I", "R"};
  m.trajectory = [n_pop](const Vector& t, const std::vector<double>& times) {
    const double params[2] = {t(0), t(1)};
    return ode::solve_rk4(sir_problem(times, n_pop, t(2)), params);
  };
  m.data = data;
  return m;
}

ModelSpec make_ricker(std::shared_ptr<const sim::ObservationSet> data, const ModelOptions& options) {
  if (!data) throw std::invalid_argument("ricker: missing data");
  const Eigen::Index col = data->column_index("y");
  std::vector<double> y;
  for (Eigen::Index i = 0; i < data->values.rows(); ++i)
    if (!std::isnan(data->values(i, col))) y.push_back(data->values(i, col));
  if (y.empty()) throw std::invalid_argument("ricker: no observed counts");
  const Vector observed = sl::summary_stats(y);
  const std::size_t steps = y.size();
  const double k = options.ricker_k, n0 = options.ricker_n0;
  const auto full = sl::SyntheticLikelihoodSpec::full(options.n_replicates, options.ridge);
  full.validate();

  auto simulator_for = [steps, k, n0](const Vector& t) -> sl::ReplicateSimulator {
    sim::RickerParams p;
    p.log_r = t(0);
    p.phi = t(1);
    p.sigma2_p = t(2);
    p.log_theta_tilde = t(3);
    p.carrying_capacity = k;
    p.initial_abundance = n0;
    p.steps = steps;
    return [p](Rng& rng) { return sim::ricker_counts(p, rng); };
  };
  auto supported = [](const Vector& t) { return t.allFinite() && t(1) > 0.0 && t(2) > 0.0; };
  auto score = [observed, simulator_for, supported](const Vector& t, const sl::SyntheticLikelihoodSpec& spec, Rng& rng) {
    if (!supported(t)) return kFloodLogLik;
    return clamp_flood(sl::synthetic_loglik(observed, spec, simulator_for(t), rng, kFloodLogLik));
  };

  ModelSpec m;
  m.name = "ricker";
  m.param_names = {"log_r", "phi", "sigma2_p", "log_theta_tilde"};
  m.free_mask.assign(4, true);
  m.discrete_mask.assign(4, false);
  m.stochastic = true;
  m.log_prior = [](const Vector& t) {
    const double lphi = chi_squared_logpdf(t(1), 4.0), ls = inv_gamma_logpdf(t(2), 2.0, 0.05);
    if (lphi == kNegInf || ls == kNegInf) return kNegInf;
    return normal_logpdf(t(0), 0.5, 1.0) + lphi + ls + normal_logpdf(t(3), 1.0, 1.0);
  };
  m.prior_sample = [](Rng& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    std::chi_squared_distribution<double> chi(4.0);
    Vector t(4);
    t(0) = 0.5 + n01(rng);
    t(1) = chi(rng);
    t(2) = inv_gamma_sample(2.0, 0.05, rng);
    t(3) = 1.0 + n01(rng);
    return t;
  };
  m.log_lik = [score, full](const Vector& t, Rng& rng) { return score(t, full, rng); };
  // The synthetic likelihood is rough at small scales, so differences are taken over wide steps.
  m.hessian_steps = [](const Vector& x) { return Vector((0.1 * x.cwiseAbs().array()).max(0.01).matrix()); };

  const auto optimizer = options.optimizer;
  const std::size_t n_rep = options.n_replicates, subset_size = options.subset_size;
  const double ridge = options.ridge;
  auto log_prior = m.log_prior;
  m.make_criteria = [=](const CriteriaRequest& request) {
    std::vector<Criterion> out;
    const std::vector<std::size_t> all{0, 1, 2, 3};
    if (request.mode == OptimizationMode::Shotgun) {
      Rng subset_rng = make_stream(request.seed, 0x5b5e7, 0);
      const auto specs = sl::make_subset_criteria(std::max<std::size_t>(request.q, 1), subset_rng, n_rep, ridge, subset_size);
      for (const auto& spec : specs) {
        Criterion c;
        c.method = est::Method::SyntheticSubset;
        c.label = "SyntheticSubset[";
        for (std::size_t i = 0; i < spec.subset.size(); ++i) c.label += (i ? "," : "") + std::to_string(spec.subset[i] + 1);
        c.label += "]";
        c.fit = [score, spec, optimizer, all, label = c.label](const Vector& init, Rng& rng) {
          const Rng common = rng;  // common random numbers across objective evaluations
          auto f = [&](const Vector& t) {
            Rng r = common;
            return score(t, spec, r);
          };
          const auto nm = maximize(f, init, all, optimizer);
          return to_result(est::Method::SyntheticSubset, label, nm.x, nm.value, nm.converged, init);
        };
        out.push_back(std::move(c));
      }
    } else {
      Criterion c;
      c.method = est::Method::SyntheticFull;
      c.label = "SyntheticFull";
      c.fit = [score, full, log_prior, optimizer, all](const Vector& init, Rng& rng) {
        const Rng common = rng;
        auto f = [&](const Vector& t) {
          const double lp = log_prior(t);
          if (lp == kNegInf) return kNegInf;
          Rng r = common;
          return lp + score(t, full, r);
        };
        const auto nm = maximize(f, init, all, optimizer);
        return to_result(est::Method::SyntheticFull, "SyntheticFull", nm.x, nm.value, nm.converged, init);
      };
      out.push_back(std::move(c));
    }
    return out;
  };
  m.data = data;
  return m;
}

ModelSpec make_model(const std::string& name, std::shared_ptr<const sim::ObservationSet> data,
                     const ModelOptions& options) {
  if (name == "fhn1") return make_fhn1(std::move(data), options);
  if (name == "fhn2") return make_fhn2(std::move(data), options);
  if (name == "sir") return make_sir(std::move(data), options);
  if (name == "ricker") return make_ricker(std::move(data), options);
  throw std::invalid_argument("unknown model '" + name + "' (expected fhn1, fhn2, sir or ricker)");
}

}  // namespace imis::model
