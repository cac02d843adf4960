// Acceptance run: property suites first, then the experiment criteria on the desk-scale configs.
// Prints one PASS/FAIL line per criterion and exits nonzero if any fails.

#include "imis/estimators.hpp"
#include "imis/harness.hpp"
#include "imis/imis_core.hpp"
#include "imis/linalg_stats.hpp"
#include "imis/ode_engine.hpp"
#include "imis/synthetic_likelihood.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

using namespace imis;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t threads() {
  if (std::getenv("IMIS_THREADS")) return harness::env_threads();
  return std::max(1u, std::thread::hardware_concurrency());
}

harness::ExperimentConfig load(const std::string& name) {
  auto c = harness::load_config(fs::path(IMIS_CONFIG_DIR) / (name + ".json"));
  c.output_dir = fs::path(IMIS_ACCEPTANCE_OUT) / name;
  c.run.threads = threads();
  return c;
}

struct Timed {
  core::RunResult result;
  double seconds = 0.0;
};

Timed run(const harness::ExperimentConfig& c) {
  const auto start = std::chrono::steady_clock::now();
  Timed t{harness::run_experiment(c), 0.0};
  t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return t;
}

bool weights_normalized(const core::RunResult& r) {
  for (const auto& d : r.report.diagnostics)
    if (!(d.weight_sum_error < 1e-10)) return false;
  return true;
}

double column_mean(const std::vector<Vector>& samples, Eigen::Index k) {
  double s = 0.0;
  for (const auto& x : samples) s += x(k);
  return s / static_cast<double>(samples.size());
}

double fraction_within(const std::vector<Vector>& samples, Eigen::Index k, double centre, double half_width) {
  std::size_t n = 0;
  for (const auto& x : samples) n += std::abs(x(k) - centre) < half_width;
  return static_cast<double>(n) / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Property suites

void property_weight_normalization() {
  harness::ExperimentConfig c;
  c.run.model = "fhn1";
  c.run.variant = core::Variant::IMIS_Opt;
  c.run.shotgun_methods = {est::Method::NLS};
  c.run.n0 = 400;
  c.run.b = 60;
  c.run.d = 2;
  c.run.q = 1;
  c.run.j = 300;
  c.run.n_iter = 6;
  c.data.seed = 11;
  c.output_dir = fs::path(IMIS_ACCEPTANCE_OUT) / "property_weights";
  const auto r = harness::run_experiment(c);
  double worst = 0.0;
  for (const auto& d : r.report.diagnostics) worst = std::max(worst, d.weight_sum_error);
  report("5 weight normalization", weights_normalized(r) && !r.report.diagnostics.empty(),
         fmt("%zu stages, max |sum w - 1| = %.2e (tol 1e-10)", r.report.diagnostics.size(), worst));
}

void property_stopping() {
  const auto uniform = core::stopping_criterion(std::vector<double>(10, std::log(0.1)), 10);
  std::vector<double> point(10, -std::numeric_limits<double>::infinity());
  point[0] = 0.0;
  const auto single = core::stopping_criterion(point, 10);
  const double expected = 10.0 * (1.0 - std::pow(0.9, 10));
  const bool ok = uniform.stop && std::abs(uniform.expected_unique - expected) < 1e-12 &&
                  std::abs(uniform.threshold - 10.0 * (1.0 - std::exp(-1.0))) < 1e-12 && !single.stop &&
                  std::abs(single.expected_unique - 1.0) < 1e-12;
  report("5 stopping criterion fixtures", ok,
         fmt("uniform N=J=10: %.3f >= %.3f; point mass: %.3f, no stop", uniform.expected_unique, uniform.threshold,
             single.expected_unique));
}

void property_rk4_order() {
  auto error = [](double h) {
    ode::OdeProblem p;
    p.rhs = [](std::span<const double> x, std::span<const double> q, double, std::span<double> d) { d[0] = -q[0] * x[0]; };
    p.x0 = {1.0};
    p.t_grid = {2.0};
    p.step = h;
    const double k[1] = {1.5};
    return std::abs(ode::solve_rk4(p, k).states(0, 0) - std::exp(-3.0));
  };
  const double ratio = error(0.2) / error(0.1);
  report("5 RK4 order four", ratio >= 12.0 && ratio <= 20.0, fmt("error ratio at halved step %.3f (want [12, 20])", ratio));
}

void property_sir_conservation() {
  ode::OdeProblem p;
  p.rhs = ode::sir_rhs;
  p.x0 = {257.0, 4.0, 0.0};
  for (int d = 1; d <= 136; ++d) p.t_grid.push_back(d);
  p.step = 0.1;
  const double k[2] = {0.1, 0.00062};
  const auto tr = ode::solve_rk4(p, k);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < tr.states.rows(); ++i) worst = std::max(worst, std::abs(tr.states.row(i).sum() - 261.0) / 261.0);
  report("5 SIR conservation", tr.domain_ok && worst < 1e-6, fmt("max relative drift %.2e (tol 1e-6)", worst));
}

void property_resampling() {
  std::vector<double> ll;
  for (int i = 1; i <= 10; ++i) ll.push_back(std::log(static_cast<double>(i)));
  const auto lw = core::likelihood_log_weights(ll);
  const std::size_t j = 100000;
  Rng rng = make_stream(2024, 6, 0);
  std::vector<double> counts(10, 0.0);
  for (std::size_t i : core::resample(lw, j, rng)) counts[i] += 1.0;
  double chi2 = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    const double e = static_cast<double>(j) * std::exp(lw[i]);
    chi2 += (counts[i] - e) * (counts[i] - e) / e;
  }
  report("5 resampling chi-square", chi2 < 27.877, fmt("chi2 = %.3f, 0.001-level critical value 27.877 (9 df)", chi2));
}

void property_mvn() {
  const double s1 = 1.3, s2 = 0.7, rho = 0.4;
  Matrix cov(2, 2);
  cov << s1 * s1, rho * s1 * s2, rho * s1 * s2, s2 * s2;
  Vector mean(2), x(2);
  mean << 0.5, -1.0;
  x << 1.7, -0.2;
  const linalg::GaussianComponent comp(mean, linalg::CovarianceMatrix::from_matrix(cov));
  const double z1 = (x(0) - mean(0)) / s1, z2 = (x(1) - mean(1)) / s2;
  const double direct = -std::log(2.0 * std::numbers::pi * s1 * s2 * std::sqrt(1.0 - rho * rho)) -
                        (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / (2.0 * (1.0 - rho * rho));
  const double err = std::abs(linalg::mvn_logpdf(x, comp) - direct);
  report("5 MVN log-density", err < 1e-10, fmt("|mvn_logpdf - direct 2x2 formula| = %.2e (tol 1e-10)", err));
}

void property_hessian() {
  Matrix a(3, 3);
  a << 4, 1, 0.5, 1, 3, -0.2, 0.5, -0.2, 2;
  Vector x0(3);
  x0 << 0.3, -1.1, 2.0;
  const linalg::ScalarFunction f = [&](const Vector& v) {
    const Vector d = v - x0;
    return -0.5 * d.dot(a * d) + 7.0;
  };
  const auto inv = linalg::numeric_hessian(f, x0);
  const double err = (inv.matrix() - a.inverse()).cwiseAbs().maxCoeff();
  report("5 numeric Hessian on a quadratic", err < 1e-5, fmt("max entry error of inverse negative Hessian %.2e (tol 1e-5)", err));
}

void property_mahalanobis() {
  Matrix s(2, 2);
  s << 2.0, 0.3, 0.3, 0.5;
  Matrix a(2, 2);
  a << 1.5, -0.4, 0.7, 2.2;
  Vector b(2), x(2), c(2);
  b << 3.0, -2.0;
  x << 0.4, 1.9;
  c << -0.6, 0.2;
  const double before = linalg::mahalanobis_sq(x, c, linalg::CovarianceMatrix::from_matrix(s));
  const Matrix s2 = a * s * a.transpose();
  const double after = linalg::mahalanobis_sq(a * x + b, a * c + b, linalg::CovarianceMatrix::from_matrix(0.5 * (s2 + s2.transpose())));
  report("5 Mahalanobis affine invariance", std::abs(before - after) < 1e-8, fmt("|d2 - d2 after affine map| = %.2e (tol 1e-8)", std::abs(before - after)));
}

void property_local_poly() {
  std::vector<double> t, lin, quad;
  for (int i = 0; i < 41; ++i) {
    t.push_back(0.25 * i);
    lin.push_back(1.0 - 2.0 * t.back());
    quad.push_back(0.5 + t.back() - 0.3 * t.back() * t.back());
  }
  const auto a = est::local_poly_smooth(t, lin), b = est::local_poly_smooth(t, quad);
  double worst = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    worst = std::max({worst, std::abs(a.values[i] - lin[i]), std::abs(a.derivatives[i] + 2.0), std::abs(b.values[i] - quad[i]),
                      std::abs(b.derivatives[i] - (1.0 - 0.6 * t[i]))});
  }
  report("5 local polynomial exactness", worst < 1e-8, fmt("max error on linear and quadratic data %.2e (tol 1e-8)", worst));
}

void property_gp_projection() {
  auto data = std::make_shared<sim::ObservationSet>();
  data->columns = {"x"};
  data->values.resize(21, 1);
  for (int i = 0; i < 21; ++i) {
    data->times.push_back(0.2 * i);
    data->values(i, 0) = std::exp(-2.0 * data->times.back()) + 0.01 * std::sin(7.0 * i);
  }
  est::OdeFitProblem p;
  p.rhs = [](std::span<const double> x, std::span<const double> q, double, std::span<double> d) { d[0] = -q[0] * x[0]; };
  p.jacobian = [](std::span<const double>, std::span<const double> q, double, std::span<double> j) { j[0] = -q[0]; };
  p.params = {1.0};
  p.free_params = {0};
  p.x0 = {1.0};
  p.step = 0.01;
  p.data = data;
  p.state_columns = {0};
  const auto basis = est::default_basis(p);
  est::GpSettings s;
  s.lambda = {0.0};
  s.omega = {1.0};
  const auto r = est::gp_inner(p, std::array{2.0}, basis, s);
  const Matrix phi = basis.design(data->times);
  const Vector c = phi.completeOrthogonalDecomposition().solve(data->values.col(0));
  const double err = (r.coefficients.row(0).transpose() - c).cwiseAbs().maxCoeff();
  report("5 GP lambda = 0 projection", err < 1e-8, fmt("max coefficient difference %.2e (tol 1e-8)", err));
}

void property_synthetic_identity() {
  const auto spec = sl::SyntheticLikelihoodSpec::full(50, 1e-6);
  Rng rng = make_stream(3, 2, 0);
  const sim::RickerParams params;
  const auto moments = sl::replicate_moments(spec, [&](Rng& r) { return sim::ricker_counts(params, r); }, rng);
  const auto ll = sl::gaussian_summary_loglik(moments.mean, moments, spec);
  Matrix reg = moments.covariance;
  reg.diagonal().array() += spec.ridge * reg.diagonal().mean();
  Eigen::LLT<Matrix> llt(reg);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  report("5 synthetic likelihood zero quadratic form", ll && *ll == -0.5 * log_det,
         ll ? fmt("log-lik at replicate mean %.17g, -log|S|/2 = %.17g", *ll, -0.5 * log_det) : std::string("not finite"));
}

void property_determinism() {
  auto config = [](const std::string& tag, std::size_t n_threads) {
    harness::ExperimentConfig c;
    c.run.model = "fhn1";
    c.run.variant = core::Variant::IMIS_Opt;
    c.run.shotgun_methods = {est::Method::NLS};
    c.run.n0 = 300;
    c.run.b = 50;
    c.run.d = 2;
    c.run.q = 1;
    c.run.j = 500;
    c.run.n_iter = 4;
    c.run.seed = 17;
    c.run.threads = n_threads;
    c.data.seed = 11;
    c.output_dir = fs::path(IMIS_ACCEPTANCE_OUT) / ("property_determinism_" + tag);
    return c;
  };
  const std::vector<std::pair<std::string, std::size_t>> runs{{"a", 1}, {"b", 1}, {"c", 4}};
  std::vector<std::string> csv;
  for (const auto& [tag, n] : runs) {
    const auto c = config(tag, n);
    harness::run_experiment(c);
    csv.push_back(slurp(c.output_dir / "posterior_samples.csv"));
  }
  const bool ok = !csv[0].empty() && csv[0] == csv[1] && csv[0] == csv[2];
  report("5 determinism", ok, "posterior_samples.csv byte-identical for two 1-thread runs and a 4-thread run");
}

// ---------------------------------------------------------------------------
// Experiment criteria

void criterion_1() {
  const auto opt = run(load("fhn1_opt_desk"));
  const double local = fraction_within(opt.result.samples, 0, 12.05, 0.5);
  report("1a FhN IMIS-Opt mode entrapment", local >= 0.99 && weights_normalized(opt.result),
         fmt("%.1f%% of resampled c within 12.05 +- 0.5 (want >= 99%%), %.0f s", 100.0 * local, opt.seconds));

  const auto shopt = run(load("fhn1_shopt_desk"));
  const double global = fraction_within(shopt.result.samples, 0, 3.0, 0.3);
  report("1b FhN IMIS-ShOpt recovery", global >= 0.95 && weights_normalized(shopt.result),
         fmt("%.1f%% of resampled c within 3 +- 0.3 (want >= 95%%), %.0f s", 100.0 * global, shopt.seconds));
}

void criterion_2() {
  const auto config = load("fhn2_shopt_desk");
  const auto t = run(config);
  const auto& s = t.result.samples;
  const double a = column_mean(s, 0), c = column_mean(s, 2);
  const auto spec = harness::trajectory_model("fhn2");
  const auto rows = harness::trajectory_table(spec, s, 0, harness::default_trajectory_times("fhn2"));
  int changes = 0;
  double prev = 0.0;
  bool have = false;
  for (const auto& r : rows) {
    if (r.state != "V") continue;
    if (have && (prev < 0.0) != (r.value < 0.0)) ++changes;
    prev = r.value;
    have = true;
  }
  const int oscillations = changes / 2;
  const bool ok = std::abs(a - 0.2) < 0.1 && std::abs(c - 3.0) < 0.3 && oscillations >= 2 && t.seconds < 1200.0 &&
                  weights_normalized(t.result);
  report("2 FhN model 2 IMIS-ShOpt", ok,
         fmt("mean a = %.4f (|a - 0.2| < 0.1), mean c = %.4f (|c - 3| < 0.3), %d V-oscillations in the mean "
             "trajectory (want >= 2), %.0f s (limit 1200)",
             a, c, oscillations, t.seconds));
}

void criterion_3() {
  const auto shopt = run(load("sir_shopt_desk"));
  std::set<double> support;
  for (const auto& x : shopt.result.samples) support.insert(x(2));
  std::set<std::string> conditional;
  for (const auto& m : shopt.result.report.modes)
    if (m.method == est::Method::ConditionalNLS) conditional.insert(m.label);

  const auto opt = run(load("sir_opt_desk"));
  std::set<double> opt_support;
  for (const auto& x : opt.result.samples) opt_support.insert(x(2));

  std::map<double, std::size_t> freq;
  for (const auto& x : shopt.result.samples) ++freq[x(2)];
  std::string marginal;
  for (const auto& [v, n] : freq) marginal += fmt(" %g:%zu", v, n);

  const bool ok = support.size() >= 2 && conditional.size() == 10 && opt_support.size() == 1 &&
                  shopt.seconds + opt.seconds < 600.0 && weights_normalized(shopt.result) && weights_normalized(opt.result);
  report("3 SIR multimodality", ok,
         fmt("IMIS-ShOpt-SIR I(0) support %zu values (want >= 2; counts%s), %zu conditional modes recorded (want 10); "
             "IMIS-Opt support %zu value(s) (want 1); %.0f s + %.0f s (limit 600)",
             support.size(), marginal.c_str(), conditional.size(), opt_support.size(), shopt.seconds, opt.seconds));
}

void criterion_4() {
  const auto t = run(load("ricker_shopt_desk"));
  const auto& s = t.result.samples;
  const double log_r = column_mean(s, 0), phi = column_mean(s, 1);
  double min_var = std::numeric_limits<double>::infinity();
  for (const auto& x : s) min_var = std::min(min_var, x(2));
  const bool ok = std::abs(log_r - 0.5) < 0.5 && std::abs(phi - 4.0) < 1.5 && min_var > 0.0 && t.seconds < 900.0 &&
                  weights_normalized(t.result);
  report("4 theta-Ricker synthetic likelihood", ok,
         fmt("mean log r = %.4f (|. - 0.5| < 0.5), mean phi = %.4f (|. - 4| < 1.5), min resampled sigma2_p = %.3g "
             "(want > 0), %.0f s (limit 900)",
             log_r, phi, min_var, t.seconds));
}

void guarded(const std::string& name, const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    report(name, false, std::string("exception: ") + e.what());
  }
}

}  // namespace

int main() {
  fs::create_directories(IMIS_ACCEPTANCE_OUT);
  std::printf("acceptance: %zu worker thread(s), artifacts in %s\n", threads(), IMIS_ACCEPTANCE_OUT);

  guarded("5 weight normalization", property_weight_normalization);
  guarded("5 stopping criterion fixtures", property_stopping);
  guarded("5 RK4 order four", property_rk4_order);
  guarded("5 SIR conservation", property_sir_conservation);
  guarded("5 resampling chi-square", property_resampling);
  guarded("5 MVN log-density", property_mvn);
  guarded("5 numeric Hessian on a quadratic", property_hessian);
  guarded("5 Mahalanobis affine invariance", property_mahalanobis);
  guarded("5 local polynomial exactness", property_local_poly);
  guarded("5 GP lambda = 0 projection", property_gp_projection);
  guarded("5 synthetic likelihood zero quadratic form", property_synthetic_identity);
  guarded("5 determinism", property_determinism);

  if (failures > 0) {
    std::printf("FAIL experiment suites: skipped because %d property check(s) failed\n", failures);
    return 1;
  }

  guarded("1 FhN model 1", criterion_1);
  guarded("2 FhN model 2 IMIS-ShOpt", criterion_2);
  guarded("3 SIR multimodality", criterion_3);
  guarded("4 theta-Ricker synthetic likelihood", criterion_4);

  std::printf("%s: %d criterion line(s) failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
