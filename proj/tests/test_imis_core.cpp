#include "doctest.h"

#include "imis/imis_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>

using namespace imis;
using namespace imis::core;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double norm_logpdf(double x, double mu, double sd) {
  return -0.5 * std::log(2.0 * std::numbers::pi * sd * sd) - 0.5 * (x - mu) * (x - mu) / (sd * sd);
}

// Independent N(0, 1) prior in `dim` coordinates with a Gaussian likelihood centred at `target`.
// Criteria return the init shifted by a tiny method-specific offset, or throw for `failing` indices.
struct Stub {
  std::size_t dim = 2;
  double target = 1.0;
  double lik_sd = 0.5;
  bool flat = false;
  std::function<bool(const Vector&)> flooded;
  std::size_t n_criteria = 1;
  std::set<std::size_t> failing;

  model::ModelSpec spec() const {
    model::ModelSpec m;
    m.name = "stub";
    for (std::size_t i = 0; i < dim; ++i) m.param_names.push_back("x" + std::to_string(i));
    m.free_mask.assign(dim, true);
    m.discrete_mask.assign(dim, false);
    m.log_prior = [](const Vector& t) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < t.size(); ++i) s += norm_logpdf(t(i), 0.0, 1.0);
      return s;
    };
    const std::size_t n = dim;
    m.prior_sample = [n](Rng& rng) {
      std::normal_distribution<double> z;
      Vector v(static_cast<Eigen::Index>(n));
      for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = z(rng);
      return v;
    };
    const double target_ = target, sd = lik_sd;
    const bool flat_ = flat;
    const auto flooded_ = flooded;
    m.log_lik = [=](const Vector& t, Rng&) {
      if (flooded_ && flooded_(t)) return model::kFloodLogLik;
      if (flat_) return 0.0;
      double s = 0.0;
      for (Eigen::Index i = 0; i < t.size(); ++i) s += norm_logpdf(t(i), target_, sd);
      return s;
    };
    m.hessian_steps = [](const Vector& x) { return linalg::default_hessian_steps(x); };
    const std::size_t nc = n_criteria;
    const auto failing_ = failing;
    m.make_criteria = [nc, failing_](const model::CriteriaRequest&) {
      std::vector<model::Criterion> out;
      for (std::size_t q = 0; q < nc; ++q) {
        model::Criterion c;
        c.method = est::Method::NLS;
        c.label = "stub" + std::to_string(q);
        const bool fails = failing_.count(q) > 0;
        c.fit = [q, fails](const Vector& init, Rng&) {
          if (fails) throw std::runtime_error("stub failure");
          est::EstimatorResult r;
          r.theta_hat = init.array() + 1e-6 * static_cast<double>(q);
          r.converged = true;
          r.init = init;
          return r;
        };
        out.push_back(c);
      }
      return out;
    };
    return m;
  }
};

RunConfig stub_config(std::size_t n0, std::size_t b, std::size_t d, std::size_t q, Variant v = Variant::IMIS_Opt) {
  RunConfig c;
  c.n0 = n0;
  c.b = b;
  c.d = d;
  c.q = q;
  c.j = 1000;
  c.n_iter = 20;
  c.variant = v;
  c.model = "stub";
  c.seed = 3;
  return c;
}

double weight_sum(const std::vector<double>& lw) {
  double s = 0.0;
  for (double x : lw) s += std::exp(x);
  return s;
}

}  // namespace

TEST_CASE("variant names round trip") {
  for (auto v : {Variant::IMIS, Variant::IMIS_Opt, Variant::IMIS_ShOpt, Variant::IMIS_ShOpt_SL, Variant::IMIS_ShOpt_SIR})
    CHECK(parse_variant(variant_name(v)) == v);
  CHECK_THROWS_AS(parse_variant("SMC"), std::invalid_argument);
}

TEST_CASE("run configuration validation") {
  auto ok = stub_config(100, 10, 2, 1);
  CHECK_NOTHROW(ok.validate());
  auto c = ok;
  c.j = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ok;
  c.n0 = 10;
  c.d = 6;
  c.q = 2;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ok;
  c.variant = Variant::IMIS_ShOpt_SL;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ok;
  c.variant = Variant::IMIS_ShOpt;
  c.model = "fhn1";
  c.q = 2;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.q = 3;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("likelihood weights") {
  auto w = likelihood_log_weights({std::log(1.0), std::log(3.0)});
  CHECK(std::exp(w[0]) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(std::exp(w[1]) == doctest::Approx(0.75).epsilon(1e-14));
  w = likelihood_log_weights({-1000.0, -1000.0});
  CHECK(std::exp(w[0]) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::exp(w[1]) == doctest::Approx(0.5).epsilon(1e-12));
  w = likelihood_log_weights({model::kFloodLogLik, 0.0});
  CHECK(std::exp(w[0]) < 1e-300);
  CHECK(std::exp(w[1]) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("mixture weights on a one-dimensional hand fixture") {
  // Prior N(0, 1), one component N(2, 0.5^2), N0 = 2, B = 2, four particles.
  ParticleSystem ps;
  ps.n0 = 2;
  ps.b = 2;
  ps.gaussian_coords = {0};
  const std::array<double, 4> x{-1.0, 0.5, 1.8, 2.5};
  const std::array<double, 4> ll{-1.0, -0.5, -2.0, -0.3};
  Matrix var(1, 1);
  var(0, 0) = 0.25;
  ps.components.push_back(
      {linalg::GaussianComponent(Vector::Constant(1, 2.0), linalg::CovarianceMatrix::from_matrix(var)), Vector::Constant(1, 2.0), "h"});
  for (std::size_t i = 0; i < 4; ++i) {
    ps.thetas.push_back(Vector::Constant(1, x[i]));
    ps.log_liks.push_back(ll[i]);
    ps.log_priors.push_back(norm_logpdf(x[i], 0.0, 1.0));
    ps.log_mixture.push_back(norm_logpdf(x[i], 2.0, 0.5));
  }
  mixture_log_weights(ps);

  std::array<double, 4> direct{};
  double total = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double p = std::exp(-0.5 * x[i] * x[i]) / std::sqrt(2.0 * std::numbers::pi);
    const double h = std::exp(-0.5 * (x[i] - 2.0) * (x[i] - 2.0) / 0.25) / std::sqrt(2.0 * std::numbers::pi * 0.25);
    direct[i] = std::exp(ll[i]) * p / (0.5 * p + 0.5 * h);
    total += direct[i];
  }
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::exp(ps.log_weights[i]) == doctest::Approx(direct[i] / total).epsilon(1e-12));
  CHECK(std::abs(weight_sum(ps.log_weights) - 1.0) < 1e-10);
  CHECK(mixture_audit(ps) < 1e-12);
}

TEST_CASE("mixture weights reduce to likelihood weights") {
  ParticleSystem ps;
  ps.n0 = 4;
  ps.b = 4;
  ps.gaussian_coords = {0};
  const std::array<double, 4> x{-1.0, 0.2, 0.7, 1.9};
  const std::array<double, 4> ll{-3.0, -0.1, -1.2, -2.2};
  for (std::size_t i = 0; i < 4; ++i) {
    ps.thetas.push_back(Vector::Constant(1, x[i]));
    ps.log_liks.push_back(ll[i]);
    ps.log_priors.push_back(norm_logpdf(x[i], 0.0, 1.0));
    ps.log_mixture.push_back(kNegInf);
  }
  SUBCASE("no components") {
    mixture_log_weights(ps);
  }
  SUBCASE("a component equal to the prior") {
    ps.components.push_back({linalg::GaussianComponent(Vector::Zero(1), linalg::CovarianceMatrix::identity(1)), Vector::Zero(1), "prior"});
    for (std::size_t i = 0; i < 4; ++i) ps.log_mixture[i] = ps.log_priors[i];
    mixture_log_weights(ps);
  }
  const auto expected = likelihood_log_weights({ll.begin(), ll.end()});
  for (std::size_t i = 0; i < 4; ++i) CHECK(ps.log_weights[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("component density carries an indicator on pinned coordinates") {
  MixtureComponent comp{linalg::GaussianComponent(Vector::Zero(2), linalg::CovarianceMatrix::identity(2)),
                        (Vector(3) << 0.0, 0.0, 4.0).finished(), "c"};
  const std::vector<std::size_t> coords{0, 1};
  const double inside = component_log_density(comp, (Vector(3) << 0.3, -0.2, 4.0).finished(), coords);
  CHECK(inside == doctest::Approx(norm_logpdf(0.3, 0, 1) + norm_logpdf(-0.2, 0, 1)).epsilon(1e-13));
  CHECK(component_log_density(comp, (Vector(3) << 0.3, -0.2, 5.0).finished(), coords) == kNegInf);
}

TEST_CASE("stopping criterion fixtures") {
  std::vector<double> point(10, kNegInf);
  point[0] = 0.0;
  auto v = stopping_criterion(point, 10);
  CHECK(v.expected_unique == doctest::Approx(1.0));
  CHECK(v.threshold == doctest::Approx(10.0 * (1.0 - std::exp(-1.0))));
  CHECK_FALSE(v.stop);

  std::vector<double> uniform(10, std::log(0.1));
  v = stopping_criterion(uniform, 10);
  CHECK(v.expected_unique == doctest::Approx(10.0 * (1.0 - std::pow(0.9, 10))).epsilon(1e-12));
  CHECK(v.expected_unique == doctest::Approx(6.513).epsilon(1e-4));
  CHECK(v.stop);

  std::vector<double> big(10000, std::log(1e-4));
  CHECK(stopping_criterion(big, 10000).stop);
}

TEST_CASE("resampling") {
  Rng rng(1);
  const auto copies = resample({0.0, kNegInf}, 5, rng);
  CHECK(copies == std::vector<std::size_t>(5, 0));

  const std::size_t j = 100000;
  std::vector<std::size_t> counts(4, 0);
  for (std::size_t i : resample(std::vector<double>(4, std::log(0.25)), j, rng)) ++counts[i];
  const double sd = std::sqrt(j * 0.25 * 0.75);
  for (std::size_t c : counts) CHECK(std::abs(static_cast<double>(c) - 0.25 * j) < 4.0 * sd);

  Rng a(9), b(9);
  const std::vector<double> lw = likelihood_log_weights({0.1, -0.3, 1.2, 0.0});
  CHECK(resample(lw, 50, a) == resample(lw, 50, b));
}

TEST_CASE("resample frequencies pass a chi-square test") {
  std::vector<double> raw{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<double> ll;
  for (double r : raw) ll.push_back(std::log(r));
  const auto lw = likelihood_log_weights(ll);
  const std::size_t j = 100000;
  Rng rng(12);
  std::vector<double> counts(10, 0.0);
  for (std::size_t i : resample(lw, j, rng)) counts[i] += 1.0;
  double chi2 = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    const double expected = j * std::exp(lw[i]);
    chi2 += (counts[i] - expected) * (counts[i] - expected) / expected;
  }
  CHECK(chi2 < 27.877);  // 0.999 quantile of chi-square with 9 degrees of freedom
}

TEST_CASE("argmax selection breaks ties by index and can skip flooded particles") {
  ParticleSystem ps;
  ps.log_weights = {std::log(0.4), std::log(0.4), std::log(0.2), kNegInf};
  ps.log_liks = {model::kFloodLogLik, 0.0, 0.0, 0.0};
  CHECK(*argmax_weight(ps, {0, 1, 2, 3}, false) == 0);
  CHECK(*argmax_weight(ps, {0, 1, 2, 3}, true) == 1);
  CHECK(*argmax_weight(ps, {2, 1}, false) == 1);
  CHECK_FALSE(argmax_weight(ps, {3}, false).has_value());
  CHECK_FALSE(argmax_weight(ps, {0}, true).has_value());
}

TEST_CASE("initial stage draws and weights the prior sample") {
  Stub stub;
  const auto m = stub.spec();
  Sampler s(m, stub_config(500, 50, 2, 1));
  s.initial_stage();
  const auto& ps = s.particles();
  CHECK(ps.size() == 500);
  CHECK(ps.candidates.size() == 500);
  CHECK(std::abs(weight_sum(ps.log_weights) - 1.0) < 1e-10);
  const auto expected = likelihood_log_weights(ps.log_liks);
  for (std::size_t i = 0; i < ps.size(); ++i) CHECK(ps.log_weights[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("all-flood prior sample aborts") {
  Stub stub;
  stub.flooded = [](const Vector&) { return true; };
  const auto m = stub.spec();
  Sampler s(m, stub_config(100, 10, 2, 1));
  CHECK_THROWS_AS(s.initial_stage(), AllFloodError);
  Sampler r(m, stub_config(100, 10, 2, 1));
  CHECK_THROWS_AS(r.run(), AllFloodError);
}

TEST_CASE("exclusion arithmetic and bookkeeping with skipped cells") {
  Stub stub;
  stub.dim = 1;
  stub.n_criteria = 10;
  SUBCASE("every cell succeeds") {}
  SUBCASE("one criterion always fails") { stub.failing = {4}; }
  const auto m = stub.spec();
  auto config = stub_config(3000, 10, 3, 10);
  Sampler s(m, config);
  s.initial_stage();
  s.shotgun_optimize();
  const auto& ps = s.particles();
  std::size_t used = 0, excluded = 0;
  for (const auto& mode : s.report().modes) {
    if (mode.used) {
      ++used;
      CHECK(mode.excluded == 100);
    } else {
      CHECK_FALSE(mode.skip_reason.empty());
      CHECK(mode.excluded == 0);
    }
    excluded += mode.excluded;
  }
  CHECK(s.report().modes.size() == 30);
  CHECK(used == 30 - 3 * stub.failing.size());
  CHECK(excluded == std::min<std::size_t>(3000, used * 100));
  CHECK(ps.candidates.size() == 3000 - excluded);
  CHECK(ps.size() == 3000 + 10 * used);
  CHECK(ps.components.size() == used);
  CHECK(std::abs(weight_sum(ps.log_weights) - 1.0) < 1e-10);
  CHECK(mixture_audit(ps) < 1e-12);
}

TEST_CASE("optimization inits are distinct and never flooded") {
  Stub stub;
  stub.dim = 1;
  stub.n_criteria = 2;
  stub.flooded = [](const Vector& t) { return t(0) > 2.0; };
  stub.target = 2.0;
  const auto m = stub.spec();
  Sampler s(m, stub_config(400, 10, 8, 2));
  s.initial_stage();
  const auto before = s.particles();
  s.shotgun_optimize();
  std::set<std::size_t> inits;
  for (const auto& mode : s.report().modes) {
    CHECK(before.log_liks[mode.init_index] > model::kFloodLogLik);
    inits.insert(mode.init_index);
  }
  CHECK(inits.size() == 8);
  for (std::size_t i = 0; i < before.size(); ++i)
    if (before.log_liks[i] == model::kFloodLogLik) CHECK(std::exp(before.log_weights[i]) < 1e-300);
}

TEST_CASE("importance stage with uniform weights uses the plain neighbour covariance") {
  Stub stub;
  stub.flat = true;
  const auto m = stub.spec();
  const std::size_t b = 40;
  Sampler s(m, stub_config(300, b, 1, 1, Variant::IMIS));
  s.initial_stage();
  const ParticleSystem before = s.particles();
  for (double w : before.log_weights) REQUIRE(w == doctest::Approx(-std::log(300.0)));
  const auto nbrs = s.importance_neighbours(0);

  // Brute-force neighbours under the explicit inverse of the prior covariance.
  const Matrix inv = s.prior_covariance().matrix().inverse();
  std::vector<std::pair<double, std::size_t>> dist;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const Vector d = before.thetas[i] - before.thetas[0];
    dist.emplace_back(d.dot(inv * d), i);
  }
  std::sort(dist.begin(), dist.end());
  std::set<std::size_t> expected, got(nbrs.begin(), nbrs.end());
  for (std::size_t k = 0; k < b; ++k) expected.insert(dist[k].second);
  CHECK(got == expected);

  Matrix cov = Matrix::Zero(2, 2);
  for (std::size_t i : expected) {
    const Vector d = before.thetas[i] - before.thetas[0];
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(b - 1);

  s.importance_stage();
  const auto& ps = s.particles();
  CHECK(ps.size() == 300 + b);
  const auto& comp = ps.components.back();
  CHECK((comp.center.array() == before.thetas[0].array()).all());
  CHECK((comp.gaussian.cov.matrix() - cov).cwiseAbs().maxCoeff() <= 1e-12 * cov.cwiseAbs().maxCoeff());
  CHECK(std::abs(weight_sum(ps.log_weights) - 1.0) < 1e-10);
}

TEST_CASE("importance stage centres the new batch on a dominant particle") {
  Stub stub;
  stub.lik_sd = 0.05;
  stub.target = 0.7;
  const auto m = stub.spec();
  Sampler s(m, stub_config(300, 30, 1, 1, Variant::IMIS));
  s.initial_stage();
  const auto& lw = s.particles().log_weights;
  const auto top = static_cast<std::size_t>(std::max_element(lw.begin(), lw.end()) - lw.begin());
  const Vector center = s.particles().thetas[top];
  s.importance_stage();
  CHECK((s.particles().components.back().center.array() == center.array()).all());
  Vector mean = Vector::Zero(2);
  for (std::size_t i = 300; i < 330; ++i) mean += s.particles().thetas[i] / 30.0;
  CHECK((mean - center).norm() < 1.0);
}

TEST_CASE("full runs keep the bookkeeping invariants") {
  Stub stub;
  stub.n_criteria = 2;
  stub.lik_sd = 0.3;
  const auto m = stub.spec();
  for (Variant v : {Variant::IMIS, Variant::IMIS_Opt}) {
    auto config = stub_config(400, 40, 3, 2, v);
    config.j = 200;
    Sampler s(m, config);
    const auto r = s.run();
    const auto& ps = r.particles;
    const std::size_t cells = v == Variant::IMIS ? 0 : 6;
    CHECK(ps.size() == 400 + 40 * (cells + r.report.iterations));
    CHECK(ps.components.size() == cells + r.report.iterations);
    CHECK(r.samples.size() == 200);
    CHECK(std::abs(weight_sum(ps.log_weights) - 1.0) < 1e-10);
    for (const auto& d : r.report.diagnostics) CHECK(d.weight_sum_error < 1e-10);
    CHECK(r.report.diagnostics.back().mixture_audit < 1e-12);
    CHECK(r.report.modes.size() == cells);
    Vector mean = Vector::Zero(2);
    for (const auto& x : r.samples) mean += x / 200.0;
    // Posterior of N(0,1) prior times N(1, 0.3^2) likelihood has mean 1 / (1 + 0.09).
    CHECK((mean.array() - 1.0 / 1.09).abs().maxCoeff() < 0.1);
  }
}

TEST_CASE("runs are identical for any thread count") {
  Stub stub;
  stub.n_criteria = 3;
  const auto m = stub.spec();
  auto config = stub_config(300, 30, 2, 3);
  config.j = 100;
  config.threads = 1;
  const auto one = Sampler(m, config).run();
  config.threads = 4;
  const auto four = Sampler(m, config).run();
  REQUIRE(one.samples.size() == four.samples.size());
  CHECK(one.sample_indices == four.sample_indices);
  for (std::size_t i = 0; i < one.particles.size(); ++i)
    CHECK((one.particles.thetas[i].array() == four.particles.thetas[i].array()).all());
  CHECK(one.particles.log_weights == four.particles.log_weights);
}

TEST_CASE("fhn model 1 shotgun stage finds both modes") {
  Rng rng = make_stream(11, 0xda7a, 0);
  auto data = std::make_shared<sim::ObservationSet>(
      sim::generate_fhn_data(std::array{0.2, 0.2, 3.0, 0.0025, 0.0025, -1.0, 1.0}, sim::default_fhn_grid(), rng));
  const auto m = model::make_fhn1(data);
  RunConfig c;
  c.model = "fhn1";
  c.variant = Variant::IMIS_ShOpt;
  c.n0 = 400;
  c.b = 50;
  c.d = 4;
  c.q = 3;
  c.shotgun_methods = {est::Method::NLS, est::Method::TwoStage, est::Method::GP};
  Sampler s(m, c);
  s.initial_stage();
  s.shotgun_optimize();
  bool global = false, local = false;
  for (const auto& mode : s.report().modes) {
    if (!mode.used) continue;
    global = global || std::abs(mode.theta_hat(0) - 3.0) < 0.3;
    local = local || std::abs(mode.theta_hat(0) - 12.05) < 0.3;
  }
  CHECK(global);
  CHECK(local);
}
