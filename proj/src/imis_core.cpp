#include "imis/imis_core.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace imis::core {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double top = std::max(a, b);
  return top + std::log1p(std::exp(-std::abs(a - b)));
}

void normalize(std::vector<double>& log_w) {
  const double total = linalg::log_sum_exp(log_w);
  for (double& w : log_w) w = w == kNegInf ? kNegInf : w - total;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::IMIS: return "IMIS";
    case Variant::IMIS_Opt: return "IMIS-Opt";
    case Variant::IMIS_ShOpt: return "IMIS-ShOpt";
    case Variant::IMIS_ShOpt_SL: return "IMIS-ShOpt-SL";
    case Variant::IMIS_ShOpt_SIR: return "IMIS-ShOpt-SIR";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::IMIS, Variant::IMIS_Opt, Variant::IMIS_ShOpt, Variant::IMIS_ShOpt_SL, Variant::IMIS_ShOpt_SIR})
    if (variant_name(v) == name) return v;
  throw std::invalid_argument("unknown variant '" + name + "'");
}

void RunConfig::validate() const {
  if (n0 < 2) throw std::invalid_argument("config: N0 must be at least 2");
  if (b < 2) throw std::invalid_argument("config: B must be at least 2");
  if (j < 1) throw std::invalid_argument("config: J must be at least 1");
  if (threads < 1) throw std::invalid_argument("config: threads must be at least 1");
  if (optimizes()) {
    if (d < 1) throw std::invalid_argument("config: D must be at least 1");
    if (q < 1) throw std::invalid_argument("config: Q must be at least 1");
    // Each cell excludes floor(N0 / (Q D)) candidates, which must be at least one.
    if (n0 < q * d) throw std::invalid_argument("config: N0 must be at least Q * D");
  }
  const bool fhn = model == "fhn1" || model == "fhn2";
  if (variant == Variant::IMIS_ShOpt && !fhn)
    throw std::invalid_argument("config: IMIS-ShOpt is the multi-method variant for fhn1/fhn2; use IMIS-ShOpt-SIR or IMIS-ShOpt-SL");
  if (variant == Variant::IMIS_ShOpt_SL && model != "ricker")
    throw std::invalid_argument("config: IMIS-ShOpt-SL requires the ricker model");
  if (variant == Variant::IMIS_ShOpt_SIR && model != "sir")
    throw std::invalid_argument("config: IMIS-ShOpt-SIR requires the sir model");
  if (variant == Variant::IMIS_ShOpt) {
    if (shotgun_methods.empty()) throw std::invalid_argument("config: shotgun_methods is empty");
    if (shotgun_methods.size() != q) throw std::invalid_argument("config: Q must equal the number of shotgun methods");
  }
}

// ---------------------------------------------------------------------------
// Free functions

Vector gaussian_part(const Vector& theta, const std::vector<std::size_t>& coords) {
  Vector g(static_cast<Eigen::Index>(coords.size()));
  for (std::size_t k = 0; k < coords.size(); ++k) g(static_cast<Eigen::Index>(k)) = theta(static_cast<Eigen::Index>(coords[k]));
  return g;
}

double component_log_density(const MixtureComponent& comp, const Vector& theta,
                             const std::vector<std::size_t>& gaussian_coords) {
  std::size_t next = 0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (next < gaussian_coords.size() && gaussian_coords[next] == static_cast<std::size_t>(i)) {
      ++next;
      continue;
    }
    if (theta(i) != comp.center(i)) return kNegInf;
  }
  return linalg::mvn_logpdf(gaussian_part(theta, gaussian_coords), comp.gaussian);
}

StoppingValue stopping_criterion(const std::vector<double>& log_weights, std::size_t j) {
  StoppingValue out;
  const double jd = static_cast<double>(j);
  for (double lw : log_weights) {
    const double w = std::exp(lw);
    if (w <= 0.0) continue;
    out.expected_unique += -std::expm1(jd * std::log1p(-std::min(w, 1.0)));
  }
  out.threshold = jd * (1.0 - std::exp(-1.0));
  out.stop = out.expected_unique >= out.threshold;
  return out;
}

std::vector<double> likelihood_log_weights(const std::vector<double>& log_liks) {
  std::vector<double> w = log_liks;
  normalize(w);
  return w;
}

void mixture_log_weights(ParticleSystem& ps) {
  const double n = static_cast<double>(ps.size());
  const double log_prior_share = std::log(static_cast<double>(ps.n0) / n);
  const double log_batch_share = std::log(static_cast<double>(ps.b) / n);
  ps.log_weights.resize(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps.log_priors[i] == kNegInf) {
      ps.log_weights[i] = kNegInf;
      continue;
    }
    const double numerator = ps.log_liks[i] + ps.log_priors[i];
    const double denominator = log_add_exp(log_prior_share + ps.log_priors[i], log_batch_share + ps.log_mixture[i]);
    ps.log_weights[i] = numerator - denominator;
  }
  normalize(ps.log_weights);
}

double mixture_audit(const ParticleSystem& ps) {
  double worst = 0.0;
  std::vector<double> terms(ps.components.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (std::size_t s = 0; s < ps.components.size(); ++s)
      terms[s] = component_log_density(ps.components[s], ps.thetas[i], ps.gaussian_coords);
    const double fresh = linalg::log_sum_exp(terms);
    const double stored = ps.log_mixture[i];
    if (fresh == kNegInf && stored == kNegInf) continue;
    worst = std::max(worst, std::abs(fresh - stored));
  }
  return worst;
}

std::optional<std::size_t> argmax_weight(const ParticleSystem& ps, const std::vector<std::size_t>& indices,
                                         bool skip_flooded) {
  std::optional<std::size_t> best;
  for (std::size_t i : indices) {
    if (skip_flooded && ps.log_liks[i] <= model::kFloodLogLik) continue;
    if (ps.log_weights[i] == kNegInf) continue;
    if (!best || ps.log_weights[i] > ps.log_weights[*best] ||
        (ps.log_weights[i] == ps.log_weights[*best] && i < *best))
      best = i;
  }
  return best;
}

std::vector<std::size_t> resample(const std::vector<double>& log_weights, std::size_t j, Rng& rng) {
  std::vector<double> w(log_weights.size());
  const double top = *std::max_element(log_weights.begin(), log_weights.end());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_weights[i] - top);
  std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
  std::vector<std::size_t> out(j);
  for (auto& k : out) k = dist(rng);
  return out;
}

// ---------------------------------------------------------------------------
// Sampler

Sampler::Sampler(const model::ModelSpec& model, RunConfig config) : model_(model), config_(std::move(config)) {
  config_.validate();
  report_.config = config_;
  ps_.gaussian_coords = model_.gaussian_coordinates();
  if (ps_.gaussian_coords.empty()) throw std::invalid_argument("model has no continuous coordinates");
  ps_.n0 = config_.n0;
  ps_.b = config_.b;
}

void Sampler::evaluate_range(std::size_t begin, std::size_t end) {
  ps_.log_liks.resize(end);
  ps_.log_priors.resize(end);
  parallel_for(end - begin, config_.threads, [&](std::size_t k) {
    const std::size_t i = begin + k;
    const Vector& theta = ps_.thetas[i];
    const double lp = model_.log_prior(theta);
    ps_.log_priors[i] = std::isnan(lp) ? kNegInf : lp;
    if (ps_.log_priors[i] == kNegInf) {
      ps_.log_liks[i] = model::kFloodLogLik;
      return;
    }
    Rng rng = make_stream(config_.seed, kStageLikelihood, i);
    const double ll = model_.log_lik(theta, rng);
    ps_.log_liks[i] = std::isfinite(ll) ? std::max(ll, model::kFloodLogLik) : model::kFloodLogLik;
  });
}

void Sampler::record(const std::string& stage, std::size_t iteration) {
  IterationRecord r;
  r.stage = stage;
  r.iteration = iteration;
  r.n_particles = ps_.size();
  double sum = 0.0, sum2 = 0.0, top = 0.0;
  for (double lw : ps_.log_weights) {
    const double w = std::exp(lw);
    sum += w;
    sum2 += w * w;
    top = std::max(top, w);
  }
  r.max_weight = top;
  r.ess = sum2 > 0.0 ? 1.0 / sum2 : 0.0;
  r.weight_sum_error = std::abs(sum - 1.0);
  const StoppingValue s = stopping_criterion(ps_.log_weights, config_.j);
  r.expected_unique = s.expected_unique;
  r.threshold = s.threshold;
  report_.diagnostics.push_back(r);
}

void Sampler::initial_stage() {
  const std::size_t n0 = config_.n0;
  ps_.thetas.resize(n0);
  for (std::size_t i = 0; i < n0; ++i) {
    Rng rng = make_stream(config_.seed, kStagePrior, i);
    ps_.thetas[i] = model_.prior_sample(rng);
    if (static_cast<std::size_t>(ps_.thetas[i].size()) != model_.dim())
      throw std::logic_error("prior_sample returned a vector of the wrong size");
  }
  evaluate_range(0, n0);
  if (std::all_of(ps_.log_liks.begin(), ps_.log_liks.end(), [](double v) { return v <= model::kFloodLogLik; }))
    throw AllFloodError("initial stage: every prior draw has a flooded likelihood");
  ps_.log_weights = likelihood_log_weights(ps_.log_liks);
  ps_.log_mixture.assign(n0, kNegInf);
  ps_.candidates.resize(n0);
  std::iota(ps_.candidates.begin(), ps_.candidates.end(), std::size_t{0});

  std::vector<Vector> pts(n0);
  Vector mean = Vector::Zero(static_cast<Eigen::Index>(ps_.gaussian_coords.size()));
  for (std::size_t i = 0; i < n0; ++i) {
    pts[i] = gaussian_part(ps_.thetas[i], ps_.gaussian_coords);
    mean += pts[i];
  }
  mean /= static_cast<double>(n0);
  const std::vector<double> uniform(n0, 1.0 / static_cast<double>(n0));
  sigma_pi_ = linalg::weighted_covariance(pts, uniform, mean).cov;
}

void Sampler::append_component(MixtureComponent comp, std::size_t n, std::uint64_t draw_key) {
  Rng rng = make_stream(config_.seed, kStageProposal, draw_key);
  const std::vector<Vector> draws = linalg::mvn_sample(comp.gaussian, n, rng);
  const std::size_t old = ps_.size();
  for (const Vector& g : draws) {
    Vector theta = comp.center;
    for (std::size_t k = 0; k < ps_.gaussian_coords.size(); ++k)
      theta(static_cast<Eigen::Index>(ps_.gaussian_coords[k])) = g(static_cast<Eigen::Index>(k));
    ps_.thetas.push_back(std::move(theta));
  }
  evaluate_range(old, old + n);

  ps_.log_mixture.resize(old + n, kNegInf);
  parallel_for(old, config_.threads, [&](std::size_t i) {
    ps_.log_mixture[i] = log_add_exp(ps_.log_mixture[i], component_log_density(comp, ps_.thetas[i], ps_.gaussian_coords));
  });
  report_.component_labels.push_back(comp.label);
  ps_.components.push_back(std::move(comp));
  parallel_for(n, config_.threads, [&](std::size_t k) {
    const std::size_t i = old + k;
    std::vector<double> terms(ps_.components.size());
    for (std::size_t s = 0; s < ps_.components.size(); ++s)
      terms[s] = component_log_density(ps_.components[s], ps_.thetas[i], ps_.gaussian_coords);
    ps_.log_mixture[i] = linalg::log_sum_exp(terms);
  });
  ps_.log_weights.resize(ps_.size(), kNegInf);
}

void Sampler::shotgun_optimize() {
  const auto start = std::chrono::steady_clock::now();
  model::CriteriaRequest request;
  request.mode = config_.variant == Variant::IMIS_Opt ? model::OptimizationMode::Single : model::OptimizationMode::Shotgun;
  request.methods = config_.shotgun_methods;
  request.q = config_.q;
  request.seed = config_.seed;
  const std::vector<model::Criterion> criteria = model_.make_criteria(request);
  const std::size_t q_count = criteria.size();
  if (q_count == 0) throw std::logic_error("model returned no optimization criteria");
  report_.criteria_per_init = q_count;
  const std::size_t per_cell = config_.n0 / (q_count * config_.d);
  const auto& coords = ps_.gaussian_coords;

  struct Cell {
    est::EstimatorResult result;
    double log_posterior = kNegInf;
    std::string skip;
  };

  for (std::size_t d = 0; d < config_.d; ++d) {
    const auto init_index = argmax_weight(ps_, ps_.candidates, true);
    if (!init_index) {
      report_.warnings.push_back("optimization stage: no non-flooded candidates left at d=" + std::to_string(d + 1));
      break;
    }
    const Vector init = ps_.thetas[*init_index];
    std::vector<Cell> cells(q_count);
    parallel_for(q_count, config_.threads, [&](std::size_t q) {
      Cell& cell = cells[q];
      const std::uint64_t key = d * q_count + q;
      try {
        Rng rng = make_stream(config_.seed, kStageOptimizer, key);
        cell.result = criteria[q].fit(init, rng);
        cell.result.label = criteria[q].label;
        const Vector& th = cell.result.theta_hat;
        if (static_cast<std::size_t>(th.size()) != model_.dim() || !th.allFinite()) {
          cell.skip = "non-finite estimate";
          return;
        }
        if (!(cell.result.objective_value < est::kFloodObjective)) {
          cell.skip = "flooded objective";
          return;
        }
        const Rng hessian_stream = make_stream(config_.seed, kStageHessian, key);
        Rng eval_rng = hessian_stream;
        const double lp = model_.log_prior(th);
        if (lp == kNegInf || std::isnan(lp)) {
          cell.skip = "estimate outside prior support";
          return;
        }
        const double ll = model_.log_lik(th, eval_rng);
        if (!(ll > model::kFloodLogLik)) {
          cell.skip = "flooded likelihood at estimate";
          return;
        }
        cell.log_posterior = lp + ll;
        auto target = [&](const Vector& g) {
          Vector theta = th;
          for (std::size_t k = 0; k < coords.size(); ++k) theta(static_cast<Eigen::Index>(coords[k])) = g(static_cast<Eigen::Index>(k));
          Rng r = hessian_stream;
          const double v = model_.log_posterior(theta, r);
          return v > model::kFloodLogLik ? v : std::numeric_limits<double>::quiet_NaN();
        };
        const Vector g0 = gaussian_part(th, coords);
        cell.result.inv_neg_hessian = linalg::numeric_hessian(target, g0, model_.hessian_steps(g0));
      } catch (const linalg::HessianProbeError& e) {
        cell.skip = std::string("hessian failure: ") + e.what();
      } catch (const std::exception& e) {
        cell.skip = std::string("optimizer failure: ") + e.what();
      }
    });

    for (std::size_t q = 0; q < q_count; ++q) {
      Cell& cell = cells[q];
      ModeRecord rec;
      rec.d = d + 1;
      rec.q = q + 1;
      rec.label = criteria[q].label;
      rec.method = criteria[q].method;
      rec.init_index = *init_index;
      rec.init = init;
      rec.theta_hat = cell.result.theta_hat;
      rec.objective = cell.result.objective_value;
      rec.log_posterior = cell.log_posterior;
      rec.converged = cell.result.converged;
      rec.skip_reason = cell.skip;
      rec.used = cell.skip.empty() && cell.result.inv_neg_hessian.has_value();
      if (rec.used) {
        const linalg::CovarianceMatrix& cov = *cell.result.inv_neg_hessian;
        rec.cov_diagonal = cov.matrix().diagonal();
        const Vector center = gaussian_part(cell.result.theta_hat, coords);

        // Drop the per_cell candidates closest to this optimum from the init pool.
        std::vector<std::pair<double, std::size_t>> dist;
        dist.reserve(ps_.candidates.size());
        for (std::size_t i : ps_.candidates)
          dist.emplace_back(linalg::mahalanobis_sq(gaussian_part(ps_.thetas[i], coords), center, cov), i);
        const std::size_t n_drop = std::min(per_cell, dist.size());
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(n_drop), dist.end());
        std::vector<std::size_t> dropped;
        for (std::size_t k = 0; k < n_drop; ++k) dropped.push_back(dist[k].second);
        std::sort(dropped.begin(), dropped.end());
        std::vector<std::size_t> kept;
        std::set_difference(ps_.candidates.begin(), ps_.candidates.end(), dropped.begin(), dropped.end(),
                            std::back_inserter(kept));
        ps_.candidates = std::move(kept);
        rec.excluded = n_drop;

        MixtureComponent comp{linalg::GaussianComponent(center, cov, linalg::Provenance::OptimizerFound),
                              cell.result.theta_hat,
                              rec.label + " d=" + std::to_string(d + 1)};
        append_component(std::move(comp), config_.b, proposal_counter_++);
      }
      report_.modes.push_back(std::move(rec));
    }
    // An init whose optima all landed elsewhere would otherwise be picked again.
    const auto it = std::lower_bound(ps_.candidates.begin(), ps_.candidates.end(), *init_index);
    if (it != ps_.candidates.end() && *it == *init_index) ps_.candidates.erase(it);
  }
  mixture_log_weights(ps_);
  report_.optimization_seconds = seconds_since(start);
}

std::vector<std::size_t> Sampler::importance_neighbours(std::size_t center_index) const {
  const auto& coords = ps_.gaussian_coords;
  const Vector& center = ps_.thetas[center_index];
  const Vector center_g = gaussian_part(center, coords);
  const double uniform = 1.0 / static_cast<double>(ps_.size());

  std::vector<bool> is_gaussian(static_cast<std::size_t>(center.size()), false);
  for (std::size_t c : coords) is_gaussian[c] = true;

  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(ps_.size());
  for (std::size_t i = 0; i < ps_.size(); ++i) {
    bool same_group = true;
    for (Eigen::Index c = 0; c < center.size() && same_group; ++c)
      if (!is_gaussian[static_cast<std::size_t>(c)] && ps_.thetas[i](c) != center(c)) same_group = false;
    if (!same_group) continue;
    const double wp = std::exp(ps_.log_weights[i]) + uniform;
    scored.emplace_back(wp * linalg::mahalanobis_sq(gaussian_part(ps_.thetas[i], coords), center_g, *sigma_pi_), i);
  }
  const std::size_t take = std::min(ps_.b, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end());
  std::vector<std::size_t> out(take);
  for (std::size_t k = 0; k < take; ++k) out[k] = scored[k].second;
  return out;
}

void Sampler::importance_stage() {
  std::vector<std::size_t> all(ps_.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto top = argmax_weight(ps_, all, false);
  if (!top) throw std::runtime_error("importance stage: no particle carries weight");
  const auto& coords = ps_.gaussian_coords;
  const Vector center = ps_.thetas[*top];
  const Vector center_g = gaussian_part(center, coords);

  const std::vector<std::size_t> nbrs = importance_neighbours(*top);
  std::optional<linalg::CovarianceMatrix> cov;
  if (nbrs.size() >= 2) {
    const double uniform = 1.0 / static_cast<double>(ps_.size());
    std::vector<Vector> pts;
    std::vector<double> w;
    double total = 0.0;
    for (std::size_t i : nbrs) {
      pts.push_back(gaussian_part(ps_.thetas[i], coords));
      w.push_back(std::exp(ps_.log_weights[i]) + uniform);
      total += w.back();
    }
    for (double& x : w) x /= total;
    cov = linalg::weighted_covariance(pts, w, center_g, linalg::CovarianceNormalization::Unbiased).cov;
  } else {
    report_.warnings.push_back("importance stage: fewer than two neighbours; using the prior covariance");
    cov = *sigma_pi_;
  }
  const std::size_t iteration = report_.iterations + 1;
  MixtureComponent comp{linalg::GaussianComponent(center_g, *cov, linalg::Provenance::ImportanceStage), center,
                        "importance k=" + std::to_string(iteration)};
  append_component(std::move(comp), config_.b, proposal_counter_++);
  mixture_log_weights(ps_);
  report_.iterations = iteration;
}

RunResult Sampler::run() {
  const auto start = std::chrono::steady_clock::now();
  auto tagged = [](const char* stage, auto&& fn) {
    try {
      fn();
    } catch (const AllFloodError&) {
      throw;
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string(stage) + ": " + e.what());
    }
  };

  tagged("initial stage", [&] { initial_stage(); });
  record("initial", 0);
  if (config_.optimizes()) {
    tagged("optimization stage", [&] { shotgun_optimize(); });
    record("optimization", 0);
  }
  bool stop = stopping_criterion(ps_.log_weights, config_.j).stop;
  for (std::size_t k = 1; k <= config_.n_iter && !stop; ++k) {
    tagged("importance stage", [&] { importance_stage(); });
    record("importance", k);
    stop = stopping_criterion(ps_.log_weights, config_.j).stop;
  }
  report_.stopped = stop;
  if (!report_.diagnostics.empty()) report_.diagnostics.back().mixture_audit = mixture_audit(ps_);

  RunResult out;
  Rng rng = make_stream(config_.seed, kStageResample, 0);
  out.sample_indices = resample(ps_.log_weights, config_.j, rng);
  out.samples.reserve(out.sample_indices.size());
  for (std::size_t i : out.sample_indices) out.samples.push_back(ps_.thetas[i]);
  report_.wall_seconds = seconds_since(start);
  out.report = report_;
  out.particles = ps_;
  return out;
}

}  // namespace imis::core
