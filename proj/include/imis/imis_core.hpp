#pragma once

// Incremental mixture importance sampling with optional (shotgun) optimization.

#include "imis/common.hpp"
#include "imis/estimators.hpp"
#include "imis/linalg_stats.hpp"
#include "imis/models.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace imis::core {

enum class Variant { IMIS, IMIS_Opt, IMIS_ShOpt, IMIS_ShOpt_SL, IMIS_ShOpt_SIR };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct RunConfig {
  std::size_t n0 = 1000;
  std::size_t b = 300;
  std::size_t d = 6;
  std::size_t q = 3;
  std::size_t j = 2000;
  std::size_t n_iter = 100;
  Variant variant = Variant::IMIS_ShOpt;
  std::uint64_t seed = 1;
  std::vector<est::Method> shotgun_methods{est::Method::NLS, est::Method::TwoStage, est::Method::GP};
  std::string model = "fhn1";
  std::size_t threads = 1;

  void validate() const;
  bool optimizes() const { return variant != Variant::IMIS; }
};

/// Raised when every prior draw has a flooded likelihood.
class AllFloodError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Gaussian over the model's Gaussian coordinates; every other coordinate is
/// pinned to the centre's value, so the density carries an indicator on them.
struct MixtureComponent {
  linalg::GaussianComponent gaussian;
  Vector center;  // full parameter vector
  std::string label;
};

struct ParticleSystem {
  std::vector<Vector> thetas;
  std::vector<double> log_liks;
  std::vector<double> log_priors;
  std::vector<double> log_weights;
  std::vector<double> log_mixture;  // log sum_s H_s(theta_i), -inf before any component
  std::vector<MixtureComponent> components;
  std::vector<std::size_t> gaussian_coords;
  std::size_t n0 = 0;
  std::size_t b = 0;
  std::vector<std::size_t> candidates;  // prior-stage indices still eligible as optimizer inits

  std::size_t size() const { return thetas.size(); }
};

double component_log_density(const MixtureComponent& comp, const Vector& theta,
                             const std::vector<std::size_t>& gaussian_coords);

/// Extracts the Gaussian coordinates of theta.
Vector gaussian_part(const Vector& theta, const std::vector<std::size_t>& coords);

/// Sum over particles of 1 - (1 - w)^J >= J (1 - e^-1), evaluated as -expm1(J log1p(-w)).
struct StoppingValue {
  double expected_unique = 0.0;
  double threshold = 0.0;
  bool stop = false;
};
StoppingValue stopping_criterion(const std::vector<double>& log_weights, std::size_t j);

/// Log-weights from log-likelihoods alone, normalized.
std::vector<double> likelihood_log_weights(const std::vector<double>& log_liks);

/// Recomputes every weight from the running mixture sums.
void mixture_log_weights(ParticleSystem& ps);

/// Largest |stored log mixture - recomputed log mixture| over all particles.
double mixture_audit(const ParticleSystem& ps);

/// Index of the largest log-weight among `indices` (lowest index on ties).
std::optional<std::size_t> argmax_weight(const ParticleSystem& ps, const std::vector<std::size_t>& indices,
                                         bool skip_flooded);

/// Multinomial resampling; returns particle indices.
std::vector<std::size_t> resample(const std::vector<double>& log_weights, std::size_t j, Rng& rng);

struct IterationRecord {
  std::string stage;
  std::size_t iteration = 0;
  std::size_t n_particles = 0;
  double max_weight = 0.0;
  double expected_unique = 0.0;
  double threshold = 0.0;
  double ess = 0.0;
  double weight_sum_error = 0.0;
  double mixture_audit = 0.0;
};

struct ModeRecord {
  std::size_t d = 0;
  std::size_t q = 0;
  std::string label;
  est::Method method = est::Method::NLS;
  std::size_t init_index = 0;
  Vector init;
  Vector theta_hat;
  double objective = 0.0;
  double log_posterior = 0.0;
  bool converged = false;
  bool used = false;
  std::string skip_reason;
  std::size_t excluded = 0;
  Vector cov_diagonal;
};

struct RunReport {
  RunConfig config;
  std::size_t iterations = 0;  // importance-stage iterations performed
  bool stopped = false;        // stopping rule met
  double wall_seconds = 0.0;
  double optimization_seconds = 0.0;
  std::size_t criteria_per_init = 0;
  std::vector<IterationRecord> diagnostics;
  std::vector<ModeRecord> modes;
  std::vector<std::string> component_labels;
  std::vector<std::string> warnings;
};

struct RunResult {
  ParticleSystem particles;
  std::vector<std::size_t> sample_indices;
  std::vector<Vector> samples;
  RunReport report;
};

/// Substream stage tags.
enum StreamStage : std::uint64_t {
  kStagePrior = 1,
  kStageLikelihood = 2,
  kStageOptimizer = 3,
  kStageHessian = 4,
  kStageProposal = 5,
  kStageResample = 6,
};

class Sampler {
 public:
  Sampler(const model::ModelSpec& model, RunConfig config);

  /// N0 prior draws weighted by likelihood alone.
  void initial_stage();
  /// D x Q optimization cells; appends one batch per successful cell.
  void shotgun_optimize();
  /// One incremental batch around the current maximum-weight particle.
  void importance_stage();
  RunResult run();

  const ParticleSystem& particles() const { return ps_; }
  ParticleSystem& particles() { return ps_; }
  const RunReport& report() const { return report_; }
  const linalg::CovarianceMatrix& prior_covariance() const { return *sigma_pi_; }

  /// Appends a batch drawn from `comp` (evaluating priors and likelihoods) and
  /// folds the component into every particle's mixture sum.
  void append_component(MixtureComponent comp, std::size_t n, std::uint64_t draw_key);

  /// Selection used by the importance stage: indices of the B particles with the
  /// smallest w_p-scaled Mahalanobis distance to `center_index` under the prior covariance.
  std::vector<std::size_t> importance_neighbours(std::size_t center_index) const;

 private:
  void evaluate_range(std::size_t begin, std::size_t end);
  void record(const std::string& stage, std::size_t iteration);

  const model::ModelSpec& model_;
  RunConfig config_;
  ParticleSystem ps_;
  RunReport report_;
  std::optional<linalg::CovarianceMatrix> sigma_pi_;
  std::size_t proposal_counter_ = 0;
};

}  // namespace imis::core
