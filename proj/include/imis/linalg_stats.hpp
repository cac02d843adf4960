#pragma once

// Dense kernels shared by the sampler: Gaussian densities and draws,
// Mahalanobis distances, weighted covariances and finite-difference Hessians.

#include "imis/common.hpp"

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>

namespace imis::linalg {

/// Eigenvalue floor relative to the largest eigenvalue.
inline constexpr double kPdFloorRelative = 1e-8;

/// Symmetrizes `m` and raises every eigenvalue below
/// kPdFloorRelative * max(largest eigenvalue, 1 if none is positive) to that floor.
/// A matrix that already satisfies the floor is returned unchanged.
Matrix pd_repair(const Matrix& m);

/// Floor used by pd_repair for the given matrix.
double pd_floor(const Matrix& m);

class CovarianceMatrix {
 public:
  /// Validates symmetry (1e-12 relative), PD-repairs and factorizes.
  static CovarianceMatrix from_matrix(const Matrix& m);
  static CovarianceMatrix identity(Eigen::Index dim);

  Eigen::Index dim() const { return entries_.rows(); }
  const Matrix& matrix() const { return entries_; }
  const Matrix& cholesky_lower() const { return lower_; }
  double log_det() const { return log_det_; }

  /// L^{-1} v
  Vector whiten(const Vector& v) const;
  /// cov^{-1} v through two triangular solves.
  Vector solve(const Vector& v) const;

 private:
  CovarianceMatrix() = default;
  Matrix entries_;
  Matrix lower_;
  double log_det_ = 0.0;
};

enum class Provenance { OptimizerFound, ImportanceStage };

struct GaussianComponent {
  Vector mean;
  CovarianceMatrix cov;
  Provenance provenance = Provenance::OptimizerFound;

  GaussianComponent(Vector m, CovarianceMatrix c, Provenance p = Provenance::OptimizerFound);
  Eigen::Index dim() const { return mean.size(); }
};

double mvn_logpdf(const Vector& x, const GaussianComponent& comp);

/// n draws mean + L z, z ~ N(0, I).
std::vector<Vector> mvn_sample(const GaussianComponent& comp, std::size_t n, Rng& rng);

double mahalanobis_sq(const Vector& x, const Vector& center, const CovarianceMatrix& cov);

/// How the weighted second moment is normalized.
///  Frequency: sum_i w_i d_i d_i^T with weights summing to one.
///  Unbiased:  the same divided by (1 - sum_i w_i^2) (reliability weights).
enum class CovarianceNormalization { Frequency, Unbiased };

struct WeightedCovariance {
  CovarianceMatrix cov;
  bool degenerate = false;  // every point coincided with the others
};

WeightedCovariance weighted_covariance(std::span<const Vector> points, std::span<const double> weights,
                                       const Vector& center,
                                       CovarianceNormalization normalization = CovarianceNormalization::Frequency);

class HessianProbeError : public std::runtime_error {
 public:
  HessianProbeError(Eigen::Index coordinate, const std::string& what)
      : std::runtime_error(what), coordinate_(coordinate) {}
  Eigen::Index coordinate() const { return coordinate_; }

 private:
  Eigen::Index coordinate_;
};

using ScalarFunction = std::function<double(const Vector&)>;

/// Default central-difference steps: 1e-4 * max(|x_i|, 1).
Vector default_hessian_steps(const Vector& x0);

/// Central-difference Hessian of f at x0.
Matrix finite_difference_hessian(const ScalarFunction& f, const Vector& x0, const Vector& steps);

/// Inverse of the negated central-difference Hessian of f at x0, PD-repaired.
/// Non-finite probes halve the offending step up to 8 times, then throw HessianProbeError.
CovarianceMatrix numeric_hessian(const ScalarFunction& f, const Vector& x0,
                                 const std::optional<Vector>& steps = std::nullopt);

/// log(sum(exp(v))) with the max-shift; -inf for empty or all -inf input.
double log_sum_exp(std::span<const double> v);

}  // namespace imis::linalg
