#include "imis/linalg_stats.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace imis::linalg {

namespace {

constexpr double kSymmetryTolerance = 1e-12;
// Eigenvalues recomputed from a repaired matrix land within a few ulps of
// lambda_max of the floor; this margin keeps the repair idempotent.
constexpr double kFloorSlack = 1e-6;

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

double pd_floor(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m), Eigen::EigenvaluesOnly);
  const double top = es.eigenvalues().maxCoeff();
  return kPdFloorRelative * (top > 0.0 ? top : 1.0);
}

Matrix pd_repair(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) throw std::invalid_argument("pd_repair: matrix must be square and non-empty");
  if (!m.allFinite()) throw std::invalid_argument("pd_repair: non-finite entries");
  Matrix sym = symmetrized(m);
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  Vector values = es.eigenvalues();
  const double top = values.maxCoeff();
  const double floor = kPdFloorRelative * (top > 0.0 ? top : 1.0);
  if (values.minCoeff() >= floor * (1.0 - kFloorSlack)) return sym;
  for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = std::max(values[i], floor);
  const Matrix& vecs = es.eigenvectors();
  return symmetrized(vecs * values.asDiagonal() * vecs.transpose());
}

CovarianceMatrix CovarianceMatrix::from_matrix(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) throw std::invalid_argument("covariance must be square and non-empty");
  const double scale = std::max(m.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance * scale)
    throw std::invalid_argument("covariance is not symmetric");
  CovarianceMatrix out;
  out.entries_ = pd_repair(m);
  Eigen::LLT<Matrix> llt(out.entries_);
  if (llt.info() != Eigen::Success) throw std::runtime_error("covariance factorization failed after repair");
  out.lower_ = llt.matrixL();
  out.log_det_ = 2.0 * out.lower_.diagonal().array().log().sum();
  return out;
}

CovarianceMatrix CovarianceMatrix::identity(Eigen::Index dim) {
  return from_matrix(Matrix::Identity(dim, dim));
}

Vector CovarianceMatrix::whiten(const Vector& v) const {
  if (v.size() != dim()) throw std::invalid_argument("dimension mismatch");
  return lower_.triangularView<Eigen::Lower>().solve(v);
}

Vector CovarianceMatrix::solve(const Vector& v) const {
  return lower_.transpose().triangularView<Eigen::Upper>().solve(whiten(v));
}

GaussianComponent::GaussianComponent(Vector m, CovarianceMatrix c, Provenance p)
    : mean(std::move(m)), cov(std::move(c)), provenance(p) {
  if (mean.size() != cov.dim()) throw std::invalid_argument("component mean and covariance dimensions differ");
}

double mvn_logpdf(const Vector& x, const GaussianComponent& comp) {
  if (x.size() != comp.dim()) throw std::invalid_argument("mvn_logpdf: dimension mismatch");
  const double d = static_cast<double>(comp.dim());
  const double quad = comp.cov.whiten(x - comp.mean).squaredNorm();
  return -0.5 * (d * std::log(2.0 * std::numbers::pi) + comp.cov.log_det() + quad);
}

std::vector<Vector> mvn_sample(const GaussianComponent& comp, std::size_t n, Rng& rng) {
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::vector<Vector> out;
  out.reserve(n);
  Vector z(comp.dim());
  for (std::size_t k = 0; k < n; ++k) {
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = std_normal(rng);
    out.emplace_back(comp.mean + comp.cov.cholesky_lower().triangularView<Eigen::Lower>() * z);
  }
  return out;
}

double mahalanobis_sq(const Vector& x, const Vector& center, const CovarianceMatrix& cov) {
  if (x.size() != center.size() || x.size() != cov.dim())
    throw std::invalid_argument("mahalanobis_sq: dimension mismatch");
  return cov.whiten(x - center).squaredNorm();
}

WeightedCovariance weighted_covariance(std::span<const Vector> points, std::span<const double> weights,
                                       const Vector& center, CovarianceNormalization normalization) {
  if (points.size() < 2) throw std::invalid_argument("weighted_covariance: need at least two points");
  if (points.size() != weights.size()) throw std::invalid_argument("weighted_covariance: weight count mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("weighted_covariance: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-8) throw std::invalid_argument("weighted_covariance: weights must sum to one");

  const Eigen::Index dim = center.size();
  bool identical = true;
  for (const auto& p : points) {
    if (p.size() != dim) throw std::invalid_argument("weighted_covariance: dimension mismatch");
    if (p != points.front()) identical = false;
  }
  if (identical) {
    return {CovarianceMatrix::from_matrix(kPdFloorRelative * Matrix::Identity(dim, dim)), true};
  }

  Matrix sum = Matrix::Zero(dim, dim);
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vector dev = points[i] - center;
    sum.noalias() += weights[i] * dev * dev.transpose();
    sum_sq += weights[i] * weights[i];
  }
  if (normalization == CovarianceNormalization::Unbiased && 1.0 - sum_sq > 1e-12) sum /= (1.0 - sum_sq);
  return {CovarianceMatrix::from_matrix(sum), false};
}

Vector default_hessian_steps(const Vector& x0) {
  return (1e-4 * x0.cwiseAbs().cwiseMax(1.0)).eval();
}

namespace {

struct HessianProbe {
  const ScalarFunction& f;
  const Vector& x0;

  double at(Eigen::Index i, double hi, Eigen::Index j = -1, double hj = 0.0) const {
    Vector x = x0;
    x[i] += hi;
    if (j >= 0) x[j] += hj;
    return f(x);
  }
};

}  // namespace

Matrix finite_difference_hessian(const ScalarFunction& f, const Vector& x0, const Vector& steps_in) {
  const Eigen::Index n = x0.size();
  if (steps_in.size() != n) throw std::invalid_argument("numeric_hessian: step count mismatch");
  const double f0 = f(x0);
  if (!std::isfinite(f0)) throw HessianProbeError(-1, "numeric_hessian: function is not finite at the centre");

  constexpr int kMaxHalvings = 8;
  Vector steps = steps_in;
  std::vector<int> halvings(static_cast<std::size_t>(n), 0);
  const HessianProbe probe{f, x0};

  auto halve = [&](Eigen::Index i) {
    if (++halvings[static_cast<std::size_t>(i)] > kMaxHalvings)
      throw HessianProbeError(i, "numeric_hessian: non-finite probe along coordinate " + std::to_string(i));
    steps[i] *= 0.5;
  };

  Matrix hess(n, n);
  Vector plus(n), minus(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (;;) {
      plus[i] = probe.at(i, steps[i]);
      minus[i] = probe.at(i, -steps[i]);
      if (std::isfinite(plus[i]) && std::isfinite(minus[i])) break;
      halve(i);
    }
    hess(i, i) = (plus[i] - 2.0 * f0 + minus[i]) / (steps[i] * steps[i]);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      for (;;) {
        const double hi = steps[i], hj = steps[j];
        const double fpp = probe.at(i, hi, j, hj);
        const double fpm = probe.at(i, hi, j, -hj);
        const double fmp = probe.at(i, -hi, j, hj);
        const double fmm = probe.at(i, -hi, j, -hj);
        if (std::isfinite(fpp) && std::isfinite(fpm) && std::isfinite(fmp) && std::isfinite(fmm)) {
          hess(i, j) = hess(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
          break;
        }
        // Shrinking the off-diagonal pair leaves the already computed diagonal untouched.
        halve(halvings[static_cast<std::size_t>(i)] <= halvings[static_cast<std::size_t>(j)] ? i : j);
      }
    }
  }
  return hess;
}

CovarianceMatrix numeric_hessian(const ScalarFunction& f, const Vector& x0, const std::optional<Vector>& steps) {
  const Matrix hess = finite_difference_hessian(f, x0, steps ? *steps : default_hessian_steps(x0));
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(-hess));
  const Vector& curvature = es.eigenvalues();
  Vector variances(curvature.size());
  double top = 0.0;
  for (Eigen::Index i = 0; i < curvature.size(); ++i) {
    variances[i] = curvature[i] > 0.0 ? 1.0 / curvature[i] : 0.0;
    top = std::max(top, variances[i]);
  }
  // Non-positive curvature has no finite inverse; such directions take the floor.
  const double floor = kPdFloorRelative * (top > 0.0 ? top : 1.0);
  for (Eigen::Index i = 0; i < variances.size(); ++i) variances[i] = std::max(variances[i], floor);
  const Matrix& vecs = es.eigenvectors();
  return CovarianceMatrix::from_matrix(symmetrized(vecs * variances.asDiagonal() * vecs.transpose()));
}

double log_sum_exp(std::span<const double> v) {
  double top = -std::numeric_limits<double>::infinity();
  for (double x : v) top = std::max(top, x);
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - top);
  return top + std::log(acc);
}

}  // namespace imis::linalg
