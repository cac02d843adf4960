#include "imis/bspline.hpp"

#include <algorithm>
#include <stdexcept>

namespace imis::spline {

BasisSystem::BasisSystem(std::vector<double> breakpoints, std::size_t order)
    : breakpoints_(std::move(breakpoints)), order_(order) {
  if (order_ < 2) throw std::invalid_argument("BasisSystem: order must be at least 2");
  if (breakpoints_.size() < 2) throw std::invalid_argument("BasisSystem: need at least two breakpoints");
  for (std::size_t i = 1; i < breakpoints_.size(); ++i)
    if (!(breakpoints_[i] > breakpoints_[i - 1])) throw std::invalid_argument("BasisSystem: breakpoints must increase");
  knots_.assign(order_, breakpoints_.front());
  knots_.insert(knots_.end(), breakpoints_.begin() + 1, breakpoints_.end() - 1);
  knots_.insert(knots_.end(), order_, breakpoints_.back());
  n_basis_ = breakpoints_.size() - 2 + order_;
}

// Cox-de Boor recursion on the nonzero span, with the first derivative taken
// from the order-1 basis values.
LocalBasis BasisSystem::evaluate(double t) const {
  const std::size_t p = order_ - 1;  // degree
  if (t < breakpoints_.front() || t > breakpoints_.back()) throw std::out_of_range("BasisSystem: point outside the basis range");

  // Knot span index: knots_[span] <= t < knots_[span + 1], last span closed on the right.
  std::size_t span = static_cast<std::size_t>(std::upper_bound(knots_.begin(), knots_.end(), t) - knots_.begin()) - 1;
  span = std::min(span, n_basis_ - 1);

  std::vector<double> left(order_), right(order_);
  std::vector<std::vector<double>> ndu(order_, std::vector<double>(order_, 0.0));
  ndu[0][0] = 1.0;
  for (std::size_t j = 1; j <= p; ++j) {
    left[j] = t - knots_[span + 1 - j];
    right[j] = knots_[span + j] - t;
    double saved = 0.0;
    for (std::size_t r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];  // lower triangle: knot differences
      const double temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }

  LocalBasis out;
  out.first = span - p;
  out.values.resize(order_);
  out.derivs.assign(order_, 0.0);
  for (std::size_t j = 0; j <= p; ++j) out.values[j] = ndu[j][p];
  // N'_{r,p} = p [N_{r,p-1}/(u_{r+p}-u_r) - N_{r+1,p-1}/(u_{r+p+1}-u_{r+1})]
  for (std::size_t r = 0; r <= p; ++r) {
    double d = 0.0;
    if (r >= 1) d += ndu[r - 1][p - 1] / ndu[p][r - 1];
    if (r <= p - 1) d -= ndu[r][p - 1] / ndu[p][r];
    out.derivs[r] = static_cast<double>(p) * d;
  }
  return out;
}

Matrix BasisSystem::design(std::span<const double> times, int derivative) const {
  if (derivative != 0 && derivative != 1) throw std::invalid_argument("BasisSystem: only derivative 0 or 1");
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(times.size()), static_cast<Eigen::Index>(n_basis_));
  for (std::size_t i = 0; i < times.size(); ++i) {
    const LocalBasis b = evaluate(times[i]);
    const auto& v = derivative == 0 ? b.values : b.derivs;
    for (std::size_t j = 0; j < order_; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b.first + j)) = v[j];
  }
  return m;
}

void BasisSystem::quadrature(std::size_t points_per_interval, std::vector<double>& nodes,
                             std::vector<double>& weights) const {
  if (points_per_interval < 3 || points_per_interval % 2 == 0)
    throw std::invalid_argument("BasisSystem: Simpson needs an odd number (>= 3) of points per interval");
  nodes.clear();
  weights.clear();
  const std::size_t panels = points_per_interval - 1;
  for (std::size_t k = 0; k + 1 < breakpoints_.size(); ++k) {
    const double a = breakpoints_[k], b = breakpoints_[k + 1];
    const double h = (b - a) / static_cast<double>(panels);
    for (std::size_t i = 0; i < points_per_interval; ++i) {
      nodes.push_back(a + h * static_cast<double>(i));
      const double coef = (i == 0 || i == panels) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      weights.push_back(coef * h / 3.0);
    }
  }
}

}  // namespace imis::spline
