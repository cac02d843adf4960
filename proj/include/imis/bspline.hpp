#pragma once

#include "imis/common.hpp"

#include <span>
#include <vector>

namespace imis::spline {

/// Nonzero basis values and first derivatives at one point: basis index first+j
/// has value values[j] and derivative derivs[j], j < order.
struct LocalBasis {
  std::size_t first = 0;
  std::vector<double> values;
  std::vector<double> derivs;
};

/// B-spline basis on strictly increasing breakpoints with clamped (repeated)
/// boundary knots. n_basis = number of interior breakpoints + order.
class BasisSystem {
 public:
  BasisSystem(std::vector<double> breakpoints, std::size_t order = 4);

  std::size_t order() const { return order_; }
  std::size_t n_basis() const { return n_basis_; }
  const std::vector<double>& breakpoints() const { return breakpoints_; }

  LocalBasis evaluate(double t) const;

  /// Dense basis (derivative = 0) or first-derivative (derivative = 1) matrix at the given times.
  Matrix design(std::span<const double> times, int derivative = 0) const;

  /// Composite Simpson nodes and weights, `points_per_interval` (odd, >= 3) per breakpoint interval.
  void quadrature(std::size_t points_per_interval, std::vector<double>& nodes, std::vector<double>& weights) const;

 private:
  std::vector<double> breakpoints_;
  std::vector<double> knots_;
  std::size_t order_;
  std::size_t n_basis_;
};

}  // namespace imis::spline
