#pragma once

#include "imis/common.hpp"

#include <functional>
#include <optional>

namespace imis::opt {

struct NelderMeadOptions {
  std::size_t max_iterations = 500;
  double x_tolerance = 1e-8;  // relative simplex diameter
  double f_tolerance = 1e-8;  // relative spread of vertex values
  double initial_scale = 0.05;       // vertex offset as a fraction of |x_i|
  double zero_offset = 0.00025;      // offset used when x_i == 0
  std::optional<Vector> initial_steps;  // explicit per-coordinate offsets
};

struct NelderMeadResult {
  Vector x;
  double value = 0.0;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  bool converged = false;
};

using Objective = std::function<double(const Vector&)>;

/// Minimizes f from x0 with the standard reflection/expansion/contraction/shrink
/// coefficients (1, 2, 1/2, 1/2). Non-finite values are treated as +inf.
NelderMeadResult nelder_mead(const Objective& f, const Vector& x0, const NelderMeadOptions& options = {});

}  // namespace imis::opt
