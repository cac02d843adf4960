#include "imis/nelder_mead.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace imis::opt {

NelderMeadResult nelder_mead(const Objective& f, const Vector& x0, const NelderMeadOptions& options) {
  const Eigen::Index n = x0.size();
  if (n == 0) throw std::invalid_argument("nelder_mead: empty start point");
  if (options.initial_steps && options.initial_steps->size() != n)
    throw std::invalid_argument("nelder_mead: initial_steps has the wrong size");

  NelderMeadResult result;
  auto eval = [&](const Vector& x) {
    ++result.evaluations;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Vector> simplex(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> values(static_cast<std::size_t>(n + 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    double step = options.initial_steps ? (*options.initial_steps)(i)
                                        : (x0(i) != 0.0 ? options.initial_scale * x0(i) : options.zero_offset);
    simplex[static_cast<std::size_t>(i + 1)](i) += step;
  }
  for (std::size_t i = 0; i < simplex.size(); ++i) values[i] = eval(simplex[i]);

  std::vector<std::size_t> order(simplex.size());
  auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<Vector> s2;
    std::vector<double> v2;
    s2.reserve(order.size());
    v2.reserve(order.size());
    for (std::size_t i : order) {
      s2.push_back(std::move(simplex[i]));
      v2.push_back(values[i]);
    }
    simplex = std::move(s2);
    values = std::move(v2);
  };

  const std::size_t last = simplex.size() - 1;
  sort_simplex();
  for (result.iterations = 0; result.iterations < options.max_iterations; ++result.iterations) {
    double diameter = 0.0;
    for (std::size_t i = 1; i <= last; ++i) diameter = std::max(diameter, (simplex[i] - simplex[0]).cwiseAbs().maxCoeff());
    const double spread = values[last] - values[0];
    const double x_scale = std::max(1.0, simplex[0].cwiseAbs().maxCoeff());
    const double f_scale = std::max(1.0, std::abs(values[0]));
    if (diameter <= options.x_tolerance * x_scale && std::isfinite(spread) && spread <= options.f_tolerance * f_scale) {
      result.converged = std::isfinite(values[0]);
      break;
    }

    Vector centroid = Vector::Zero(n);
    for (std::size_t i = 0; i < last; ++i) centroid += simplex[i];
    centroid /= static_cast<double>(n);

    const Vector reflected = centroid + (centroid - simplex[last]);
    const double f_reflected = eval(reflected);
    if (f_reflected < values[0]) {
      const Vector expanded = centroid + 2.0 * (centroid - simplex[last]);
      const double f_expanded = eval(expanded);
      if (f_expanded < f_reflected) {
        simplex[last] = expanded;
        values[last] = f_expanded;
      } else {
        simplex[last] = reflected;
        values[last] = f_reflected;
      }
    } else if (f_reflected < values[last - 1]) {
      simplex[last] = reflected;
      values[last] = f_reflected;
    } else {
      const bool outside = f_reflected < values[last];
      const Vector contracted = outside ? Vector(centroid + 0.5 * (reflected - centroid))
                                        : Vector(centroid + 0.5 * (simplex[last] - centroid));
      const double f_contracted = eval(contracted);
      if (f_contracted < (outside ? f_reflected : values[last])) {
        simplex[last] = contracted;
        values[last] = f_contracted;
      } else {
        for (std::size_t i = 1; i <= last; ++i) {
          simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0]);
          values[i] = eval(simplex[i]);
        }
      }
    }
    sort_simplex();
  }

  result.x = simplex[0];
  result.value = values[0];
  return result;
}

}  // namespace imis::opt
