#include "imis/synthetic_likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace imis::sl {

namespace {

double quantile7(const std::vector<double>& sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

Vector summary_stats(std::span<const double> y) {
  if (y.empty()) throw std::invalid_argument("summary_stats: empty data");
  std::vector<double> sorted(y.begin(), y.end());
  for (double v : sorted)
    if (!(v >= 0.0)) throw std::invalid_argument("summary_stats: counts must be non-negative");
  std::sort(sorted.begin(), sorted.end());

  double sum = 0.0, sum_gt1 = 0.0, sum_gt10 = 0.0, sum_gt800 = 0.0;
  double n_gt1 = 0.0, zeros = 0.0, n_gt100 = 0.0, n_gt300 = 0.0, n_gt500 = 0.0;
  for (double v : sorted) {
    sum += v;
    if (v > 1.0) { sum_gt1 += v; n_gt1 += 1.0; }
    if (v > 10.0) sum_gt10 += v;
    if (v == 0.0) zeros += 1.0;
    if (v > 100.0) n_gt100 += 1.0;
    if (v > 300.0) n_gt300 += 1.0;
    if (v > 500.0) n_gt500 += 1.0;
    if (v > 800.0) sum_gt800 += v;
  }
  Vector s(kNumStats);
  s << quantile7(sorted, 0.5), sum / static_cast<double>(sorted.size()), n_gt1 > 0.0 ? sum_gt1 / n_gt1 : 0.0,
      sum_gt10, zeros, quantile7(sorted, 0.75), sorted.back(), n_gt100, n_gt300, n_gt500, sum_gt800;
  return s;
}

SyntheticLikelihoodSpec SyntheticLikelihoodSpec::full(std::size_t n_replicates, double ridge) {
  SyntheticLikelihoodSpec spec;
  spec.n_replicates = n_replicates;
  spec.ridge = ridge;
  spec.subset.resize(kNumStats);
  std::iota(spec.subset.begin(), spec.subset.end(), std::size_t{0});
  return spec;
}

void SyntheticLikelihoodSpec::validate() const {
  if (subset.empty()) throw std::invalid_argument("synthetic likelihood: empty statistic subset");
  std::set<std::size_t> seen;
  for (std::size_t i : subset) {
    if (i >= kNumStats) throw std::invalid_argument("synthetic likelihood: statistic index out of range");
    if (!seen.insert(i).second) throw std::invalid_argument("synthetic likelihood: duplicate statistic index");
  }
  if (n_replicates < subset.size() + 2)
    throw std::invalid_argument("synthetic likelihood: need at least dim(subset) + 2 replicates");
  if (!(ridge >= 0.0)) throw std::invalid_argument("synthetic likelihood: ridge must be non-negative");
}

ReplicateMoments replicate_moments(const SyntheticLikelihoodSpec& spec, const ReplicateSimulator& simulate, Rng& rng) {
  spec.validate();
  const std::uint64_t key = rng();
  const auto nz = static_cast<Eigen::Index>(spec.n_replicates);
  Matrix stats(nz, static_cast<Eigen::Index>(kNumStats));
  ReplicateMoments out;
  for (Eigen::Index r = 0; r < nz; ++r) {
    Rng stream = make_stream(key, 0, static_cast<std::uint64_t>(r));
    const auto y = simulate(stream);
    if (!y || y->empty()) {
      out.domain_ok = false;
      return out;
    }
    stats.row(r) = summary_stats(*y).transpose();
  }
  out.mean = stats.colwise().mean().transpose();
  const Matrix centered = stats.rowwise() - out.mean.transpose();
  out.covariance = centered.transpose() * centered / static_cast<double>(nz - 1);
  return out;
}

std::optional<double> gaussian_summary_loglik(const Vector& observed, const ReplicateMoments& moments,
                                              const SyntheticLikelihoodSpec& spec) {
  spec.validate();
  if (!moments.domain_ok) return std::nullopt;
  if (observed.size() != static_cast<Eigen::Index>(kNumStats))
    throw std::invalid_argument("synthetic likelihood: observed summary must have 11 entries");
  const auto k = static_cast<Eigen::Index>(spec.subset.size());
  Vector diff(k);
  Matrix cov(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto si = static_cast<Eigen::Index>(spec.subset[static_cast<std::size_t>(i)]);
    diff(i) = observed(si) - moments.mean(si);
    for (Eigen::Index j = 0; j < k; ++j)
      cov(i, j) = moments.covariance(si, static_cast<Eigen::Index>(spec.subset[static_cast<std::size_t>(j)]));
  }
  const double shift = spec.ridge * cov.diagonal().mean();
  cov.diagonal().array() += shift;

  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) return std::nullopt;
  const Vector z = llt.matrixL().solve(diff);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double value = -0.5 * z.squaredNorm() - 0.5 * log_det;
  if (!std::isfinite(value)) return std::nullopt;
  return value;
}

double synthetic_loglik(const Vector& observed, const SyntheticLikelihoodSpec& spec,
                        const ReplicateSimulator& simulate, Rng& rng, double flood) {
  const ReplicateMoments moments = replicate_moments(spec, simulate, rng);
  return gaussian_summary_loglik(observed, moments, spec).value_or(flood);
}

std::vector<SyntheticLikelihoodSpec> make_subset_criteria(std::size_t q, Rng& rng, std::size_t n_replicates,
                                                          double ridge, std::size_t subset_size) {
  if (q == 0) throw std::invalid_argument("make_subset_criteria: q must be at least 1");
  if (subset_size == 0 || subset_size > kNumStats) throw std::invalid_argument("make_subset_criteria: bad subset size");
  // C(11, 7) = 330 distinct subsets; refuse requests that cannot be met.
  double combos = 1.0;
  for (std::size_t i = 0; i < subset_size; ++i)
    combos = combos * static_cast<double>(kNumStats - i) / static_cast<double>(i + 1);
  if (static_cast<double>(q) > std::round(combos)) throw std::invalid_argument("make_subset_criteria: q exceeds the number of distinct subsets");

  std::set<std::vector<std::size_t>> seen;
  std::vector<SyntheticLikelihoodSpec> out;
  std::vector<std::size_t> pool(kNumStats);
  while (out.size() < q) {
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::size_t> pick(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(subset_size));
    std::sort(pick.begin(), pick.end());
    if (!seen.insert(pick).second) continue;
    SyntheticLikelihoodSpec spec;
    spec.n_replicates = n_replicates;
    spec.ridge = ridge;
    spec.subset = std::move(pick);
    out.push_back(std::move(spec));
  }
  return out;
}

}  // namespace imis::sl
