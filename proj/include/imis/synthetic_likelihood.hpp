#pragma once

#include "imis/common.hpp"

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace imis::sl {

inline constexpr std::size_t kNumStats = 11;

/// (median, mean, mean over y > 1, sum of y > 10, #zeros, 0.75-quantile, max,
///  #{y > 100}, #{y > 300}, #{y > 500}, sum of y > 800). Quantiles are type-7.
Vector summary_stats(std::span<const double> y);

struct SyntheticLikelihoodSpec {
  std::size_t n_replicates = 30;
  std::vector<std::size_t> subset;  // 0-based indices into the statistics, in order
  double ridge = 1e-6;

  static SyntheticLikelihoodSpec full(std::size_t n_replicates = 30, double ridge = 1e-6);
  void validate() const;
};

/// One replicate dataset, or nullopt when the simulated path was domain-flagged.
using ReplicateSimulator = std::function<std::optional<std::vector<double>>(Rng&)>;

struct ReplicateMoments {
  Vector mean;          // over all 11 statistics
  Matrix covariance;    // 1/(N_Z - 1) normalization, no ridge
  bool domain_ok = true;
};

/// Simulates spec.n_replicates datasets; replicate r draws from its own substream
/// keyed off a single value taken from `rng`, so the replicate set is fixed by the
/// caller's stream regardless of how each replicate consumes randomness.
ReplicateMoments replicate_moments(const SyntheticLikelihoodSpec& spec, const ReplicateSimulator& simulate, Rng& rng);

/// -1/2 (s - mu)' S^{-1} (s - mu) - 1/2 log|S| over spec.subset, S ridge-regularized.
/// Returns nullopt when the moments are domain-flagged or S is singular.
std::optional<double> gaussian_summary_loglik(const Vector& observed, const ReplicateMoments& moments,
                                              const SyntheticLikelihoodSpec& spec);

/// Simulate-then-score convenience; floods (returns `flood`) on any failure.
double synthetic_loglik(const Vector& observed, const SyntheticLikelihoodSpec& spec,
                        const ReplicateSimulator& simulate, Rng& rng, double flood);

/// q distinct size-7 subsets of the 11 statistics, each sorted ascending.
std::vector<SyntheticLikelihoodSpec> make_subset_criteria(std::size_t q, Rng& rng, std::size_t n_replicates = 30,
                                                          double ridge = 1e-6, std::size_t subset_size = 7);

}  // namespace imis::sl
