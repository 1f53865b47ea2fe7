#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "survconf/band.hpp"
#include "survconf/data.hpp"

namespace survconf {

enum class MetricKind { EC, SEC };

struct EvalReport {
  std::optional<double> coverage_total;
  std::optional<double> coverage_censored;
  std::optional<double> coverage_uncensored;
  double mean_length = 0.0;
  double sd_length = 0.0;
  double truncated_fraction = 0.0;
  std::size_t n_evaluated = 0;
  MetricKind metric_kind = MetricKind::EC;
};

/// Fraction of test subjects whose true survival time lies in their band.
/// `bands[i]` belongs to subject `test[i]`.
EvalReport empirical_coverage(const std::vector<ConfidenceBand>& bands, const SurvivalDataset& ds,
                              const IndexSet& test);

/// Coverage computable from censored data: an uncensored subject counts when
/// Y lies in the band, a censored one when Y does not exceed the upper end.
EvalReport surrogate_empirical_coverage(const std::vector<ConfidenceBand>& bands, const SurvivalDataset& ds,
                                        const IndexSet& test);

/// Band for a dataset subject.
using BandFunction = std::function<ConfidenceBand(std::size_t subject)>;

struct KernelLocalResult {
  std::vector<EvalReport> per_center;
  IndexSet centers;
  double pooled_mean = 0.0;
  double pooled_sd = 0.0;
  double bandwidth = 0.0;
};

/// Median pairwise Euclidean distance between test covariates.
double median_pairwise_distance(const SurvivalDataset& ds, const IndexSet& test);

/// Local coverage around random centers: for each of `n_centers` test subjects
/// drawn uniformly, resample `n_per_center` test subjects with replacement with
/// probability proportional to a Gaussian kernel and score their bands.
/// Uses EC when true times are present, SEC otherwise. Bandwidth defaults to
/// the median pairwise distance; +inf gives uniform resampling.
KernelLocalResult kernel_local_protocol(const BandFunction& bands, const SurvivalDataset& ds, const IndexSet& test,
                                        std::size_t n_centers, std::size_t n_per_center,
                                        std::optional<double> bandwidth, std::uint64_t seed);

}  // namespace survconf
