#include "survconf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace survconf {

std::string to_string(Method m) {
  switch (m) {
    case Method::Naive: return "naive";
    case Method::Wcci: return "wcci";
    case Method::Tsci: return "tsci";
    case Method::WcciUnweighted: return "wcci_unweighted";
    case Method::TsciUnweighted: return "tsci_unweighted";
  }
  return "unknown";
}

Method parse_method(const std::string& s) {
  for (auto m : {Method::Naive, Method::Wcci, Method::Tsci, Method::WcciUnweighted, Method::TsciUnweighted})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown method: " + s);
}

namespace {

void length_stats(const std::vector<ConfidenceBand>& bands, EvalReport& r) {
  double sum = 0.0, trunc = 0.0;
  for (const auto& b : bands) {
    sum += b.length();
    trunc += b.truncated ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(bands.size());
  r.mean_length = sum / n;
  double ss = 0.0;
  for (const auto& b : bands) ss += (b.length() - r.mean_length) * (b.length() - r.mean_length);
  r.sd_length = std::sqrt(ss / n);
  r.truncated_fraction = trunc / n;
  r.n_evaluated = bands.size();
}

template <class Hit>
EvalReport coverage_report(const std::vector<ConfidenceBand>& bands, const SurvivalDataset& ds, const IndexSet& test,
                           Hit hit) {
  if (test.empty()) throw std::invalid_argument("empty test set");
  if (bands.size() != test.size()) throw std::invalid_argument("need one band per test subject");
  double hits[2] = {0.0, 0.0};
  double counts[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& s = ds[test[i]];
    const int cls = s.event ? 1 : 0;
    counts[cls] += 1.0;
    hits[cls] += hit(bands[i], s) ? 1.0 : 0.0;
  }
  EvalReport r;
  r.coverage_total = (hits[0] + hits[1]) / (counts[0] + counts[1]);
  if (counts[0] > 0.0) r.coverage_censored = hits[0] / counts[0];
  if (counts[1] > 0.0) r.coverage_uncensored = hits[1] / counts[1];
  length_stats(bands, r);
  return r;
}

}  // namespace

EvalReport empirical_coverage(const std::vector<ConfidenceBand>& bands, const SurvivalDataset& ds,
                              const IndexSet& test) {
  for (auto i : test)
    if (!ds[i].true_time)
      throw std::invalid_argument("empirical coverage needs true survival times; use surrogate coverage instead");
  auto r = coverage_report(bands, ds, test, [](const ConfidenceBand& b, const Subject& s) {
    return b.contains(*s.true_time);
  });
  r.metric_kind = MetricKind::EC;
  return r;
}

EvalReport surrogate_empirical_coverage(const std::vector<ConfidenceBand>& bands, const SurvivalDataset& ds,
                                        const IndexSet& test) {
  auto r = coverage_report(bands, ds, test, [](const ConfidenceBand& b, const Subject& s) {
    if (s.event) return b.contains(s.observed_time);
    return b.truncated || s.observed_time <= b.upper;
  });
  r.metric_kind = MetricKind::SEC;
  return r;
}

double median_pairwise_distance(const SurvivalDataset& ds, const IndexSet& test) {
  std::vector<double> d;
  d.reserve(test.size() * (test.size() - 1) / 2);
  for (std::size_t a = 0; a < test.size(); ++a)
    for (std::size_t b = a + 1; b < test.size(); ++b) {
      double s = 0.0;
      for (std::size_t j = 0; j < ds.dim(); ++j) {
        const double diff = ds[test[a]].covariates[j] - ds[test[b]].covariates[j];
        s += diff * diff;
      }
      d.push_back(std::sqrt(s));
    }
  if (d.empty()) return 1.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0.0 ? *mid : 1.0;
}

KernelLocalResult kernel_local_protocol(const BandFunction& bands, const SurvivalDataset& ds, const IndexSet& test,
                                        std::size_t n_centers, std::size_t n_per_center,
                                        std::optional<double> bandwidth, std::uint64_t seed) {
  if (test.size() < n_per_center) throw std::invalid_argument("test set smaller than the per-center sample");
  if (test.empty() || n_centers == 0) throw std::invalid_argument("kernel protocol needs test subjects and centers");
  KernelLocalResult out;
  out.bandwidth = bandwidth ? *bandwidth : median_pairwise_distance(ds, test);
  if (!(out.bandwidth > 0.0)) throw std::invalid_argument("bandwidth must be positive");

  std::vector<ConfidenceBand> all;
  all.reserve(test.size());
  for (auto i : test) all.push_back(bands(i));
  const bool use_ec = std::all_of(test.begin(), test.end(), [&](auto i) { return ds[i].true_time.has_value(); });

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, test.size() - 1);
  const double h2 = out.bandwidth * out.bandwidth;
  for (std::size_t c = 0; c < n_centers; ++c) {
    const auto center = test[pick(rng)];
    out.centers.push_back(center);
    std::vector<double> w(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < ds.dim(); ++j) {
        const double diff = ds[test[i]].covariates[j] - ds[center].covariates[j];
        s += diff * diff;
      }
      w[i] = std::isinf(out.bandwidth) ? 1.0 : std::exp(-s / (2.0 * h2));
    }
    std::discrete_distribution<std::size_t> draw(w.begin(), w.end());
    IndexSet sample;
    std::vector<ConfidenceBand> sample_bands;
    for (std::size_t k = 0; k < n_per_center; ++k) {
      const auto pos = draw(rng);
      sample.push_back(test[pos]);
      sample_bands.push_back(all[pos]);
    }
    out.per_center.push_back(use_ec ? empirical_coverage(sample_bands, ds, sample)
                                    : surrogate_empirical_coverage(sample_bands, ds, sample));
  }
  double sum = 0.0;
  for (const auto& r : out.per_center) sum += *r.coverage_total;
  out.pooled_mean = sum / static_cast<double>(n_centers);
  double ss = 0.0;
  for (const auto& r : out.per_center) ss += (*r.coverage_total - out.pooled_mean) * (*r.coverage_total - out.pooled_mean);
  out.pooled_sd = std::sqrt(ss / static_cast<double>(n_centers));
  return out;
}

}  // namespace survconf
