#pragma once

// Slow reference implementations used as test oracles. They follow the
// textbook definitions with plain loops and no numerical stabilization.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "survconf/data.hpp"

namespace oracle {

using survconf::IndexSet;
using survconf::SurvivalDataset;

inline SurvivalDataset make_dataset(const std::vector<std::vector<double>>& x, const std::vector<double>& time,
                                    const std::vector<int>& event) {
  std::vector<survconf::Subject> subjects;
  for (std::size_t i = 0; i < time.size(); ++i) {
    survconf::Subject s;
    s.covariates = x.empty() ? std::vector<double>{0.0} : x[i];
    s.observed_time = time[i];
    s.event = event[i] != 0;
    subjects.push_back(s);
  }
  std::vector<std::string> names;
  for (std::size_t j = 0; j < subjects.front().covariates.size(); ++j) names.push_back("x" + std::to_string(j + 1));
  return SurvivalDataset(names, subjects);
}

inline SurvivalDataset random_dataset(std::size_t n, std::size_t d, std::uint64_t seed, double event_prob = 0.7) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  std::bernoulli_distribution coin(event_prob);
  std::vector<std::vector<double>> x(n, std::vector<double>(d));
  std::vector<double> t(n);
  std::vector<int> e(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : x[i]) v = normal(rng);
    t[i] = expo(rng);
    e[i] = coin(rng) ? 1 : 0;
  }
  return make_dataset(x, t, e);
}

/// sum over events j of g_j - log sum_{k: Y_k >= Y_j} exp(g_k), straight exponentials.
inline double partial_log_lik(const std::vector<double>& g, const SurvivalDataset& ds, const IndexSet& pool) {
  double pl = 0.0;
  for (auto j : pool) {
    if (!ds[j].event) continue;
    double denom = 0.0;
    for (auto k : pool)
      if (ds[k].observed_time >= ds[j].observed_time) denom += std::exp(g[k]);
    pl += g[j] - std::log(denom);
  }
  return pl;
}

/// log sum_{k in train, Y_k >= t} exp(g_k - g_x); -inf on an empty risk set.
inline double score(const std::vector<double>& g, const SurvivalDataset& ds, const IndexSet& train, double g_x,
                    double t) {
  double s = 0.0;
  for (auto k : train)
    if (ds[k].observed_time >= t) s += std::exp(g[k] - g_x);
  return s > 0.0 ? std::log(s) : -std::numeric_limits<double>::infinity();
}

/// Breslow cumulative baseline hazard at t.
inline double breslow(const std::vector<double>& g, const SurvivalDataset& ds, const IndexSet& pool, double t) {
  double h = 0.0;
  for (auto j : pool) {
    if (!ds[j].event || ds[j].observed_time > t) continue;
    double denom = 0.0;
    for (auto k : pool)
      if (ds[k].observed_time >= ds[j].observed_time) denom += std::exp(g[k]);
    h += 1.0 / denom;
  }
  return h;
}

/// Maximizer of a unimodal function on [a, b].
inline double golden_section_max(const std::function<double(double)>& f, double a, double b, double tol = 1e-10) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

/// k-th smallest (1-based) of `v`, or +inf when k exceeds the sample size.
inline double order_statistic(std::vector<double> v, std::size_t k) {
  if (k > v.size()) return std::numeric_limits<double>::infinity();
  std::sort(v.begin(), v.end());
  return v[k - 1];
}

/// Unweighted split-conformal threshold: the ceil((1 - alpha)(n + 1))-th smallest score.
inline double split_conformal_threshold(const std::vector<double>& scores, double alpha) {
  const double n = static_cast<double>(scores.size());
  const auto k = static_cast<std::size_t>(std::ceil((1.0 - alpha) * (n + 1.0) - 1e-9));
  return order_statistic(scores, k);
}

}  // namespace oracle
