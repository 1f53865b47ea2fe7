#include "survconf/synth.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <fmt/format.h>

namespace survconf {

void SynthConfig::validate() const {
  if (n == 0) throw std::invalid_argument("synth: n must be positive");
  if (dim == 0) throw std::invalid_argument("synth: dim must be positive");
  if (!(baseline_shape > 0.0)) throw std::invalid_argument("synth: baseline shape must be positive");
  if (kind == PredictorKind::Linear && beta.size() > dim)
    throw std::invalid_argument("synth: beta longer than dim");
  if (kind == PredictorKind::Nonlinear && dim < 3)
    throw std::invalid_argument("synth: nonlinear predictor needs dim >= 3");
  if (censor_coef.size() > dim) throw std::invalid_argument("synth: censor coefficients longer than dim");
}

double SynthConfig::g(std::span<const double> x) const {
  if (kind == PredictorKind::Linear) {
    double s = 0.0;
    for (std::size_t j = 0; j < beta.size(); ++j) s += beta[j] * x[j];
    return s;
  }
  const auto& c = nonlinear_coef;
  return c[0] * x[0] * x[1] + c[1] * std::sin(x[2]) + c[2] * x[0] * x[0];
}

double SynthConfig::censor_rate(std::span<const double> x) const {
  double s = censor_intercept;
  for (std::size_t j = 0; j < censor_coef.size(); ++j) s += censor_coef[j] * x[j];
  return std::exp(s);
}

SurvivalDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double inv_k = 1.0 / cfg.baseline_shape;

  // T = Lambda_0^{-1}(E * exp(-g)), E ~ Exp(1), so P(T > t | x) = exp(-t^k e^g).
  auto draw_survival = [&](double g) {
    double u = unif(rng);
    while (u <= 0.0) u = unif(rng);
    return std::pow(-std::log(u) * std::exp(-g), inv_k);
  };
  auto draw_exponential = [&](double rate) {
    double u = unif(rng);
    while (u <= 0.0) u = unif(rng);
    return -std::log(u) / rate;
  };

  std::vector<Subject> subjects;
  subjects.reserve(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    Subject s;
    s.covariates.resize(cfg.dim);
    for (auto& v : s.covariates) v = normal(rng);
    const double g = cfg.g(s.covariates);
    const double rate = cfg.censor_rate(s.covariates);
    const double t = draw_survival(g);
    s.true_time = t;

    if (cfg.mechanism == CensoringMechanism::Independent) {
      const double c = draw_exponential(rate);
      s.event = t <= c;
      s.observed_time = std::min(t, c);
    } else {
      // independent replicate of T decides the status, so status and T are
      // conditionally independent given x with the same P(event | x)
      const double ghost = draw_survival(g);
      s.event = ghost <= draw_exponential(rate);
      if (s.event) {
        s.observed_time = t;
      } else {
        // exponential clock conditioned on C < T (inverse CDF)
        const double v = unif(rng);
        double c = -std::log1p(v * std::expm1(-rate * t)) / rate;
        if (!(c < t)) c = std::nextafter(t, 0.0);
        s.observed_time = c;
      }
    }
    subjects.push_back(std::move(s));
  }
  std::vector<std::string> names;
  for (std::size_t j = 0; j < cfg.dim; ++j) names.push_back(fmt::format("x{}", j + 1));
  return SurvivalDataset(std::move(names), std::move(subjects));
}

double event_probability(const SynthConfig& cfg, std::span<const double> x) {
  // With s = Lambda(T | x) ~ Exp(1): P(T <= C | x) = E[exp(-rate * T)]
  //   = int_0^inf exp(-s) exp(-rate * (s e^{-g})^{1/k}) ds.
  const double scale = std::exp(-cfg.g(x));
  const double rate = cfg.censor_rate(x);
  const double inv_k = 1.0 / cfg.baseline_shape;
  auto f = [&](double s) { return std::exp(-s - rate * std::pow(s * scale, inv_k)); };
  boost::math::quadrature::exp_sinh<double> integrator;
  return integrator.integrate(f, 0.0, std::numeric_limits<double>::infinity(), 1e-8);
}

namespace {

double mean_event_probability(const SynthConfig& cfg, std::size_t draws, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(cfg.dim);
  double sum = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    for (auto& v : x) v = normal(rng);
    sum += event_probability(cfg, x);
  }
  return sum / static_cast<double>(draws);
}

}  // namespace

OracleWeight::OracleWeight(const SynthConfig& cfg, std::size_t mc_draws) : cfg_(cfg) {
  cfg_.validate();
  marginal_ = mean_event_probability(cfg_, mc_draws, 0x5eed0acc1eULL);
}

double OracleWeight::operator()(std::span<const double> x) const { return marginal_ / event_probability(cfg_, x); }

double calibrate_censor_intercept(SynthConfig cfg, double censoring_fraction, std::size_t mc_draws) {
  if (!(censoring_fraction > 0.0 && censoring_fraction < 1.0))
    throw std::invalid_argument("censoring fraction must lie in (0, 1)");
  double lo = -20.0, hi = 20.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    cfg.censor_intercept = mid;
    const double censored = 1.0 - mean_event_probability(cfg, mc_draws, 0xca11b8a7eULL);
    (censored < censoring_fraction ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

CovariateShiftReport covariate_shift_report(const SurvivalDataset& ds, std::size_t feature) {
  if (feature >= ds.dim()) throw std::invalid_argument("feature index out of range");
  double s1 = 0.0, s0 = 0.0;
  std::size_t n1 = 0, n0 = 0;
  for (const auto& s : ds.subjects()) {
    (s.event ? s1 : s0) += s.covariates[feature];
    ++(s.event ? n1 : n0);
  }
  if (n1 == 0 || n0 == 0) throw std::invalid_argument("covariate shift report needs both censored and uncensored subjects");
  CovariateShiftReport r;
  r.mean_uncensored = s1 / static_cast<double>(n1);
  r.mean_censored = s0 / static_cast<double>(n0);

  double within = 0.0, total = 0.0;
  const double grand = (s1 + s0) / static_cast<double>(n1 + n0);
  for (const auto& s : ds.subjects()) {
    const double v = s.covariates[feature];
    const double m = s.event ? r.mean_uncensored : r.mean_censored;
    within += (v - m) * (v - m);
    total += (v - grand) * (v - grand);
  }
  const double n = static_cast<double>(n1 + n0);
  // singleton classes have no within-class spread; fall back to the overall sd
  double sd = std::sqrt(within / n);
  if (!(sd > 0.0)) sd = std::sqrt(total / n);
  const double diff = r.mean_uncensored - r.mean_censored;
  r.standardized_gap = sd > 0.0 ? diff / sd : 0.0;
  return r;
}

}  // namespace survconf
