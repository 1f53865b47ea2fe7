#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "survconf/data.hpp"

namespace survconf {

enum class PredictorKind { Linear, Nonlinear };

/// How censoring status and censored observation times are produced.
///  Ignorable:   the event indicator is drawn from P(event | x) independently of
///               T given x (T independent of the indicator given X); a censored
///               subject's observed time is the exponential censoring clock
///               conditioned to fall before T.
///  Independent: classical random censoring, Y = min(T, C), event = 1{T <= C},
///               with C independent of T given x.
enum class CensoringMechanism { Ignorable, Independent };

/// Proportional-hazards generator with Weibull-type baseline Lambda_0(t) = t^k.
/// g(x) is either beta . x or c1 * x1 * x2 + c2 * sin(x3) + c3 * x1^2.
/// The censoring clock is exponential with rate exp(censor_intercept + censor_coef . x).
struct SynthConfig {
  std::size_t n = 2000;
  std::size_t dim = 5;
  PredictorKind kind = PredictorKind::Linear;
  std::vector<double> beta{0.8, -0.6, 0.4, 0.0, 0.0};
  std::array<double, 3> nonlinear_coef{1.0, 1.0, 0.5};
  double baseline_shape = 2.0;
  double censor_intercept = kDefaultCensorIntercept;
  std::vector<double> censor_coef{0.8, 0.0, 0.0, 0.6, 0.0};
  CensoringMechanism mechanism = CensoringMechanism::Ignorable;
  std::uint64_t seed = 0;

  /// Intercept giving a 30% censoring fraction for the default linear config.
  static constexpr double kDefaultCensorIntercept = -1.022;

  void validate() const;
  double g(std::span<const double> x) const;
  double censor_rate(std::span<const double> x) const;
};

/// Synthetic dataset with true survival times. Features are named x1..x{dim}.
SurvivalDataset generate(const SynthConfig& cfg);

/// P(event | x) = integral of P(C > t | x) dF_{T|x}(t), by adaptive quadrature.
double event_probability(const SynthConfig& cfg, std::span<const double> x);

/// Ground-truth covariate-shift weight w(x) = P(event) / P(event | x).
class OracleWeight {
 public:
  /// Marginal P(event) is estimated by averaging event_probability over
  /// `mc_draws` covariate draws (fixed seed).
  explicit OracleWeight(const SynthConfig& cfg, std::size_t mc_draws = 100000);

  double operator()(std::span<const double> x) const;
  double marginal_event_rate() const { return marginal_; }

 private:
  SynthConfig cfg_;
  double marginal_ = 0.0;
};

/// Censor-rate intercept giving the requested censoring fraction, by bisection
/// on the quadrature censoring probability averaged over `mc_draws` covariates.
double calibrate_censor_intercept(SynthConfig cfg, double censoring_fraction, std::size_t mc_draws = 20000);

struct CovariateShiftReport {
  double mean_uncensored = 0.0;
  double mean_censored = 0.0;
  double standardized_gap = 0.0;  // (mean_uncensored - mean_censored) / pooled sd
};

CovariateShiftReport covariate_shift_report(const SurvivalDataset& ds, std::size_t feature);

}  // namespace survconf
