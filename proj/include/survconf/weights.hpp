#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "survconf/data.hpp"

namespace survconf {

/// Any covariate-shift weight x -> w(x) > 0. Used to plug in oracle weights or
/// constant weights in place of a fitted WeightModel.
using WeightFunction = std::function<double(std::span<const double>)>;

/// Logistic model of P(event | x), turned into the density-ratio weight
///   w(x) = P(event) / P(event | x)
/// and clipped to [w_min, w_max]. `rescale` multiplies the weight before clipping.
struct WeightModel {
  Eigen::VectorXd coefficients;
  double intercept = 0.0;
  double marginal_event_rate = 0.5;
  double w_min = 0.05;
  double w_max = 20.0;
  double rescale = 1.0;

  double event_probability(std::span<const double> x) const;
  double operator()(std::span<const double> x) const;
};

struct WeightFitOptions {
  int max_iter = 50;
  double tol = 1e-8;
  double ridge = 1e-6;
  bool clip = true;
  double w_min = 0.05;
  double w_max = 20.0;
};

/// Ridge-penalized logistic regression of the event indicator on the covariates, by Newton-Raphson.
WeightModel fit_weight_model(const SurvivalDataset& ds, const IndexSet& pool, const WeightFitOptions& opts = {});

inline double weight_at(const WeightModel& m, std::span<const double> x) { return m(x); }

struct NormalizedWeights {
  std::vector<double> p;
  double p_inf = 1.0;
};

/// p_i = W_i / (sum W + W'), p_inf = W' / (sum W + W').
NormalizedWeights normalize(std::span<const double> weights_cal, double weight_test);

/// Rescales the model so its mean weight over `cal_uncensored` is exactly one.
WeightModel renormalize_mean_one(const WeightModel& m, const std::vector<std::vector<double>>& cal_uncensored);

}  // namespace survconf
