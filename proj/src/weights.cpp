#include "survconf/weights.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

namespace survconf {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

double WeightModel::event_probability(std::span<const double> x) const {
  double z = intercept;
  for (std::size_t j = 0; j < x.size(); ++j) z += coefficients(static_cast<Eigen::Index>(j)) * x[j];
  return sigmoid(z);
}

double WeightModel::operator()(std::span<const double> x) const {
  const double p = event_probability(x);
  const double w = p > 0.0 ? rescale * marginal_event_rate / p : std::numeric_limits<double>::infinity();
  return std::clamp(w, w_min, w_max);
}

WeightModel fit_weight_model(const SurvivalDataset& ds, const IndexSet& pool, const WeightFitOptions& opts) {
  const auto n_events = uncensored(ds, pool).size();
  if (n_events == 0 || n_events == pool.size())
    throw std::invalid_argument("weight model needs both censored and uncensored subjects");
  if (opts.w_min <= 0.0 || opts.w_min > opts.w_max) throw std::invalid_argument("invalid weight clip range");

  // Columns: intercept, features. The intercept is not penalized.
  const auto n = static_cast<Eigen::Index>(pool.size());
  const auto d = static_cast<Eigen::Index>(ds.dim());
  Eigen::MatrixXd x(n, d + 1);
  Eigen::VectorXd y(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& s = ds[pool[static_cast<std::size_t>(r)]];
    x(r, 0) = 1.0;
    for (Eigen::Index j = 0; j < d; ++j) x(r, j + 1) = s.covariates[static_cast<std::size_t>(j)];
    y(r) = s.event ? 1.0 : 0.0;
  }
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(d + 1, opts.ridge);
  penalty(0) = 0.0;

  auto objective = [&](const Eigen::VectorXd& theta) {
    const Eigen::VectorXd z = x * theta;
    double ll = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) ll += y(r) * z(r) - softplus(z(r));
    return ll - 0.5 * (penalty.array() * theta.array().square()).sum();
  };

  const double rate = static_cast<double>(n_events) / static_cast<double>(pool.size());
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
  theta(0) = std::log(rate / (1.0 - rate));
  double f = objective(theta);
  for (int it = 0; it < opts.max_iter; ++it) {
    const Eigen::VectorXd z = x * theta;
    Eigen::VectorXd p(n);
    for (Eigen::Index r = 0; r < n; ++r) p(r) = sigmoid(z(r));
    const Eigen::VectorXd grad = x.transpose() * (y - p) - penalty.cwiseProduct(theta);
    if (grad.lpNorm<Eigen::Infinity>() < opts.tol) break;
    const Eigen::VectorXd wts = p.array() * (1.0 - p.array());
    Eigen::MatrixXd info = x.transpose() * wts.asDiagonal() * x;
    info.diagonal() += penalty;
    info.diagonal().array() += 1e-12;
    Eigen::VectorXd step = info.ldlt().solve(grad);
    if (!step.allFinite()) throw std::runtime_error("logistic weight model: singular information; use ridge > 0");
    bool accepted = false;
    for (int halving = 0; halving <= 30; ++halving) {
      const Eigen::VectorXd cand = theta + step;
      const double fc = objective(cand);
      if (std::isfinite(fc) && fc >= f) {
        theta = cand;
        f = fc;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  if (!theta.allFinite()) throw std::runtime_error("logistic weight model diverged; use ridge > 0");

  WeightModel m;
  m.intercept = theta(0);
  m.coefficients = theta.tail(d);
  m.marginal_event_rate = rate;
  if (opts.clip) {
    m.w_min = opts.w_min;
    m.w_max = opts.w_max;
  } else {
    m.w_min = std::numeric_limits<double>::min();
    m.w_max = std::numeric_limits<double>::max();
  }
  return m;
}

NormalizedWeights normalize(std::span<const double> weights_cal, double weight_test) {
  if (!(weight_test > 0.0)) throw std::invalid_argument("test weight must be positive");
  double total = weight_test;
  for (double w : weights_cal) {
    if (!(w > 0.0)) throw std::invalid_argument("calibration weights must be positive");
    total += w;
  }
  NormalizedWeights out;
  out.p.reserve(weights_cal.size());
  for (double w : weights_cal) out.p.push_back(w / total);
  out.p_inf = weight_test / total;
  return out;
}

WeightModel renormalize_mean_one(const WeightModel& m, const std::vector<std::vector<double>>& cal_uncensored) {
  if (cal_uncensored.empty()) throw std::invalid_argument("renormalize_mean_one needs calibration points");
  double sum = 0.0;
  for (const auto& x : cal_uncensored) sum += m(x);
  const double c = static_cast<double>(cal_uncensored.size()) / sum;
  WeightModel out = m;
  out.rescale *= c;
  out.w_min *= c;
  out.w_max *= c;
  return out;
}

}  // namespace survconf
