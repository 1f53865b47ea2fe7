#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "survconf/band.hpp"
#include "survconf/data.hpp"

namespace survconf {

// Cox-type risk predictors g(x): hazard(t | x) = hazard_0(t) * exp(g(x)).

struct LinearPredictor {
  Eigen::VectorXd beta;

  double operator()(std::span<const double> x) const;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Feed-forward network with ReLU between hidden layers and a scalar linear output.
/// `input_mean`/`input_scale` are empty unless input standardization was requested.
struct MlpPredictor {
  std::vector<DenseLayer> layers;
  double dropout_rate = 0.0;
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_scale;

  double operator()(std::span<const double> x) const;
  std::size_t input_dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weight.cols()); }
  std::size_t parameter_count() const;
};

class Predictor {
 public:
  Predictor() = default;
  Predictor(LinearPredictor p) : model_(std::move(p)) {}  // NOLINT(google-explicit-constructor)
  Predictor(MlpPredictor p) : model_(std::move(p)) {}     // NOLINT(google-explicit-constructor)

  double operator()(std::span<const double> x) const;
  /// g for every subject of `ds`, indexed like the dataset.
  std::vector<double> evaluate(const SurvivalDataset& ds) const;

  bool is_linear() const { return std::holds_alternative<LinearPredictor>(model_); }
  const LinearPredictor& linear() const { return std::get<LinearPredictor>(model_); }
  const MlpPredictor& mlp() const { return std::get<MlpPredictor>(model_); }

 private:
  std::variant<LinearPredictor, MlpPredictor> model_;
};

/// Standard-sign Cox partial log-likelihood restricted to `pool`:
///   sum over events j in pool of g_j - log sum_{k in pool, Y_k >= Y_j} exp(g_k).
/// `g` is indexed like the dataset. Breslow handling of tied times.
double partial_log_lik(std::span<const double> g, const SurvivalDataset& ds, const IndexSet& pool);

struct LinearFitOptions {
  int max_iter = 50;
  double tol = 1e-8;
  double ridge = 1e-6;
};

struct LinearFit {
  LinearPredictor predictor;
  bool converged = false;
  int iterations = 0;
  /// Penalized objective at the start and after every accepted Newton step.
  std::vector<double> objective_trace;
};

/// Maximizes pl(beta) - ridge * |beta|^2 / 2 by Newton-Raphson with step halving.
LinearFit fit_linear(const SurvivalDataset& ds, const IndexSet& pool, const LinearFitOptions& opts = {});

struct MlpOptions {
  std::vector<int> hidden_sizes{16, 16};
  double dropout = 0.1;
  double learning_rate = 1e-3;
  int batch_size = 128;
  int epochs = 50;
  std::uint64_t seed = 0;
  double weight_penalty = 1e-4;
  bool standardize_inputs = false;

  /// Three 32-unit hidden layers, dropout 0.1, batch 128, 512 epochs.
  static MlpOptions full();
};

struct MlpFit {
  MlpPredictor predictor;
  /// Full-pool loss (no dropout, pool-wide risk sets) after each epoch.
  std::vector<double> epoch_losses;
  int skipped_batches = 0;
};

MlpFit fit_mlp(const SurvivalDataset& ds, const IndexSet& pool, const MlpOptions& opts = {});

/// Gradient container with the same shapes as the network's layers.
using MlpGradient = std::vector<DenseLayer>;

/// Per-batch training loss: negative mean partial log-likelihood with risk
/// sets formed inside `batch`, plus weight_penalty * sum |W|^2 / 2.
/// `dropout_masks`, when non-null, holds one scaled keep-mask per hidden layer
/// (rows = batch size). Writes the exact gradient into `grad` when non-null.
double mlp_batch_loss(const MlpPredictor& net, const SurvivalDataset& ds, const IndexSet& batch,
                      double weight_penalty, MlpGradient* grad = nullptr,
                      const std::vector<Eigen::MatrixXd>* dropout_masks = nullptr);

/// Randomly initialized network (He-uniform weights, zero biases).
MlpPredictor init_mlp(std::size_t input_dim, const std::vector<int>& hidden_sizes, std::uint64_t seed);

struct BaselineHazard {
  std::vector<double> event_times;  // strictly increasing
  std::vector<double> cumulative;   // nondecreasing

  /// Right-continuous step function, 0 before the first event time.
  double at(double t) const;
};

/// Breslow estimator of the baseline cumulative hazard given fitted g (indexed like the dataset).
BaselineHazard breslow(const SurvivalDataset& ds, const IndexSet& pool, std::span<const double> g);

/// Plug-in band [0, t_u] from the estimated survival function: t_u is the first
/// event time with S(t | x) <= alpha. No coverage guarantee.
ConfidenceBand naive_band(double g_at_x, const BaselineHazard& baseline, double alpha, double max_duration);

}  // namespace survconf
