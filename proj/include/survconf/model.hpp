#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "survconf/band.hpp"
#include "survconf/conformal.hpp"
#include "survconf/data.hpp"
#include "survconf/predictor.hpp"
#include "survconf/weights.hpp"

namespace survconf {

enum class PredictorType { Linear, Mlp };

struct ModelOptions {
  PredictorType predictor = PredictorType::Linear;
  LinearFitOptions linear;
  MlpOptions mlp;
  WeightFitOptions weights;
  bool normalize = true;
  bool renormalize_weights = true;
};

/// Everything needed to produce bands for new covariates: the fitted
/// predictor and weight model plus the training risk-set summary and the
/// uncensored subjects of both calibration folds. Covariates are stored in
/// model coordinates (after normalization).
struct SurvivalModel {
  static constexpr int kFormatVersion = 1;

  std::vector<std::string> feature_names;
  std::optional<Normalization> normalization;
  Predictor predictor;
  WeightModel weight_model;
  BaselineHazard baseline;
  double max_duration = 0.0;
  std::vector<std::pair<double, double>> train_time_g;
  CandidateGrid grid;
  std::vector<std::vector<double>> cal1_x;
  std::vector<double> cal1_times;
  std::vector<std::vector<double>> cal2_x;
  std::vector<double> cal2_times;
  nlohmann::json metadata = nlohmann::json::object();

  /// Raw covariates -> model coordinates.
  std::vector<double> to_model_space(std::span<const double> x) const;
};

/// Fits predictor and weight model on `split.train`, rescales the weights to
/// mean one over the uncensored first calibration fold (second fold when the
/// first is empty), and collects calibration data. `raw` is in original units.
SurvivalModel fit_model(const SurvivalDataset& raw, const FoldSplit& split, const ModelOptions& opts);

nlohmann::json to_json(const SurvivalModel& m);
SurvivalModel model_from_json(const nlohmann::json& j);
void save_model(const std::string& path, const SurvivalModel& m);
SurvivalModel load_model(const std::string& path);

struct BandOptions {
  FirstStage first_stage = FirstStage::Split;
  /// Use a single eta per alpha, computed at the mean weight of the query batch.
  bool shared_eta = false;
};

/// Produces bands for every method from one fitted model. Weighted methods use
/// the model's weight function (or `weight_override`); the unweighted variants
/// run the same code with every weight forced to one.
class BandEngine {
 public:
  BandEngine(const SurvivalModel& model, BandOptions opts = {}, WeightFunction weight_override = nullptr);

  /// `xs` are in model coordinates.
  std::vector<ConfidenceBand> bands(Method method, double alpha, const std::vector<std::vector<double>>& xs);

  /// WCCI state for the weighted (false) or unit-weight (true) variant.
  const Wcci& wcci(bool unit_weights);
  const WeightFunction& weight_function(bool unit_weights) const { return unit_weights ? unit_ : weighted_; }

 private:
  const TsciCalibration& tsci(bool unit_weights, double alpha);

  const SurvivalModel& model_;
  BandOptions opts_;
  WeightFunction weighted_;
  WeightFunction unit_;
  std::optional<Wcci> wcci_[2];
  std::map<std::pair<bool, double>, TsciCalibration> tsci_;
};

}  // namespace survconf
