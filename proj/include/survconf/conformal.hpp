#pragma once

#include <span>
#include <utility>
#include <vector>

#include "survconf/band.hpp"
#include "survconf/data.hpp"
#include "survconf/predictor.hpp"
#include "survconf/weights.hpp"

namespace survconf {

// ---------------------------------------------------------------------------
// Partial-likelihood non-conformity score
//
//   V(x, t) = log sum_{k in train, Y_k >= t} exp(g(X_k) - g(x))
//
// Risk sets are drawn from the training fold only, so calibration scores are
// exchangeable given the training data. V is non-increasing in t; once the
// training risk set is empty the score is -inf (always conforming).
// ---------------------------------------------------------------------------

/// Direct evaluation of V(x, t). Returns -inf when the training risk set at t is empty.
double score_partial(const Predictor& g, const IndexSet& train_pool, const SurvivalDataset& ds,
                     std::span<const double> x, double t);

/// Precomputed log-sum-exp of training g over every suffix of the sorted
/// training times, so V(x, t) costs one binary search.
class RiskSetScorer {
 public:
  RiskSetScorer() = default;
  /// `g` is indexed like the dataset; only entries in `train` are read.
  RiskSetScorer(std::span<const double> g, const SurvivalDataset& ds, const IndexSet& train);
  /// From (observed time, g) pairs of the training subjects.
  explicit RiskSetScorer(std::vector<std::pair<double, double>> time_g);

  /// log sum_{k in train, Y_k >= t} exp(g_k), or -inf when empty.
  double log_risk_sum(double t) const;
  double score(double g_x, double t) const { return log_risk_sum(t) - g_x; }

 private:
  std::vector<double> times_;       // ascending
  std::vector<double> suffix_lse_;  // suffix_lse_[i] = LSE over times_[i..]
};

// ---------------------------------------------------------------------------
// Weighted quantile with an atom at +infinity
// ---------------------------------------------------------------------------

struct WeightedScoreDistribution {
  std::vector<std::pair<double, double>> atoms;  // (score, probability)
  double infinity_mass = 0.0;
};

/// Smallest atom score whose cumulative probability (atoms ascending) reaches
/// `level`; +inf when the finite mass falls short of it.
double weighted_quantile(const WeightedScoreDistribution& dist, double level);

/// Sorted calibration scores with cumulative raw weights. Answers the
/// weighted quantile for any test-point weight without re-sorting.
class CalibratedQuantile {
 public:
  CalibratedQuantile() = default;
  CalibratedQuantile(std::span<const double> scores, std::span<const double> raw_weights);

  /// Quantile of sum_i p_i delta_{V_i} + p_inf delta_{+inf} with
  /// p_i = W_i / (sum W + test_weight), p_inf = test_weight / (sum W + test_weight).
  double quantile(double level, double test_weight) const;

  std::size_t size() const { return sorted_.size(); }
  double total_weight() const { return total_; }
  WeightedScoreDistribution distribution(double test_weight) const;

 private:
  std::vector<double> sorted_;
  std::vector<double> cumulative_;
  double total_ = 0.0;
};

// ---------------------------------------------------------------------------
// WCCI: weighted conformal censoring inference
// ---------------------------------------------------------------------------

struct CandidateGrid {
  std::vector<double> times;  // strictly increasing, contains 0 and max_duration

  /// Distinct training observed times (capped at max_duration) plus 0 and max_duration.
  static CandidateGrid from_training(const SurvivalDataset& ds, const IndexSet& train, double max_duration);
  double max_duration() const { return times.back(); }
};

struct WcciCalibration {
  std::vector<double> scores;
  std::vector<double> raw_weights;
  IndexSet subjects;  // uncensored calibration subjects, in calibration order
};

/// Scores and weights of the uncensored calibration subjects.
WcciCalibration wcci_calibrate(const Predictor& g, const WeightFunction& w, const SurvivalDataset& ds,
                               const IndexSet& train, const IndexSet& cal);

/// Which tail of the score a band is built from.
///  Lower: {t : V(x, t) <= Q} with Q the (1 - alpha) quantile of V. Because V
///         falls as t grows this bounds survival time from below.
///  Upper: the same construction on the reversed score -V, giving [0, t_hi].
enum class ScoreSide { Lower, Upper };

/// Band construction for many test points against one training/calibration split.
class Wcci {
 public:
  Wcci(const Predictor& g, WeightFunction w, const SurvivalDataset& ds, const IndexSet& train, const IndexSet& cal,
       CandidateGrid grid);
  /// From stored artifacts: `cal_x`/`cal_times` are the uncensored calibration subjects.
  Wcci(Predictor g, WeightFunction w, RiskSetScorer scorer, CandidateGrid grid,
       const std::vector<std::vector<double>>& cal_x, std::span<const double> cal_times);

  /// Conformal set {t in grid : score <= Q}, reported as its hull. Truncated at
  /// the grid ceiling when the set reaches it or Q is infinite.
  ConfidenceBand predict(std::span<const double> x, double alpha, ScoreSide side = ScoreSide::Lower) const;
  ConfidenceBand predict(double g_x, double test_weight, double alpha, ScoreSide side = ScoreSide::Lower) const;

  /// Calibrated threshold Q for a test point of weight `test_weight`.
  double threshold(double test_weight, double alpha, ScoreSide side = ScoreSide::Lower) const;

  const WcciCalibration& calibration() const { return calib_; }
  const CandidateGrid& grid() const { return grid_; }
  const RiskSetScorer& scorer() const { return scorer_; }
  const Predictor& predictor() const { return g_; }
  const WeightFunction& weight_function() const { return w_; }

 private:
  void build(const std::vector<std::vector<double>>& cal_x, std::span<const double> cal_times);

  Predictor g_;
  WeightFunction w_;
  RiskSetScorer scorer_;
  CandidateGrid grid_;
  std::vector<double> grid_log_risk_;
  WcciCalibration calib_;
  CalibratedQuantile lower_q_;
  CalibratedQuantile upper_q_;
};

/// Single-shot form of Wcci::predict.
ConfidenceBand wcci_predict(const Predictor& g, const WeightFunction& w, const SurvivalDataset& ds,
                            const IndexSet& train, const IndexSet& cal, std::span<const double> x_new, double alpha,
                            const CandidateGrid& grid);

// ---------------------------------------------------------------------------
// T-SCI: second-stage recalibration of a first-stage band
// ---------------------------------------------------------------------------

struct FirstStageBand {
  double q_lo = 0.0;
  double q_hi = kInf;
};

/// How the two-sided first-stage band is derived from WCCI.
///  Hull:  hull of the level-(1 - alpha) conformal set; unbounded above.
///  Split: lower end from the Lower side and upper end from the Upper side, each at alpha / 2.
enum class FirstStage { Hull, Split };

FirstStageBand first_stage_band(const Wcci& wcci, std::span<const double> x, double alpha, FirstStage mode);
FirstStageBand first_stage_band(const Wcci& wcci, double g_x, double test_weight, double alpha, FirstStage mode);

/// max(q_lo - t, t - q_hi): negative inside the band, zero on its boundary.
double second_stage_score(const FirstStageBand& b, double t);

/// Second-stage calibration data: boundary-distance scores and weights of the
/// uncensored subjects of the second calibration fold.
class TsciCalibration {
 public:
  TsciCalibration(std::span<const FirstStageBand> bands, std::span<const double> times,
                  std::span<const double> raw_weights);

  /// eta for a test point of weight `test_weight`; may be +inf.
  double eta(double test_weight, double alpha) const { return quantile_.quantile(1.0 - alpha, test_weight); }
  const std::vector<double>& scores() const { return scores_; }
  const CalibratedQuantile& quantile() const { return quantile_; }

 private:
  std::vector<double> scores_;
  CalibratedQuantile quantile_;
};

/// Builds the second-stage calibration from the second calibration fold.
TsciCalibration tsci_calibration(const Wcci& wcci, const SurvivalDataset& ds, const IndexSet& cal2, double alpha,
                                 FirstStage mode);
/// Same, from the uncensored second-fold subjects directly.
TsciCalibration tsci_calibration(const Wcci& wcci, const std::vector<std::vector<double>>& cal2_x,
                                 std::span<const double> cal2_times, double alpha, FirstStage mode);

/// eta for one test point, straight from per-subject first-stage bands.
double tsci_calibrate(std::span<const FirstStageBand> bands, std::span<const double> times,
                      std::span<const double> raw_weights, double test_weight, double alpha);

/// [max(q_lo - eta, 0), min(q_hi + eta, max_duration)], truncated when the upper clamp binds.
ConfidenceBand tsci_predict(const FirstStageBand& b, double eta, double max_duration);

}  // namespace survconf
