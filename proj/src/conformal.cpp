#include "survconf/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace survconf {

namespace {

// Slack on the cumulative-probability comparison so that exact ties such as
// k / (n + 1) == 1 - alpha survive floating-point summation.
constexpr double kLevelSlack = 1e-12;

double log_add(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
}

}  // namespace

double score_partial(const Predictor& g, const IndexSet& train_pool, const SurvivalDataset& ds,
                     std::span<const double> x, double t) {
  const double gx = g(x);
  double lse = -kInf;
  for (auto k : train_pool)
    if (ds[k].observed_time >= t) lse = log_add(lse, g(ds[k].covariates) - gx);
  return lse;
}

namespace {

std::vector<std::pair<double, double>> training_pairs(std::span<const double> g, const SurvivalDataset& ds,
                                                      const IndexSet& train) {
  std::vector<std::pair<double, double>> tg;
  tg.reserve(train.size());
  for (auto k : train) tg.emplace_back(ds[k].observed_time, g[k]);
  return tg;
}

}  // namespace

RiskSetScorer::RiskSetScorer(std::span<const double> g, const SurvivalDataset& ds, const IndexSet& train)
    : RiskSetScorer(training_pairs(g, ds, train)) {}

RiskSetScorer::RiskSetScorer(std::vector<std::pair<double, double>> time_g) {
  std::sort(time_g.begin(), time_g.end());
  times_.resize(time_g.size());
  suffix_lse_.resize(time_g.size());
  double acc = -kInf;
  for (std::size_t i = time_g.size(); i-- > 0;) {
    acc = log_add(acc, time_g[i].second);
    times_[i] = time_g[i].first;
    suffix_lse_[i] = acc;
  }
}

double RiskSetScorer::log_risk_sum(double t) const {
  auto it = std::lower_bound(times_.begin(), times_.end(), t);
  if (it == times_.end()) return -kInf;
  return suffix_lse_[static_cast<std::size_t>(it - times_.begin())];
}

double weighted_quantile(const WeightedScoreDistribution& dist, double level) {
  auto atoms = dist.atoms;
  std::sort(atoms.begin(), atoms.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double cum = 0.0;
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    cum += atoms[i].second;
    // merge ties before testing the CDF
    if (i + 1 < atoms.size() && atoms[i + 1].first == atoms[i].first) continue;
    if (cum >= level - kLevelSlack) return atoms[i].first;
  }
  return kInf;
}

CalibratedQuantile::CalibratedQuantile(std::span<const double> scores, std::span<const double> raw_weights) {
  if (scores.size() != raw_weights.size()) throw std::invalid_argument("scores and weights differ in length");
  std::vector<std::size_t> ord(scores.size());
  std::iota(ord.begin(), ord.end(), std::size_t{0});
  std::stable_sort(ord.begin(), ord.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  sorted_.reserve(ord.size());
  cumulative_.reserve(ord.size());
  for (auto i : ord) {
    if (!(raw_weights[i] > 0.0)) throw std::invalid_argument("calibration weights must be positive");
    total_ += raw_weights[i];
    sorted_.push_back(scores[i]);
    cumulative_.push_back(total_);
  }
}

double CalibratedQuantile::quantile(double level, double test_weight) const {
  if (!(test_weight > 0.0)) throw std::invalid_argument("test weight must be positive");
  const double denom = total_ + test_weight;
  // first index whose (tie-merged) cumulative probability reaches level
  auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), level,
                             [denom](double c, double lv) { return c / denom < lv - kLevelSlack; });
  if (it == cumulative_.end()) return kInf;
  return sorted_[static_cast<std::size_t>(it - cumulative_.begin())];
}

WeightedScoreDistribution CalibratedQuantile::distribution(double test_weight) const {
  WeightedScoreDistribution d;
  const double denom = total_ + test_weight;
  double prev = 0.0;
  for (std::size_t i = 0; i < sorted_.size(); ++i) {
    d.atoms.emplace_back(sorted_[i], (cumulative_[i] - prev) / denom);
    prev = cumulative_[i];
  }
  d.infinity_mass = test_weight / denom;
  return d;
}

CandidateGrid CandidateGrid::from_training(const SurvivalDataset& ds, const IndexSet& train, double max_duration) {
  if (!(max_duration > 0.0)) throw std::invalid_argument("max_duration must be positive");
  CandidateGrid grid;
  grid.times.push_back(0.0);
  for (auto k : train) {
    const double t = ds[k].observed_time;
    if (t > 0.0 && t < max_duration) grid.times.push_back(t);
  }
  grid.times.push_back(max_duration);
  std::sort(grid.times.begin(), grid.times.end());
  grid.times.erase(std::unique(grid.times.begin(), grid.times.end()), grid.times.end());
  return grid;
}

WcciCalibration wcci_calibrate(const Predictor& g, const WeightFunction& w, const SurvivalDataset& ds,
                               const IndexSet& train, const IndexSet& cal) {
  const auto gv = g.evaluate(ds);
  const RiskSetScorer scorer(gv, ds, train);
  WcciCalibration out;
  for (auto i : cal) {
    if (!ds[i].event) continue;
    out.scores.push_back(scorer.score(gv[i], ds[i].observed_time));
    out.raw_weights.push_back(w(ds[i].covariates));
    out.subjects.push_back(i);
  }
  if (out.subjects.empty()) throw std::invalid_argument("calibration fold has no uncensored subjects");
  return out;
}

Wcci::Wcci(const Predictor& g, WeightFunction w, const SurvivalDataset& ds, const IndexSet& train,
           const IndexSet& cal, CandidateGrid grid)
    : g_(g), w_(std::move(w)), grid_(std::move(grid)) {
  const auto gv = g.evaluate(ds);
  scorer_ = RiskSetScorer(gv, ds, train);
  std::vector<std::vector<double>> cal_x;
  std::vector<double> cal_times;
  for (auto i : cal) {
    if (!ds[i].event) continue;
    cal_x.push_back(ds[i].covariates);
    cal_times.push_back(ds[i].observed_time);
    calib_.subjects.push_back(i);
  }
  build(cal_x, cal_times);
}

Wcci::Wcci(Predictor g, WeightFunction w, RiskSetScorer scorer, CandidateGrid grid,
           const std::vector<std::vector<double>>& cal_x, std::span<const double> cal_times)
    : g_(std::move(g)), w_(std::move(w)), scorer_(std::move(scorer)), grid_(std::move(grid)) {
  build(cal_x, cal_times);
}

void Wcci::build(const std::vector<std::vector<double>>& cal_x, std::span<const double> cal_times) {
  if (grid_.times.empty()) throw std::invalid_argument("candidate grid is empty");
  if (cal_x.empty()) throw std::invalid_argument("calibration fold has no uncensored subjects");
  if (cal_x.size() != cal_times.size()) throw std::invalid_argument("calibration covariates and times differ in length");
  grid_log_risk_.reserve(grid_.times.size());
  for (double t : grid_.times) grid_log_risk_.push_back(scorer_.log_risk_sum(t));
  for (std::size_t i = 0; i < cal_x.size(); ++i) {
    calib_.scores.push_back(scorer_.score(g_(cal_x[i]), cal_times[i]));
    calib_.raw_weights.push_back(w_(cal_x[i]));
  }
  lower_q_ = CalibratedQuantile(calib_.scores, calib_.raw_weights);
  std::vector<double> reversed(calib_.scores.size());
  std::transform(calib_.scores.begin(), calib_.scores.end(), reversed.begin(), [](double v) { return -v; });
  upper_q_ = CalibratedQuantile(reversed, calib_.raw_weights);
}

double Wcci::threshold(double test_weight, double alpha, ScoreSide side) const {
  check_alpha(alpha);
  return (side == ScoreSide::Lower ? lower_q_ : upper_q_).quantile(1.0 - alpha, test_weight);
}

ConfidenceBand Wcci::predict(std::span<const double> x, double alpha, ScoreSide side) const {
  return predict(g_(x), w_(x), alpha, side);
}

ConfidenceBand Wcci::predict(double g_x, double test_weight, double alpha, ScoreSide side) const {
  const double q = threshold(test_weight, alpha, side);
  const double ceiling = grid_.max_duration();
  if (q == kInf) return {0.0, ceiling, true, ceiling};

  const double sign = side == ScoreSide::Lower ? 1.0 : -1.0;
  std::size_t first = grid_.times.size(), last = 0, best = 0;
  double best_score = kInf;
  for (std::size_t i = 0; i < grid_.times.size(); ++i) {
    const double v = sign * (grid_log_risk_[i] - g_x);
    if (v < best_score) {
      best_score = v;
      best = i;
    }
    if (v <= q) {
      first = std::min(first, i);
      last = i;
    }
  }
  if (first == grid_.times.size()) {
    spdlog::warn("empty conformal set; returning the point band at the most conforming grid time");
    return {grid_.times[best], grid_.times[best], false, ceiling};
  }
  if (last + 1 == grid_.times.size()) return {grid_.times[first], ceiling, true, ceiling};
  return {grid_.times[first], grid_.times[last], false, ceiling};
}

ConfidenceBand wcci_predict(const Predictor& g, const WeightFunction& w, const SurvivalDataset& ds,
                            const IndexSet& train, const IndexSet& cal, std::span<const double> x_new, double alpha,
                            const CandidateGrid& grid) {
  const Wcci wcci(g, w, ds, train, cal, grid);
  return wcci.predict(x_new, alpha);
}

FirstStageBand first_stage_band(const Wcci& wcci, double g_x, double test_weight, double alpha, FirstStage mode) {
  auto upper_of = [](const ConfidenceBand& b) { return b.truncated ? kInf : b.upper; };
  if (mode == FirstStage::Hull) {
    const auto b = wcci.predict(g_x, test_weight, alpha, ScoreSide::Lower);
    return {b.lower, upper_of(b)};
  }
  const auto lo = wcci.predict(g_x, test_weight, alpha / 2.0, ScoreSide::Lower);
  const auto hi = wcci.predict(g_x, test_weight, alpha / 2.0, ScoreSide::Upper);
  FirstStageBand b{lo.lower, upper_of(hi)};
  if (b.q_lo > b.q_hi) {
    const double mid = 0.5 * (b.q_lo + b.q_hi);
    b = {mid, mid};
  }
  return b;
}

FirstStageBand first_stage_band(const Wcci& wcci, std::span<const double> x, double alpha, FirstStage mode) {
  return first_stage_band(wcci, wcci.predictor()(x), wcci.weight_function()(x), alpha, mode);
}

double second_stage_score(const FirstStageBand& b, double t) { return std::max(b.q_lo - t, t - b.q_hi); }

TsciCalibration::TsciCalibration(std::span<const FirstStageBand> bands, std::span<const double> times,
                                 std::span<const double> raw_weights) {
  if (bands.size() != times.size() || bands.size() != raw_weights.size())
    throw std::invalid_argument("second-stage inputs differ in length");
  if (bands.empty()) throw std::invalid_argument("second calibration fold has no uncensored subjects");
  scores_.reserve(bands.size());
  for (std::size_t i = 0; i < bands.size(); ++i) scores_.push_back(second_stage_score(bands[i], times[i]));
  quantile_ = CalibratedQuantile(scores_, raw_weights);
}

TsciCalibration tsci_calibration(const Wcci& wcci, const std::vector<std::vector<double>>& cal2_x,
                                 std::span<const double> cal2_times, double alpha, FirstStage mode) {
  std::vector<FirstStageBand> bands;
  std::vector<double> weights;
  for (const auto& x : cal2_x) {
    const double w = wcci.weight_function()(x);
    bands.push_back(first_stage_band(wcci, wcci.predictor()(x), w, alpha, mode));
    weights.push_back(w);
  }
  return TsciCalibration(bands, cal2_times, weights);
}

TsciCalibration tsci_calibration(const Wcci& wcci, const SurvivalDataset& ds, const IndexSet& cal2, double alpha,
                                 FirstStage mode) {
  std::vector<std::vector<double>> xs;
  std::vector<double> times;
  for (auto i : uncensored(ds, cal2)) {
    xs.push_back(ds[i].covariates);
    times.push_back(ds[i].observed_time);
  }
  return tsci_calibration(wcci, xs, times, alpha, mode);
}

double tsci_calibrate(std::span<const FirstStageBand> bands, std::span<const double> times,
                      std::span<const double> raw_weights, double test_weight, double alpha) {
  check_alpha(alpha);
  return TsciCalibration(bands, times, raw_weights).eta(test_weight, alpha);
}

ConfidenceBand tsci_predict(const FirstStageBand& b, double eta, double max_duration) {
  if (b.q_lo > b.q_hi) throw std::invalid_argument("first-stage band has q_lo > q_hi");
  if (eta == kInf) return {0.0, max_duration, true, max_duration};
  const double lower = std::max(b.q_lo - eta, 0.0);
  const double upper = b.q_hi + eta;
  if (lower > upper) {
    spdlog::warn("negative eta collapsed the band; returning its midpoint");
    const double mid = std::clamp(0.5 * (b.q_lo + b.q_hi), 0.0, max_duration);
    return {mid, mid, false, max_duration};
  }
  if (upper > max_duration) return {std::min(lower, max_duration), max_duration, true, max_duration};
  return {lower, upper, false, max_duration};
}

}  // namespace survconf
