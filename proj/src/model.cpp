#include "survconf/model.hpp"

#include <fstream>
#include <numeric>
#include <stdexcept>

namespace survconf {

using nlohmann::json;

std::vector<double> SurvivalModel::to_model_space(std::span<const double> x) const {
  if (x.size() != feature_names.size())
    throw std::invalid_argument("expected " + std::to_string(feature_names.size()) + " covariates, got " +
                                std::to_string(x.size()));
  if (normalization) return normalization->apply(x);
  return {x.begin(), x.end()};
}

SurvivalModel fit_model(const SurvivalDataset& raw, const FoldSplit& split, const ModelOptions& opts) {
  if (split.train.empty()) throw std::invalid_argument("training fold is empty");
  const SurvivalDataset ds = opts.normalize ? normalize_features(raw, split.train) : raw;

  SurvivalModel m;
  m.feature_names = raw.feature_names();
  m.normalization = ds.normalization();
  json meta;
  if (opts.predictor == PredictorType::Linear) {
    auto fit = fit_linear(ds, split.train, opts.linear);
    m.predictor = fit.predictor;
    meta["predictor"] = {{"type", "linear"},
                         {"converged", fit.converged},
                         {"iterations", fit.iterations},
                         {"ridge", opts.linear.ridge}};
  } else {
    auto fit = fit_mlp(ds, split.train, opts.mlp);
    m.predictor = fit.predictor;
    meta["predictor"] = {{"type", "mlp"},
                         {"hidden_sizes", opts.mlp.hidden_sizes},
                         {"epochs", opts.mlp.epochs},
                         {"batch_size", opts.mlp.batch_size},
                         {"seed", opts.mlp.seed},
                         {"final_loss", fit.epoch_losses.empty() ? 0.0 : fit.epoch_losses.back()},
                         {"skipped_batches", fit.skipped_batches}};
  }

  const auto g = m.predictor.evaluate(ds);
  m.baseline = breslow(ds, split.train, g);
  for (auto i : split.train) m.train_time_g.emplace_back(ds[i].observed_time, g[i]);

  for (const auto* fold : {&split.train, &split.cal1, &split.cal2})
    for (auto i : *fold) m.max_duration = std::max(m.max_duration, ds[i].observed_time);
  m.grid = CandidateGrid::from_training(ds, split.train, m.max_duration);

  for (auto i : uncensored(ds, split.cal1)) {
    m.cal1_x.push_back(ds[i].covariates);
    m.cal1_times.push_back(ds[i].observed_time);
  }
  for (auto i : uncensored(ds, split.cal2)) {
    m.cal2_x.push_back(ds[i].covariates);
    m.cal2_times.push_back(ds[i].observed_time);
  }

  if (uncensored(ds, split.train).size() == split.train.size()) {
    // no censoring, so no covariate shift: w = 0.5 / sigmoid(0) = 1
    m.weight_model.coefficients = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ds.dim()));
    m.weight_model.w_min = opts.weights.w_min;
    m.weight_model.w_max = opts.weights.w_max;
    meta["weights_constant"] = true;
  } else {
    m.weight_model = fit_weight_model(ds, split.train, opts.weights);
  }
  if (opts.renormalize_weights) {
    const auto& pool = m.cal1_x.empty() ? m.cal2_x : m.cal1_x;
    if (!pool.empty()) m.weight_model = renormalize_mean_one(m.weight_model, pool);
  }
  meta["weights"] = {{"clip", opts.weights.clip}, {"renormalized", opts.renormalize_weights}};
  meta["n_train"] = split.train.size();
  meta["n_cal1"] = split.cal1.size();
  meta["n_cal2"] = split.cal2.size();
  m.metadata = std::move(meta);
  return m;
}

namespace {

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json predictor_json(const Predictor& p) {
  if (p.is_linear()) return {{"type", "linear"}, {"beta", to_vec(p.linear().beta)}};
  const auto& net = p.mlp();
  json layers = json::array();
  for (const auto& l : net.layers) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) rows.push_back(to_vec(l.weight.row(r).transpose()));
    layers.push_back({{"weight", rows}, {"bias", to_vec(l.bias)}});
  }
  return {{"type", "mlp"},
          {"layers", layers},
          {"dropout", net.dropout_rate},
          {"input_mean", to_vec(net.input_mean)},
          {"input_scale", to_vec(net.input_scale)}};
}

Predictor predictor_from_json(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "linear") return LinearPredictor{to_eigen(j.at("beta").get<std::vector<double>>())};
  if (type != "mlp") throw std::invalid_argument("unknown predictor type: " + type);
  MlpPredictor net;
  for (const auto& lj : j.at("layers")) {
    const auto rows = lj.at("weight").get<std::vector<std::vector<double>>>();
    const auto bias = lj.at("bias").get<std::vector<double>>();
    DenseLayer l;
    const auto cols = rows.empty() ? 0 : rows.front().size();
    l.weight.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != cols) throw std::invalid_argument("ragged weight matrix in model file");
      for (std::size_t c = 0; c < cols; ++c)
        l.weight(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    if (bias.size() != rows.size()) throw std::invalid_argument("bias length does not match layer width");
    l.bias = to_eigen(bias);
    net.layers.push_back(std::move(l));
  }
  net.dropout_rate = j.value("dropout", 0.0);
  net.input_mean = to_eigen(j.value("input_mean", std::vector<double>{}));
  net.input_scale = to_eigen(j.value("input_scale", std::vector<double>{}));
  return net;
}

}  // namespace

json to_json(const SurvivalModel& m) {
  json j;
  j["format"] = "survconf-model";
  j["version"] = SurvivalModel::kFormatVersion;
  j["feature_names"] = m.feature_names;
  if (m.normalization)
    j["normalization"] = {{"mean", m.normalization->mean}, {"scale", m.normalization->scale}};
  else
    j["normalization"] = nullptr;
  j["predictor"] = predictor_json(m.predictor);
  const auto& w = m.weight_model;
  j["weight_model"] = {{"coefficients", to_vec(w.coefficients)},
                       {"intercept", w.intercept},
                       {"marginal_event_rate", w.marginal_event_rate},
                       {"w_min", w.w_min},
                       {"w_max", w.w_max},
                       {"rescale", w.rescale}};
  j["baseline"] = {{"event_times", m.baseline.event_times}, {"cumulative", m.baseline.cumulative}};
  j["max_duration"] = m.max_duration;
  j["train_time_g"] = m.train_time_g;
  j["grid"] = m.grid.times;
  j["cal1"] = {{"x", m.cal1_x}, {"time", m.cal1_times}};
  j["cal2"] = {{"x", m.cal2_x}, {"time", m.cal2_times}};
  j["metadata"] = m.metadata;
  return j;
}

SurvivalModel model_from_json(const json& j) {
  if (j.value("format", "") != "survconf-model") throw std::invalid_argument("not a survconf model file");
  const int version = j.at("version").get<int>();
  if (version != SurvivalModel::kFormatVersion)
    throw std::invalid_argument("unsupported model version " + std::to_string(version));
  SurvivalModel m;
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  if (!j.at("normalization").is_null())
    m.normalization = Normalization{j["normalization"].at("mean").get<std::vector<double>>(),
                                    j["normalization"].at("scale").get<std::vector<double>>()};
  m.predictor = predictor_from_json(j.at("predictor"));
  const auto& w = j.at("weight_model");
  m.weight_model.coefficients = to_eigen(w.at("coefficients").get<std::vector<double>>());
  m.weight_model.intercept = w.at("intercept").get<double>();
  m.weight_model.marginal_event_rate = w.at("marginal_event_rate").get<double>();
  m.weight_model.w_min = w.at("w_min").get<double>();
  m.weight_model.w_max = w.at("w_max").get<double>();
  m.weight_model.rescale = w.value("rescale", 1.0);
  m.baseline.event_times = j.at("baseline").at("event_times").get<std::vector<double>>();
  m.baseline.cumulative = j.at("baseline").at("cumulative").get<std::vector<double>>();
  m.max_duration = j.at("max_duration").get<double>();
  m.train_time_g = j.at("train_time_g").get<std::vector<std::pair<double, double>>>();
  m.grid.times = j.at("grid").get<std::vector<double>>();
  m.cal1_x = j.at("cal1").at("x").get<std::vector<std::vector<double>>>();
  m.cal1_times = j.at("cal1").at("time").get<std::vector<double>>();
  m.cal2_x = j.at("cal2").at("x").get<std::vector<std::vector<double>>>();
  m.cal2_times = j.at("cal2").at("time").get<std::vector<double>>();
  m.metadata = j.value("metadata", json::object());
  return m;
}

void save_model(const std::string& path, const SurvivalModel& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_json(m).dump(1) << '\n';
}

SurvivalModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return model_from_json(json::parse(in));
}

BandEngine::BandEngine(const SurvivalModel& model, BandOptions opts, WeightFunction weight_override)
    : model_(model), opts_(opts) {
  if (weight_override) {
    weighted_ = std::move(weight_override);
  } else {
    weighted_ = [wm = model.weight_model](std::span<const double> x) { return wm(x); };
  }
  unit_ = [](std::span<const double>) { return 1.0; };
}

const Wcci& BandEngine::wcci(bool unit_weights) {
  auto& slot = wcci_[unit_weights ? 1 : 0];
  if (!slot) {
    const auto& cal_x = model_.cal1_x.empty() ? model_.cal2_x : model_.cal1_x;
    const auto& cal_t = model_.cal1_x.empty() ? model_.cal2_times : model_.cal1_times;
    slot.emplace(model_.predictor, weight_function(unit_weights), RiskSetScorer(model_.train_time_g), model_.grid,
                 cal_x, cal_t);
  }
  return *slot;
}

const TsciCalibration& BandEngine::tsci(bool unit_weights, double alpha) {
  const auto key = std::make_pair(unit_weights, alpha);
  auto it = tsci_.find(key);
  if (it == tsci_.end()) {
    if (model_.cal2_x.empty()) throw std::invalid_argument("T-SCI needs uncensored subjects in the second calibration fold");
    it = tsci_.emplace(key, tsci_calibration(wcci(unit_weights), model_.cal2_x, model_.cal2_times, alpha,
                                             opts_.first_stage))
             .first;
  }
  return it->second;
}

std::vector<ConfidenceBand> BandEngine::bands(Method method, double alpha, const std::vector<std::vector<double>>& xs) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  std::vector<ConfidenceBand> out;
  out.reserve(xs.size());
  if (method == Method::Naive) {
    for (const auto& x : xs) out.push_back(naive_band(model_.predictor(x), model_.baseline, alpha, model_.max_duration));
    return out;
  }
  const bool unit = method == Method::WcciUnweighted || method == Method::TsciUnweighted;
  const Wcci& w = wcci(unit);
  const auto& wf = weight_function(unit);
  if (method == Method::Wcci || method == Method::WcciUnweighted) {
    for (const auto& x : xs) out.push_back(w.predict(x, alpha));
    return out;
  }

  const auto& cal = tsci(unit, alpha);
  std::optional<double> shared;
  if (opts_.shared_eta && !xs.empty()) {
    double mean_w = 0.0;
    for (const auto& x : xs) mean_w += wf(x);
    shared = cal.eta(mean_w / static_cast<double>(xs.size()), alpha);
  }
  for (const auto& x : xs) {
    const double wx = wf(x);
    const auto fs = first_stage_band(w, w.predictor()(x), wx, alpha, opts_.first_stage);
    out.push_back(tsci_predict(fs, shared ? *shared : cal.eta(wx, alpha), model_.max_duration));
  }
  return out;
}

}  // namespace survconf
