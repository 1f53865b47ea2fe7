#include "survconf/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace survconf {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError(fmt::format("unknown key \"{}\" in {}", k, where));
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

SynthConfig parse_synth(const json& j) {
  check_keys(j, "data.synth",
             {"n", "dim", "kind", "beta", "nonlinear_coef", "baseline_shape", "censor_intercept", "censor_coef",
              "mechanism", "seed"});
  SynthConfig s;
  read(j, "n", s.n);
  read(j, "dim", s.dim);
  if (j.contains("kind")) {
    const auto k = j["kind"].get<std::string>();
    if (k == "linear")
      s.kind = PredictorKind::Linear;
    else if (k == "nonlinear")
      s.kind = PredictorKind::Nonlinear;
    else
      throw ConfigError("data.synth.kind must be linear or nonlinear");
  }
  read(j, "beta", s.beta);
  if (j.contains("nonlinear_coef")) {
    const auto c = j["nonlinear_coef"].get<std::vector<double>>();
    if (c.size() != 3) throw ConfigError("data.synth.nonlinear_coef needs three values");
    std::copy(c.begin(), c.end(), s.nonlinear_coef.begin());
  }
  read(j, "baseline_shape", s.baseline_shape);
  read(j, "censor_intercept", s.censor_intercept);
  read(j, "censor_coef", s.censor_coef);
  if (j.contains("mechanism")) {
    const auto m = j["mechanism"].get<std::string>();
    if (m == "ignorable")
      s.mechanism = CensoringMechanism::Ignorable;
    else if (m == "independent")
      s.mechanism = CensoringMechanism::Independent;
    else
      throw ConfigError("data.synth.mechanism must be ignorable or independent");
  }
  read(j, "seed", s.seed);
  return s;
}

void parse_predictor(const json& j, ModelOptions& m) {
  check_keys(j, "predictor",
             {"type", "ridge", "max_iter", "tol", "preset", "hidden_sizes", "dropout", "learning_rate", "batch_size",
              "epochs", "weight_penalty", "standardize_inputs"});
  const auto type = j.value("type", std::string("linear"));
  if (type == "linear") {
    m.predictor = PredictorType::Linear;
  } else if (type == "mlp") {
    m.predictor = PredictorType::Mlp;
  } else {
    throw ConfigError("predictor.type must be linear or mlp");
  }
  read(j, "ridge", m.linear.ridge);
  read(j, "max_iter", m.linear.max_iter);
  read(j, "tol", m.linear.tol);
  const auto preset = j.value("preset", std::string("desk"));
  if (preset == "full")
    m.mlp = MlpOptions::full();
  else if (preset != "desk")
    throw ConfigError("predictor.preset must be desk or full");
  read(j, "hidden_sizes", m.mlp.hidden_sizes);
  read(j, "dropout", m.mlp.dropout);
  read(j, "learning_rate", m.mlp.learning_rate);
  read(j, "batch_size", m.mlp.batch_size);
  read(j, "epochs", m.mlp.epochs);
  read(j, "weight_penalty", m.mlp.weight_penalty);
  read(j, "standardize_inputs", m.mlp.standardize_inputs);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (csv_path.has_value() == synth.has_value()) throw ConfigError("data needs exactly one of csv or synth");
  if (methods.empty()) throw ConfigError("methods must be nonempty");
  if (alphas.empty()) throw ConfigError("alphas must be nonempty");
  for (double a : alphas)
    if (!(a > 0.0 && a < 1.0)) throw ConfigError(fmt::format("alpha {} outside (0, 1)", a));
  if (replications <= 0) throw ConfigError("replications must be positive");
  if (threads <= 0) throw ConfigError("threads must be positive");
  const double sum = fractions.train + fractions.cal1 + fractions.cal2 + fractions.test;
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("fractions must sum to 1");
  if (fractions.test <= 0.0) throw ConfigError("test fraction must be positive");
  for (auto m : methods) {
    if ((m == Method::Tsci || m == Method::TsciUnweighted) && (fractions.cal1 <= 0.0 || fractions.cal2 <= 0.0))
      throw ConfigError("T-SCI methods need both calibration folds");
    if ((m == Method::Wcci || m == Method::WcciUnweighted) && fractions.cal1 <= 0.0 && fractions.cal2 <= 0.0)
      throw ConfigError("WCCI methods need a calibration fold");
  }
  if (oracle_weights && !synth) throw ConfigError("oracle weights need synthetic data");
  if (synth) {
    try {
      synth->validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (kernel.enabled && (kernel.n_centers == 0 || kernel.n_per_center == 0))
    throw ConfigError("kernel protocol needs positive center and sample counts");
}

ExperimentConfig parse_config(const json& j) {
  check_keys(j, "config",
             {"data", "fractions", "methods", "alphas", "replications", "master_seed", "predictor", "weights",
              "normalize", "t_sci", "kernel", "threads", "output"});
  ExperimentConfig c;
  try {
    const auto& d = j.at("data");
    check_keys(d, "data", {"csv", "time_col", "event_col", "features", "true_time_col", "synth"});
    if (d.contains("csv")) c.csv_path = d["csv"].get<std::string>();
    read(d, "time_col", c.schema.time_col);
    read(d, "event_col", c.schema.event_col);
    read(d, "features", c.schema.feature_cols);
    if (d.contains("true_time_col")) c.schema.true_time_col = d["true_time_col"].get<std::string>();
    if (d.contains("synth")) c.synth = parse_synth(d["synth"]);

    if (j.contains("fractions")) {
      const auto& f = j["fractions"];
      check_keys(f, "fractions", {"train", "cal1", "cal2", "test"});
      read(f, "train", c.fractions.train);
      read(f, "cal1", c.fractions.cal1);
      read(f, "cal2", c.fractions.cal2);
      read(f, "test", c.fractions.test);
    }
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j["methods"]) c.methods.push_back(parse_method(m.get<std::string>()));
    }
    read(j, "alphas", c.alphas);
    read(j, "replications", c.replications);
    read(j, "master_seed", c.master_seed);
    if (j.contains("predictor")) parse_predictor(j["predictor"], c.model);
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      check_keys(w, "weights", {"clip", "w_min", "w_max", "ridge", "max_iter", "renormalize", "oracle"});
      read(w, "clip", c.model.weights.clip);
      read(w, "w_min", c.model.weights.w_min);
      read(w, "w_max", c.model.weights.w_max);
      read(w, "ridge", c.model.weights.ridge);
      read(w, "max_iter", c.model.weights.max_iter);
      read(w, "renormalize", c.model.renormalize_weights);
      read(w, "oracle", c.oracle_weights);
    }
    read(j, "normalize", c.model.normalize);
    if (j.contains("t_sci")) {
      const auto& t = j["t_sci"];
      check_keys(t, "t_sci", {"first_stage", "shared_eta"});
      const auto fs = t.value("first_stage", std::string("split"));
      if (fs == "split")
        c.bands.first_stage = FirstStage::Split;
      else if (fs == "hull")
        c.bands.first_stage = FirstStage::Hull;
      else
        throw ConfigError("t_sci.first_stage must be split or hull");
      read(t, "shared_eta", c.bands.shared_eta);
    }
    if (j.contains("kernel")) {
      const auto& k = j["kernel"];
      check_keys(k, "kernel", {"enabled", "n_centers", "n_per_center", "bandwidth"});
      read(k, "enabled", c.kernel.enabled);
      read(k, "n_centers", c.kernel.n_centers);
      read(k, "n_per_center", c.kernel.n_per_center);
      if (k.contains("bandwidth") && !k["bandwidth"].is_null()) c.kernel.bandwidth = k["bandwidth"].get<double>();
    }
    read(j, "threads", c.threads);
    if (j.contains("output")) {
      const auto& o = j["output"];
      check_keys(o, "output", {"results_csv", "summary_json"});
      read(o, "results_csv", c.results_csv);
      read(o, "summary_json", c.summary_json);
    }
  } catch (const json::exception& e) {
    throw ConfigError(e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return parse_config(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError(e.what());
  }
}

ReplicationSeeds replication_seeds(std::uint64_t master_seed, int replication) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(replication)};
  std::uint32_t v[8];
  seq.generate(v, v + 8);
  auto join = [&](int i) { return (static_cast<std::uint64_t>(v[2 * i]) << 32) | v[2 * i + 1]; };
  return {join(0), join(1), join(2), join(3)};
}

std::vector<ResultRow> run_replication(const ExperimentConfig& cfg, const SurvivalDataset* fixed_data,
                                       const OracleWeight* oracle, int replication) {
  const auto seeds = replication_seeds(cfg.master_seed, replication);
  SurvivalDataset generated;
  if (!fixed_data) {
    auto s = *cfg.synth;
    s.seed = seeds.data;
    generated = generate(s);
  }
  const SurvivalDataset& raw = fixed_data ? *fixed_data : generated;
  const auto split = split_dataset(raw, cfg.fractions, seeds.split);

  auto opts = cfg.model;
  opts.mlp.seed = seeds.model;
  const auto model = fit_model(raw, split, opts);

  WeightFunction override_w;
  if (cfg.oracle_weights) {
    if (!oracle) throw std::invalid_argument("oracle weights requested without an oracle");
    override_w = [oracle, &model](std::span<const double> z) {
      return model.normalization ? (*oracle)(model.normalization->invert(z)) : (*oracle)(z);
    };
  }
  BandEngine engine(model, cfg.bands, override_w);

  std::vector<std::vector<double>> xs;
  for (auto i : split.test) xs.push_back(model.to_model_space(raw[i].covariates));
  const bool use_ec =
      std::all_of(split.test.begin(), split.test.end(), [&](auto i) { return raw[i].true_time.has_value(); });

  std::vector<ResultRow> rows;
  for (auto method : cfg.methods)
    for (double alpha : cfg.alphas) {
      const auto bands = engine.bands(method, alpha, xs);
      const auto sec = surrogate_empirical_coverage(bands, raw, split.test);
      const auto rep = use_ec ? empirical_coverage(bands, raw, split.test) : sec;
      ResultRow row;
      row.method = method;
      row.alpha = alpha;
      row.replication = replication;
      row.coverage_total = rep.coverage_total;
      row.coverage_censored = rep.coverage_censored;
      row.coverage_uncensored = rep.coverage_uncensored;
      row.mean_length = rep.mean_length;
      row.sd_length = rep.sd_length;
      row.truncated_fraction = rep.truncated_fraction;
      row.sec_total = sec.coverage_total;
      if (cfg.kernel.enabled) {
        std::map<std::size_t, std::size_t> pos;
        for (std::size_t k = 0; k < split.test.size(); ++k) pos[split.test[k]] = k;
        const auto kr = kernel_local_protocol([&](std::size_t i) { return bands[pos.at(i)]; }, raw, split.test,
                                              cfg.kernel.n_centers, cfg.kernel.n_per_center, cfg.kernel.bandwidth,
                                              seeds.kernel);
        row.kernel_coverage = kr.pooled_mean;
      }
      rows.push_back(row);
    }
  return rows;
}

namespace {

bool row_less(const ResultRow& a, const ResultRow& b) {
  return std::tie(a.method, a.alpha, a.replication) < std::tie(b.method, b.alpha, b.replication);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::optional<SurvivalDataset> data;
  if (cfg.csv_path) {
    try {
      data = load_csv(*cfg.csv_path, cfg.schema);
    } catch (const std::exception& e) {
      throw DataError(e.what());
    }
  }
  std::optional<OracleWeight> oracle;
  if (cfg.oracle_weights) oracle.emplace(*cfg.synth);

  const auto reps = static_cast<std::size_t>(cfg.replications);
  std::vector<std::vector<ResultRow>> per_rep(reps);
  std::vector<std::optional<std::string>> errors(reps);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t r = next++; r < reps; r = next++) {
      try {
        per_rep[r] = run_replication(cfg, data ? &*data : nullptr, oracle ? &*oracle : nullptr, static_cast<int>(r));
      } catch (const std::exception& e) {
        errors[r] = e.what();
        spdlog::error("replication {} failed: {}", r, e.what());
      }
    }
  };
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), reps);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  ExperimentResult out;
  out.metric = (cfg.synth || (data && data->has_true_times())) ? MetricKind::EC : MetricKind::SEC;
  for (std::size_t r = 0; r < reps; ++r) {
    if (errors[r]) out.failures.push_back({static_cast<int>(r), *errors[r]});
    for (auto& row : per_rep[r]) out.rows.push_back(std::move(row));
  }
  std::sort(out.rows.begin(), out.rows.end(), row_less);
  return out;
}

bool excessive_failures(const ExperimentResult& r, int replications) {
  return 5 * static_cast<long>(r.failures.size()) > static_cast<long>(replications);
}

namespace {

constexpr const char* kHeader =
    "method,alpha,replication,coverage_total,coverage_censored,coverage_uncensored,mean_length,sd_length,"
    "truncated_fraction";

std::string num(double v) { return fmt::format("{}", v); }
std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

std::optional<double> opt_num(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

}  // namespace

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << kHeader << '\n';
  for (const auto& r : rows)
    out << to_string(r.method) << ',' << num(r.alpha) << ',' << r.replication << ',' << num(r.coverage_total) << ','
        << num(r.coverage_censored) << ',' << num(r.coverage_uncensored) << ',' << num(r.mean_length) << ','
        << num(r.sd_length) << ',' << num(r.truncated_fraction) << '\n';
}

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_results_csv(out, rows);
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("results file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) throw ParseError("unexpected results header: " + line);
  std::vector<ResultRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 9) throw ParseError(fmt::format("row {}: expected 9 fields, got {}", lineno - 1, f.size()));
    try {
      ResultRow r;
      r.method = parse_method(f[0]);
      r.alpha = std::stod(f[1]);
      r.replication = std::stoi(f[2]);
      r.coverage_total = opt_num(f[3]);
      r.coverage_censored = opt_num(f[4]);
      r.coverage_uncensored = opt_num(f[5]);
      r.mean_length = std::stod(f[6]);
      r.sd_length = std::stod(f[7]);
      r.truncated_fraction = std::stod(f[8]);
      rows.push_back(r);
    } catch (const std::exception& e) {
      throw ParseError(fmt::format("row {}: {}", lineno - 1, e.what()));
    }
  }
  return rows;
}

std::vector<ResultRow> read_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_results_csv(in);
}

namespace {

template <class Get>
MetricSummary summarize_metric(const std::vector<const ResultRow*>& rows, Get get) {
  std::vector<double> v;
  for (const auto* r : rows) {
    const std::optional<double> x = get(*r);
    if (x) v.push_back(*x);
  }
  MetricSummary s;
  s.n = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

json metric_json(const MetricSummary& m) {
  if (m.n == 0) return nullptr;
  return {{"mean", m.mean}, {"sd", m.sd}, {"n", m.n}};
}

}  // namespace

std::vector<SummaryEntry> summarize(const std::vector<ResultRow>& rows) {
  std::map<std::pair<Method, double>, std::vector<const ResultRow*>> groups;
  for (const auto& r : rows) groups[{r.method, r.alpha}].push_back(&r);
  std::vector<SummaryEntry> out;
  for (const auto& [key, g] : groups) {
    SummaryEntry e;
    e.method = key.first;
    e.alpha = key.second;
    e.replications = g.size();
    e.coverage_total = summarize_metric(g, [](const ResultRow& r) { return r.coverage_total; });
    e.coverage_censored = summarize_metric(g, [](const ResultRow& r) { return r.coverage_censored; });
    e.coverage_uncensored = summarize_metric(g, [](const ResultRow& r) { return r.coverage_uncensored; });
    e.mean_length = summarize_metric(g, [](const ResultRow& r) { return std::optional<double>(r.mean_length); });
    e.truncated_fraction =
        summarize_metric(g, [](const ResultRow& r) { return std::optional<double>(r.truncated_fraction); });
    e.sec_total = summarize_metric(g, [](const ResultRow& r) { return r.sec_total; });
    e.kernel_coverage = summarize_metric(g, [](const ResultRow& r) { return r.kernel_coverage; });
    out.push_back(e);
  }
  return out;
}

json summary_json(const std::vector<SummaryEntry>& s, const ExperimentResult* result) {
  json j;
  json entries = json::array();
  for (const auto& e : s)
    entries.push_back({{"method", to_string(e.method)},
                       {"alpha", e.alpha},
                       {"replications", e.replications},
                       {"coverage_total", metric_json(e.coverage_total)},
                       {"coverage_censored", metric_json(e.coverage_censored)},
                       {"coverage_uncensored", metric_json(e.coverage_uncensored)},
                       {"mean_length", metric_json(e.mean_length)},
                       {"truncated_fraction", metric_json(e.truncated_fraction)},
                       {"sec_total", metric_json(e.sec_total)},
                       {"kernel_coverage", metric_json(e.kernel_coverage)}});
  j["results"] = entries;
  if (result) {
    j["metric"] = result->metric == MetricKind::EC ? "EC" : "SEC";
    json f = json::array();
    for (const auto& x : result->failures) f.push_back({{"replication", x.replication}, {"error", x.message}});
    j["failures"] = f;
  }
  return j;
}

std::string format_report(const std::vector<SummaryEntry>& s) {
  auto cell = [](const MetricSummary& m) {
    return m.n == 0 ? std::string("-") : fmt::format("{:.3f} ± {:.3f}", m.mean, m.sd);
  };
  std::string out = fmt::format("{:<16} {:>6} {:>5}  {:<15} {:<15} {:<15} {:<17} {:<15}\n", "method", "alpha", "reps",
                                "total", "censored", "uncensored", "length", "truncated");
  for (const auto& e : s)
    out += fmt::format("{:<16} {:>6} {:>5}  {:<15} {:<15} {:<15} {:<17} {:<15}\n", to_string(e.method), e.alpha,
                       e.replications, cell(e.coverage_total), cell(e.coverage_censored),
                       cell(e.coverage_uncensored), cell(e.mean_length), cell(e.truncated_fraction));
  return out;
}

}  // namespace survconf
