// survconf: conformal confidence bands for censored survival times.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "survconf/experiment.hpp"
#include "survconf/model.hpp"
#include "survconf/synth.hpp"

using namespace survconf;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kDataError = 2;
constexpr int kTooManyFailures = 3;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

Fractions parse_fractions(const std::string& s) {
  const auto parts = split_list(s);
  if (parts.size() != 4) throw CLI::ValidationError("--fractions", "expected train,cal1,cal2,test");
  return {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2]), std::stod(parts[3])};
}

struct SynthArgs {
  std::string out;
  std::size_t n = 2000;
  std::size_t dim = 5;
  std::string kind = "linear";
  std::string mechanism = "ignorable";
  std::optional<double> censor_intercept;
  std::optional<double> censoring_fraction;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  SynthConfig cfg;
  cfg.n = a.n;
  cfg.dim = a.dim;
  cfg.kind = a.kind == "nonlinear" ? PredictorKind::Nonlinear : PredictorKind::Linear;
  cfg.mechanism = a.mechanism == "independent" ? CensoringMechanism::Independent : CensoringMechanism::Ignorable;
  if (cfg.beta.size() > cfg.dim) cfg.beta.resize(cfg.dim);
  if (cfg.censor_coef.size() > cfg.dim) cfg.censor_coef.resize(cfg.dim);
  if (a.censor_intercept) cfg.censor_intercept = *a.censor_intercept;
  if (a.censoring_fraction) cfg.censor_intercept = calibrate_censor_intercept(cfg, *a.censoring_fraction);
  cfg.seed = a.seed;
  const auto ds = generate(cfg);
  write_csv(a.out, ds);
  std::size_t events = 0;
  for (const auto& s : ds.subjects()) events += s.event ? 1 : 0;
  spdlog::info("wrote {} subjects ({} censored) to {}", ds.size(), ds.size() - events, a.out);
  return kOk;
}

struct DataArgs {
  std::string path;
  std::string time_col = "time";
  std::string event_col = "event";
  std::string features;
  std::string true_time_col;

  CsvSchema schema() const {
    CsvSchema s;
    s.time_col = time_col;
    s.event_col = event_col;
    s.feature_cols = split_list(features);
    if (!true_time_col.empty()) s.true_time_col = true_time_col;
    return s;
  }
};

struct FitArgs {
  DataArgs data;
  std::string out;
  std::string predictor = "linear";
  bool full_mlp = false;
  std::optional<int> epochs;
  std::string fractions = "0.8,0.1,0.1,0";
  std::uint64_t seed = 0;
  bool no_clip = false;
  double ridge = 1e-6;
};

int cmd_fit(const FitArgs& a) {
  SurvivalDataset ds;
  try {
    ds = load_csv(a.data.path, a.data.schema());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  }
  ModelOptions opts;
  opts.predictor = a.predictor == "mlp" ? PredictorType::Mlp : PredictorType::Linear;
  if (a.full_mlp) opts.mlp = MlpOptions::full();
  if (a.epochs) opts.mlp.epochs = *a.epochs;
  opts.mlp.seed = a.seed;
  opts.linear.ridge = a.ridge;
  opts.weights.clip = !a.no_clip;
  const auto split = split_dataset(ds, parse_fractions(a.fractions), a.seed);
  const auto model = fit_model(ds, split, opts);
  save_model(a.out, model);
  spdlog::info("model written to {}", a.out);
  return kOk;
}

struct BandArgs {
  std::string model;
  std::string in;
  std::string out;
  double alpha = 0.1;
  std::string method = "tsci";
  std::string first_stage = "split";
  bool shared_eta = false;
};

int cmd_band(const BandArgs& a) {
  SurvivalModel model;
  std::vector<std::vector<double>> queries;
  try {
    model = load_model(a.model);
    queries = load_covariates_csv(a.in, model.feature_names);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  }
  BandOptions opts;
  opts.first_stage = a.first_stage == "hull" ? FirstStage::Hull : FirstStage::Split;
  opts.shared_eta = a.shared_eta;
  BandEngine engine(model, opts);
  std::vector<std::vector<double>> xs;
  for (const auto& q : queries) xs.push_back(model.to_model_space(q));
  const auto method = parse_method(a.method);
  const auto bands = engine.bands(method, a.alpha, xs);

  std::ofstream file;
  if (a.out != "-") {
    file.open(a.out);
    if (!file) {
      spdlog::error("cannot write {}", a.out);
      return kDataError;
    }
  }
  std::ostream& out = a.out == "-" ? std::cout : file;
  out << "lower,upper,truncated,alpha,method\n";
  for (const auto& b : bands)
    out << fmt::format("{},{},{},{},{}\n", b.lower, b.upper, b.truncated ? 1 : 0, a.alpha,
                       to_string(method));
  return kOk;
}

struct ExperimentArgs {
  std::string config;
  bool dry_run = false;
  std::string results;
  std::string summary;
  std::optional<int> threads;
};

int cmd_experiment(const ExperimentArgs& a) {
  ExperimentConfig cfg;
  try {
    cfg = load_config(a.config);
  } catch (const ConfigError& e) {
    spdlog::error("invalid config: {}", e.what());
    return kUsage;
  }
  if (!a.results.empty()) cfg.results_csv = a.results;
  if (!a.summary.empty()) cfg.summary_json = a.summary;
  if (a.threads) cfg.threads = *a.threads;
  if (a.dry_run) {
    std::cout << "config ok: " << cfg.replications << " replications, " << cfg.methods.size() << " methods, "
              << cfg.alphas.size() << " alpha levels\n";
    return kOk;
  }

  ExperimentResult result;
  try {
    result = run_experiment(cfg);
  } catch (const DataError& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  }
  if (cfg.results_csv.empty() || cfg.results_csv == "-")
    write_results_csv(std::cout, result.rows);
  else
    write_results_csv(cfg.results_csv, result.rows);
  const auto summary = summarize(result.rows);
  if (!cfg.summary_json.empty()) {
    std::ofstream out(cfg.summary_json);
    out << summary_json(summary, &result).dump(2) << '\n';
  }
  if (excessive_failures(result, cfg.replications)) {
    spdlog::error("{} of {} replications failed", result.failures.size(), cfg.replications);
    return kTooManyFailures;
  }
  return kOk;
}

struct ReportArgs {
  std::vector<std::string> in;
  std::string json_out;
};

int cmd_report(const ReportArgs& a) {
  std::vector<ResultRow> rows;
  try {
    for (const auto& p : a.in) {
      auto r = read_results_csv(p);
      rows.insert(rows.end(), r.begin(), r.end());
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  }
  const auto summary = summarize(rows);
  std::cout << format_report(summary);
  if (!a.json_out.empty()) {
    std::ofstream out(a.json_out);
    out << summary_json(summary).dump(2) << '\n';
  }
  return kOk;
}

void add_data_flags(CLI::App* cmd, DataArgs& d) {
  cmd->add_option("--data", d.path, "CSV with covariates, time and event columns")->required();
  cmd->add_option("--time-col", d.time_col, "observed time column");
  cmd->add_option("--event-col", d.event_col, "event indicator column (1 = event)");
  cmd->add_option("--features", d.features, "comma-separated feature columns (default: all others)");
  cmd->add_option("--true-time-col", d.true_time_col, "true survival time column, if known");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal confidence bands for censored survival times"};
  app.require_subcommand(1);
  spdlog::set_default_logger(spdlog::stderr_color_st("survconf"));
  spdlog::set_pattern("[%l] %v");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic censored dataset");
  synth->add_option("--out", sa.out, "output CSV")->required();
  synth->add_option("--n", sa.n, "number of subjects");
  synth->add_option("--dim", sa.dim, "number of covariates");
  synth->add_option("--kind", sa.kind, "linear or nonlinear risk")->check(CLI::IsMember({"linear", "nonlinear"}));
  synth->add_option("--mechanism", sa.mechanism, "ignorable or independent censoring")
      ->check(CLI::IsMember({"ignorable", "independent"}));
  synth->add_option("--censor-intercept", sa.censor_intercept, "log censoring rate intercept");
  synth->add_option("--censoring-fraction", sa.censoring_fraction, "calibrate the intercept to this fraction")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_option("--seed", sa.seed, "random seed");

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "fit predictor and weight model, store calibration data");
  add_data_flags(fit, fa.data);
  fit->add_option("--out", fa.out, "model JSON")->required();
  fit->add_option("--predictor", fa.predictor, "linear or mlp")->check(CLI::IsMember({"linear", "mlp"}));
  fit->add_flag("--full-mlp", fa.full_mlp, "3x32 network, 512 epochs");
  fit->add_option("--epochs", fa.epochs, "MLP epochs");
  fit->add_option("--fractions", fa.fractions, "train,cal1,cal2,test");
  fit->add_option("--seed", fa.seed, "split and training seed");
  fit->add_flag("--no-clip", fa.no_clip, "do not clip weights");
  fit->add_option("--ridge", fa.ridge, "ridge penalty for the linear Cox fit");

  BandArgs ba;
  auto* band = app.add_subcommand("band", "confidence bands for query covariates");
  band->add_option("--model", ba.model, "model JSON from fit")->required();
  band->add_option("--in", ba.in, "CSV of query covariates")->required();
  band->add_option("--out", ba.out, "output CSV ('-' for stdout)")->required();
  band->add_option("--alpha", ba.alpha, "miscoverage level")->check(CLI::Range(0.0, 1.0));
  band->add_option("--method", ba.method, "band method")
      ->check(CLI::IsMember({"naive", "wcci", "tsci", "wcci_unweighted", "tsci_unweighted"}));
  band->add_option("--first-stage", ba.first_stage, "T-SCI first stage: split or hull")
      ->check(CLI::IsMember({"split", "hull"}));
  band->add_flag("--shared-eta", ba.shared_eta, "one eta for the whole query batch");

  ExperimentArgs ea;
  auto* exp = app.add_subcommand("experiment", "run the full replication pipeline");
  exp->add_option("--config", ea.config, "experiment config (JSON)")->required();
  exp->add_flag("--dry-run", ea.dry_run, "validate the config and exit");
  exp->add_option("--results", ea.results, "override results CSV path");
  exp->add_option("--summary", ea.summary, "override summary JSON path");
  exp->add_option("--threads", ea.threads, "worker threads");

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "aggregate results CSVs");
  report->add_option("--in", ra.in, "results CSV (repeatable)")->required();
  report->add_option("--json", ra.json_out, "also write the summary as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*fit) return cmd_fit(fa);
    if (*band) return cmd_band(ba);
    if (*exp) return cmd_experiment(ea);
    if (*report) return cmd_report(ra);
  } catch (const ParseError& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  }
  return kUsage;
}
