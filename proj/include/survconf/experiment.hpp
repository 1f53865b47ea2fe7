#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "survconf/band.hpp"
#include "survconf/data.hpp"
#include "survconf/eval.hpp"
#include "survconf/model.hpp"
#include "survconf/synth.hpp"

namespace survconf {

/// Input data could not be read or generated.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KernelProtocolOptions {
  bool enabled = false;
  std::size_t n_centers = 100;
  std::size_t n_per_center = 100;
  std::optional<double> bandwidth;
};

struct ExperimentConfig {
  // exactly one of csv_path / synth
  std::optional<std::string> csv_path;
  CsvSchema schema;
  std::optional<SynthConfig> synth;

  Fractions fractions{0.7, 0.1, 0.1, 0.1};
  std::vector<Method> methods{Method::Naive, Method::Wcci, Method::Tsci, Method::WcciUnweighted,
                              Method::TsciUnweighted};
  std::vector<double> alphas{0.05, 0.1};
  int replications = 10;
  std::uint64_t master_seed = 0;
  ModelOptions model;
  /// Use the generator's true weight function (synthetic data only).
  bool oracle_weights = false;
  BandOptions bands;
  KernelProtocolOptions kernel;
  int threads = 1;

  std::string results_csv;
  std::string summary_json;

  void validate() const;
};

/// Reads the JSON configuration format; unknown keys are errors.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

struct ResultRow {
  Method method = Method::Naive;
  double alpha = 0.0;
  int replication = 0;
  std::optional<double> coverage_total;
  std::optional<double> coverage_censored;
  std::optional<double> coverage_uncensored;
  double mean_length = 0.0;
  double sd_length = 0.0;
  double truncated_fraction = 0.0;
  /// Surrogate coverage on the same bands (always computable).
  std::optional<double> sec_total;
  std::optional<double> kernel_coverage;
};

struct ReplicationFailure {
  int replication = 0;
  std::string message;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;  // sorted by method, alpha, replication
  std::vector<ReplicationFailure> failures;
  MetricKind metric = MetricKind::EC;
};

/// Independent per-replication seeds derived from (master_seed, replication).
struct ReplicationSeeds {
  std::uint64_t split = 0;
  std::uint64_t data = 0;
  std::uint64_t model = 0;
  std::uint64_t kernel = 0;
};
ReplicationSeeds replication_seeds(std::uint64_t master_seed, int replication);

/// Rows of one replication. `fixed_data` is the loaded CSV (null for synthetic
/// data, which is regenerated per replication); `oracle` is required when the
/// config asks for oracle weights. Throws on any stage failure.
std::vector<ResultRow> run_replication(const ExperimentConfig& cfg, const SurvivalDataset* fixed_data,
                                       const OracleWeight* oracle, int replication);

/// All replications; failed replications are logged and skipped.
/// Throws DataError when a CSV data source cannot be loaded.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// More than 20% of replications failed.
bool excessive_failures(const ExperimentResult& r, int replications);

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows);
void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_results_csv(std::istream& in);
std::vector<ResultRow> read_results_csv(const std::string& path);

struct MetricSummary {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

struct SummaryEntry {
  Method method = Method::Naive;
  double alpha = 0.0;
  std::size_t replications = 0;
  MetricSummary coverage_total, coverage_censored, coverage_uncensored, mean_length, truncated_fraction, sec_total,
      kernel_coverage;
};

/// Mean and sd across replications per (method, alpha), sorted.
std::vector<SummaryEntry> summarize(const std::vector<ResultRow>& rows);
nlohmann::json summary_json(const std::vector<SummaryEntry>& s, const ExperimentResult* result = nullptr);
/// Plain-text table, one line per (method, alpha), values as mean ± sd.
std::string format_report(const std::vector<SummaryEntry>& s);

}  // namespace survconf
