#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace survconf {

using IndexSet = std::vector<std::size_t>;

/// Raised for malformed input files. The message names the offending row and column.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One individual: covariates, observed time min(T, C), event indicator and,
/// for synthetic data only, the true survival time T.
struct Subject {
  std::vector<double> covariates;
  double observed_time = 0.0;
  bool event = false;
  std::optional<double> true_time;
};

/// Per-feature affine map x -> (x - mean) / scale.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> scale;

  std::vector<double> apply(std::span<const double> x) const;
  std::vector<double> invert(std::span<const double> z) const;
};

class SurvivalDataset {
 public:
  SurvivalDataset() = default;
  SurvivalDataset(std::vector<std::string> feature_names, std::vector<Subject> subjects,
                  std::optional<Normalization> normalization = std::nullopt);

  std::size_t size() const { return subjects_.size(); }
  bool empty() const { return subjects_.empty(); }
  std::size_t dim() const { return feature_names_.size(); }

  const Subject& operator[](std::size_t i) const { return subjects_[i]; }
  const std::vector<Subject>& subjects() const { return subjects_; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::optional<Normalization>& normalization() const { return normalization_; }

  /// Largest observed time; 0 for an empty dataset.
  double max_observed_time() const;
  bool has_true_times() const;
  IndexSet all_indices() const;

 private:
  std::vector<std::string> feature_names_;
  std::vector<Subject> subjects_;
  std::optional<Normalization> normalization_;
};

struct CsvSchema {
  std::string time_col = "time";
  std::string event_col = "event";
  std::vector<std::string> feature_cols;  // empty: every other column except true_time
  std::optional<std::string> true_time_col;
};

SurvivalDataset load_csv(const std::string& path, const CsvSchema& schema);
SurvivalDataset parse_csv(std::istream& in, const CsvSchema& schema);

/// Writes features, time, event and (when every subject has one) true_time.
void write_csv(const std::string& path, const SurvivalDataset& ds);

/// Covariate-only rows, used for band queries.
std::vector<std::vector<double>> load_covariates_csv(const std::string& path,
                                                     const std::vector<std::string>& feature_cols);

/// Population-sd standardization. Zero-variance columns keep scale 1.
SurvivalDataset normalize_features(const SurvivalDataset& ds);

/// Standardizes with statistics computed on `fit_pool` only, then applies them to every subject.
SurvivalDataset normalize_features(const SurvivalDataset& ds, const IndexSet& fit_pool);

SurvivalDataset apply_normalization(const SurvivalDataset& ds, const Normalization& norm);

struct Fractions {
  double train = 0.8;
  double cal1 = 0.0;
  double cal2 = 0.1;
  double test = 0.1;
};

struct FoldSplit {
  IndexSet train;
  IndexSet cal1;
  IndexSet cal2;
  IndexSet test;

  bool operator==(const FoldSplit&) const = default;
};

/// Uniform random partition. Fold sizes are round(fraction * n) for the three
/// non-training folds; whatever remains goes to train.
FoldSplit split_dataset(std::size_t n, const Fractions& fractions, std::uint64_t seed);
FoldSplit split_dataset(const SurvivalDataset& ds, const Fractions& fractions, std::uint64_t seed);

/// {k in pool : observed_time_k >= t}, in pool order.
IndexSet risk_set(const SurvivalDataset& ds, const IndexSet& pool, double t);

/// Subjects in `pool` with an observed event.
IndexSet uncensored(const SurvivalDataset& ds, const IndexSet& pool);

}  // namespace survconf
