#include "survconf/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>

namespace survconf {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

std::optional<double> to_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::optional<bool> to_event(std::string_view s) {
  if (s == "true" || s == "TRUE" || s == "True") return true;
  if (s == "false" || s == "FALSE" || s == "False") return false;
  auto v = to_double(s);
  if (!v) return std::nullopt;
  if (*v == 1.0) return true;
  if (*v == 0.0) return false;
  return std::nullopt;
}

std::size_t column_index(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ParseError(fmt::format("column \"{}\" not found in header", name));
  return static_cast<std::size_t>(it - header.begin());
}

std::vector<std::string> read_header(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);  // BOM
  std::vector<std::string> header;
  for (auto f : split_fields(line)) header.emplace_back(f);
  return header;
}

std::string fmt_num(double v) { return fmt::format("{:.17g}", v); }

}  // namespace

std::vector<double> Normalization::apply(std::span<const double> x) const {
  std::vector<double> z(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) z[j] = (x[j] - mean[j]) / scale[j];
  return z;
}

std::vector<double> Normalization::invert(std::span<const double> z) const {
  std::vector<double> x(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) x[j] = z[j] * scale[j] + mean[j];
  return x;
}

SurvivalDataset::SurvivalDataset(std::vector<std::string> feature_names, std::vector<Subject> subjects,
                                 std::optional<Normalization> normalization)
    : feature_names_(std::move(feature_names)),
      subjects_(std::move(subjects)),
      normalization_(std::move(normalization)) {
  const auto d = feature_names_.size();
  for (std::size_t i = 0; i < subjects_.size(); ++i) {
    const auto& s = subjects_[i];
    if (s.covariates.size() != d)
      throw std::invalid_argument(
          fmt::format("subject {} has {} covariates, expected {}", i, s.covariates.size(), d));
    if (!std::isfinite(s.observed_time) || s.observed_time < 0.0)
      throw std::invalid_argument(fmt::format("subject {} has invalid observed time", i));
  }
  if (normalization_) {
    if (normalization_->mean.size() != d || normalization_->scale.size() != d)
      throw std::invalid_argument("normalization dimension mismatch");
    for (double s : normalization_->scale)
      if (!(s > 0.0)) throw std::invalid_argument("normalization scale must be positive");
  }
}

double SurvivalDataset::max_observed_time() const {
  double m = 0.0;
  for (const auto& s : subjects_) m = std::max(m, s.observed_time);
  return m;
}

bool SurvivalDataset::has_true_times() const {
  return !subjects_.empty() &&
         std::all_of(subjects_.begin(), subjects_.end(), [](const Subject& s) { return s.true_time.has_value(); });
}

IndexSet SurvivalDataset::all_indices() const {
  IndexSet idx(subjects_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

SurvivalDataset parse_csv(std::istream& in, const CsvSchema& schema) {
  const auto header = read_header(in);
  const auto time_idx = column_index(header, schema.time_col);
  const auto event_idx = column_index(header, schema.event_col);
  std::optional<std::size_t> true_idx;
  if (schema.true_time_col) true_idx = column_index(header, *schema.true_time_col);
  auto feature_cols = schema.feature_cols;
  if (feature_cols.empty())
    for (std::size_t j = 0; j < header.size(); ++j)
      if (j != time_idx && j != event_idx && j != true_idx && header[j] != "true_time") feature_cols.push_back(header[j]);
  if (feature_cols.empty()) throw ParseError("no feature columns");
  std::vector<std::size_t> feat_idx;
  for (const auto& f : feature_cols) feat_idx.push_back(column_index(header, f));

  std::vector<Subject> subjects;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    auto fields = split_fields(line);
    if (fields.size() != header.size())
      throw ParseError(fmt::format("row {}: expected {} fields, found {}", row, header.size(), fields.size()));

    Subject s;
    for (std::size_t j = 0; j < feat_idx.size(); ++j) {
      auto v = to_double(fields[feat_idx[j]]);
      if (!v || !std::isfinite(*v))
        throw ParseError(fmt::format("row {}, column \"{}\": non-numeric feature value", row, feature_cols[j]));
      s.covariates.push_back(*v);
    }
    auto t = to_double(fields[time_idx]);
    if (!t || !std::isfinite(*t) || *t < 0.0)
      throw ParseError(fmt::format("row {}, column \"{}\": time must be a finite nonnegative number", row,
                                   schema.time_col));
    s.observed_time = *t;
    auto e = to_event(fields[event_idx]);
    if (!e) throw ParseError(fmt::format("row {}, column \"{}\": event must be 0 or 1", row, schema.event_col));
    s.event = *e;
    if (true_idx) {
      auto tt = to_double(fields[*true_idx]);
      if (!tt || !std::isfinite(*tt) || *tt < 0.0)
        throw ParseError(fmt::format("row {}, column \"{}\": true time must be a finite nonnegative number", row,
                                     *schema.true_time_col));
      s.true_time = *tt;
    }
    subjects.push_back(std::move(s));
  }
  return SurvivalDataset(std::move(feature_cols), std::move(subjects));
}

SurvivalDataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path));
  return parse_csv(in, schema);
}

void write_csv(const std::string& path, const SurvivalDataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path));
  const bool with_truth = ds.has_true_times();
  for (const auto& f : ds.feature_names()) out << f << ',';
  out << "time,event" << (with_truth ? ",true_time" : "") << '\n';
  for (const auto& s : ds.subjects()) {
    for (double x : s.covariates) out << fmt_num(x) << ',';
    out << fmt_num(s.observed_time) << ',' << (s.event ? 1 : 0);
    if (with_truth) out << ',' << fmt_num(*s.true_time);
    out << '\n';
  }
}

std::vector<std::vector<double>> load_covariates_csv(const std::string& path,
                                                     const std::vector<std::string>& feature_cols) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path));
  const auto header = read_header(in);
  std::vector<std::size_t> idx;
  for (const auto& f : feature_cols) idx.push_back(column_index(header, f));
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    auto fields = split_fields(line);
    if (fields.size() != header.size())
      throw ParseError(fmt::format("row {}: expected {} fields, found {}", row, header.size(), fields.size()));
    std::vector<double> x;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      auto v = to_double(fields[idx[j]]);
      if (!v) throw ParseError(fmt::format("row {}, column \"{}\": non-numeric feature value", row, feature_cols[j]));
      x.push_back(*v);
    }
    rows.push_back(std::move(x));
  }
  return rows;
}

SurvivalDataset apply_normalization(const SurvivalDataset& ds, const Normalization& norm) {
  std::vector<Subject> subjects = ds.subjects();
  for (auto& s : subjects) s.covariates = norm.apply(s.covariates);
  return SurvivalDataset(ds.feature_names(), std::move(subjects), norm);
}

SurvivalDataset normalize_features(const SurvivalDataset& ds, const IndexSet& fit_pool) {
  if (fit_pool.empty()) throw std::invalid_argument("cannot normalize an empty dataset");
  const auto d = ds.dim();
  Normalization norm{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
  const double n = static_cast<double>(fit_pool.size());
  for (std::size_t j = 0; j < d; ++j) {
    double sum = 0.0;
    for (auto i : fit_pool) sum += ds[i].covariates[j];
    const double mean = sum / n;
    double ss = 0.0;
    for (auto i : fit_pool) {
      const double r = ds[i].covariates[j] - mean;
      ss += r * r;
    }
    const double sd = std::sqrt(ss / n);
    norm.mean[j] = mean;
    norm.scale[j] = sd > 0.0 ? sd : 1.0;
  }
  return apply_normalization(ds, norm);
}

SurvivalDataset normalize_features(const SurvivalDataset& ds) { return normalize_features(ds, ds.all_indices()); }

FoldSplit split_dataset(std::size_t n, const Fractions& f, std::uint64_t seed) {
  for (double v : {f.train, f.cal1, f.cal2, f.test})
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("fold fractions must be nonnegative");
  if (std::abs(f.train + f.cal1 + f.cal2 + f.test - 1.0) > 1e-9)
    throw std::invalid_argument("fold fractions must sum to 1");
  if (!(f.train > 0.0)) throw std::invalid_argument("train fraction must be positive");

  auto rounded = [n](double frac) { return static_cast<std::size_t>(std::llround(frac * static_cast<double>(n))); };
  const std::size_t n_cal1 = rounded(f.cal1), n_cal2 = rounded(f.cal2), n_test = rounded(f.test);
  if (n_cal1 + n_cal2 + n_test >= n) throw std::invalid_argument("split leaves the training fold empty");

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  FoldSplit split;
  auto it = perm.begin();
  auto take = [&it](IndexSet& dst, std::size_t k) {
    dst.assign(it, it + static_cast<std::ptrdiff_t>(k));
    std::sort(dst.begin(), dst.end());
    it += static_cast<std::ptrdiff_t>(k);
  };
  take(split.cal1, n_cal1);
  take(split.cal2, n_cal2);
  take(split.test, n_test);
  take(split.train, n - n_cal1 - n_cal2 - n_test);
  return split;
}

FoldSplit split_dataset(const SurvivalDataset& ds, const Fractions& fractions, std::uint64_t seed) {
  return split_dataset(ds.size(), fractions, seed);
}

IndexSet risk_set(const SurvivalDataset& ds, const IndexSet& pool, double t) {
  IndexSet out;
  for (auto k : pool)
    if (ds[k].observed_time >= t) out.push_back(k);
  return out;
}

IndexSet uncensored(const SurvivalDataset& ds, const IndexSet& pool) {
  IndexSet out;
  for (auto k : pool)
    if (ds[k].event) out.push_back(k);
  return out;
}

}  // namespace survconf
