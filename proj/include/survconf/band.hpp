#pragma once

#include <limits>
#include <string>

namespace survconf {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Method { Naive, Wcci, Tsci, WcciUnweighted, TsciUnweighted };

std::string to_string(Method m);
Method parse_method(const std::string& s);

/// Interval [lower, upper] on survival time. A truncated band is unbounded
/// above; its upper endpoint is reported as the truncation ceiling.
struct ConfidenceBand {
  double lower = 0.0;
  double upper = 0.0;
  bool truncated = false;
  double max_duration = 0.0;

  bool contains(double t) const { return t >= lower && (truncated || t <= upper); }
  double length() const { return upper - lower; }
};

}  // namespace survconf
