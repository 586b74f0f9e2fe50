#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "btcxr/error.hpp"
#include "btcxr/metrics.hpp"

namespace btcxr::report {

/// "V (L,H)" with four decimals each, e.g. "0.2502 (0.2476,0.2528)".
inline std::string format_metric_cell(double value, double lo, double hi) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.4f (%.4f,%.4f)", value, lo, hi);
  return buf;
}

/// Mean and min-max band of one metric across independent trials.
struct TrialBand {
  double mean = 0, min = 0, max = 0;
};

inline TrialBand trial_band(const std::vector<double>& values) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "trial band of no values");
  TrialBand b{0, values.front(), values.front()};
  for (double v : values) {
    b.mean += v;
    b.min = std::min(b.min, v);
    b.max = std::max(b.max, v);
  }
  b.mean /= static_cast<double>(values.size());
  return b;
}

/// Table rendering of one evaluation report: overall row, then one row per
/// class; undefined classes print "n/a".
inline std::string render_report(const metrics::EvalReport& r) {
  std::string out = r.metric_name + "\t" + format_metric_cell(r.overall, r.lo, r.hi) + "\n";
  for (const auto& c : r.per_class) {
    out += "  " + c.name + "\t" + (c.value ? format_metric_cell(*c.value, c.lo, c.hi) : std::string("n/a")) + "\n";
  }
  return out;
}

/// Across-trial rendering: every cell is "mean (min,max)" over the reports,
/// which must share metric and class list.
inline std::string render_trials(const std::vector<metrics::EvalReport>& reports) {
  if (reports.empty()) throw Error(ErrorCode::InvalidArgument, "no reports to render");
  const auto& first = reports.front();
  for (const auto& r : reports) {
    if (r.metric_name != first.metric_name || r.per_class.size() != first.per_class.size()) {
      throw Error(ErrorCode::ShapeMismatch, "trial reports disagree on metric or classes");
    }
  }
  std::vector<double> overall;
  for (const auto& r : reports) overall.push_back(r.overall);
  const auto b = trial_band(overall);
  std::string out = first.metric_name + " (" + std::to_string(reports.size()) + " trials)\t" +
                    format_metric_cell(b.mean, b.min, b.max) + "\n";
  for (std::size_t k = 0; k < first.per_class.size(); ++k) {
    std::vector<double> v;
    for (const auto& r : reports) {
      if (r.per_class[k].value) v.push_back(*r.per_class[k].value);
    }
    out += "  " + first.per_class[k].name + "\t";
    if (v.empty()) {
      out += "n/a\n";
    } else {
      const auto cb = trial_band(v);
      out += format_metric_cell(cb.mean, cb.min, cb.max) + "\n";
    }
  }
  return out;
}

}  // namespace btcxr::report
