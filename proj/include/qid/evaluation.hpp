#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qid/detector.hpp"
#include "qid/format.hpp"

namespace qid {

/// Threshold-free statistic path of one trial. Declaration times for any
/// threshold are first passages over this path, so a trial is simulated
/// once and swept over thresholds afterwards.
struct TrialPath {
  std::string trial_id;
  std::size_t change_point = 0;
  std::vector<double> statistic;
  std::vector<bool> observed;

  std::size_t length() const noexcept { return statistic.size(); }
};

template <class Profile>
TrialPath trace_path(std::span<const Profile> profiles, const DetectorConfig& config,
                     const TrialStream& stream) {
  RunResult r = run_stream(profiles, config, stream, /*stop_at_declaration=*/false);
  TrialPath p;
  p.trial_id = stream.trial_id;
  p.change_point = stream.change_point;
  p.statistic = std::move(r.statistic_path);
  p.observed = std::move(r.state.observed_flags);
  return p;
}

/// First 1-based step whose statistic strictly exceeds the threshold.
inline std::optional<std::size_t> first_passage(std::span<const double> statistic,
                                                double threshold) {
  for (std::size_t i = 0; i < statistic.size(); ++i)
    if (statistic[i] > threshold) return i + 1;
  return std::nullopt;
}

/// Per-trial result at one threshold. Counters cover the pre-stop horizon
/// only: a trial stops at its declaration or at stream end.
struct TrialOutcome {
  std::string trial_id;
  bool declared = false;
  std::optional<std::size_t> declaration_time;  // 1-based
  std::size_t change_point = 0;                 // count of pre-change steps
  std::size_t prechange_length = 0;
  std::size_t stream_length = 0;
  std::size_t observed_prechange = 0;
  std::size_t observed_to_stop = 0;

  std::size_t stop_time() const noexcept {
    return declared ? *declaration_time : stream_length;
  }
};

inline TrialOutcome outcome_at(const TrialPath& path, double threshold) {
  TrialOutcome o;
  o.trial_id = path.trial_id;
  o.change_point = path.change_point;
  o.prechange_length = path.change_point;
  o.stream_length = path.length();
  const auto tau = first_passage(path.statistic, threshold);
  o.declared = tau.has_value();
  o.declaration_time = tau;
  const std::size_t stop = o.stop_time();
  const std::size_t pre = std::min(path.change_point, stop);
  for (std::size_t i = 0; i < stop; ++i) {
    if (!path.observed[i]) continue;
    ++o.observed_to_stop;
    if (i < pre) ++o.observed_prechange;
  }
  return o;
}

/// Mean detection delay (stops before the change contribute 0). Trials
/// that never declare are censored at stream end and contribute
/// (stream_length - change_point); censored_count() reports how many.
inline double compute_add(std::span<const TrialOutcome> outcomes) {
  if (outcomes.empty()) throw std::invalid_argument("compute_add: no outcomes");
  double total = 0.0;
  for (const auto& o : outcomes) {
    if (o.declared) {
      const std::size_t tau = *o.declaration_time;
      total += tau > o.change_point ? static_cast<double>(tau - o.change_point) : 0.0;
    } else {
      total += static_cast<double>(o.stream_length - o.change_point);
    }
  }
  return total / static_cast<double>(outcomes.size());
}

inline std::size_t censored_count(std::span<const TrialOutcome> outcomes) {
  std::size_t n = 0;
  for (const auto& o : outcomes) n += o.declared ? 0 : 1;
  return n;
}

/// Fraction of trials declaring strictly before the change point.
inline double compute_pfd(std::span<const TrialOutcome> outcomes) {
  if (outcomes.empty()) throw std::invalid_argument("compute_pfd: no outcomes");
  std::size_t false_detections = 0;
  for (const auto& o : outcomes)
    if (o.declared && *o.declaration_time < o.change_point) ++false_detections;
  return static_cast<double>(false_detections) / static_cast<double>(outcomes.size());
}

/// Mean fraction of steps observed up to each trial's stop.
inline double compute_apo(std::span<const TrialOutcome> outcomes) {
  if (outcomes.empty()) throw std::invalid_argument("compute_apo: no outcomes");
  double total = 0.0;
  for (const auto& o : outcomes)
    total += static_cast<double>(o.observed_to_stop) / static_cast<double>(o.stop_time());
  return total / static_cast<double>(outcomes.size());
}

/// Empirical pre-change duty cycle: observed pre-change steps over the
/// pre-change horizon actually reached. Trials stopping at step 0 of the
/// change (no pre-change horizon) are excluded; with nothing to average
/// the duty cycle is vacuously 1.
inline double compute_pdc(std::span<const TrialOutcome> outcomes) {
  if (outcomes.empty()) throw std::invalid_argument("compute_pdc: no outcomes");
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& o : outcomes) {
    const std::size_t horizon = std::min(o.change_point, o.stop_time());
    if (horizon == 0) continue;
    total += static_cast<double>(o.observed_prechange) / static_cast<double>(horizon);
    ++counted;
  }
  return counted == 0 ? 1.0 : total / static_cast<double>(counted);
}

struct CurvePoint {
  double threshold = 0.0;
  double pfd = 0.0;
  double add = 0.0;
  double apo = 0.0;
};

/// Fixed-PFD query: the smallest swept threshold with pfd <= alpha, or
/// achieved=false (the N/A marker) when no threshold reaches alpha.
struct AlphaQuery {
  double alpha = 0.0;
  bool achieved = false;
  double threshold = 0.0;
  double add = 0.0;
  double pfd = 0.0;
  double apo = 0.0;
};

struct MetricsReport {
  std::string algorithm;
  std::size_t user_count = 0;
  std::uint64_t seed = 0;
  std::size_t trial_count = 0;
  double threshold = 0.0;  // operating point of the headline metrics
  double add = 0.0;
  double pfd = 0.0;
  double apo = 0.0;
  double pdc = 0.0;
  std::size_t censored = 0;
  std::vector<double> alphas;
  std::vector<CurvePoint> curve;  // ordered by descending threshold
  std::vector<AlphaQuery> add_at_alpha;
};

/// 60 log-spaced thresholds spanning the observed statistic range, by
/// default. Falls back to a unit grid when no path ever goes positive.
inline std::vector<double> auto_threshold_grid(std::span<const TrialPath> paths,
                                               std::size_t count = 60) {
  if (count < 2) throw std::invalid_argument("threshold grid needs at least 2 points");
  double peak = 0.0;
  for (const auto& p : paths)
    for (double w : p.statistic) peak = std::max(peak, w);
  if (!(peak > 0.0)) peak = 1.0;
  const double hi = peak;
  double lo = std::max(hi * 1e-3, 1e-6);
  if (!(lo < hi)) lo = hi / 1000.0;
  std::vector<double> grid(count);
  const double log_lo = std::log(lo), log_hi = std::log(hi);
  for (std::size_t i = 0; i < count; ++i)
    grid[i] = std::exp(log_lo + (log_hi - log_lo) * static_cast<double>(i) /
                                    static_cast<double>(count - 1));
  grid.front() = lo;
  grid.back() = hi;
  return grid;
}

inline std::vector<TrialOutcome> outcomes_at(std::span<const TrialPath> paths,
                                             double threshold) {
  std::vector<TrialOutcome> outcomes;
  outcomes.reserve(paths.size());
  for (const auto& p : paths) outcomes.push_back(outcome_at(p, threshold));
  return outcomes;
}

/// Sweeps precomputed paths over an ascending threshold grid. Headline
/// metrics are evaluated at `operating_threshold`; each requested alpha is
/// answered with the smallest threshold achieving pfd <= alpha.
inline MetricsReport sweep_paths(std::span<const TrialPath> paths,
                                 std::span<const double> thresholds,
                                 std::span<const double> alphas,
                                 double operating_threshold) {
  if (paths.empty()) throw std::invalid_argument("sweep_paths: no trials");
  if (thresholds.empty()) throw std::invalid_argument("sweep_paths: no thresholds");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i - 1] < thresholds[i]))
      throw std::invalid_argument("thresholds must be strictly increasing");

  MetricsReport report;
  report.trial_count = paths.size();
  report.threshold = operating_threshold;
  report.alphas.assign(alphas.begin(), alphas.end());

  std::vector<CurvePoint> ascending;
  ascending.reserve(thresholds.size());
  for (double a : thresholds) {
    const auto outcomes = outcomes_at(paths, a);
    ascending.push_back(CurvePoint{a, compute_pfd(outcomes), compute_add(outcomes),
                                   compute_apo(outcomes)});
  }

  for (double alpha : alphas) {
    AlphaQuery q;
    q.alpha = alpha;
    for (const auto& pt : ascending) {
      if (pt.pfd <= alpha) {
        q.achieved = true;
        q.threshold = pt.threshold;
        q.add = pt.add;
        q.pfd = pt.pfd;
        q.apo = pt.apo;
        break;
      }
    }
    report.add_at_alpha.push_back(q);
  }

  {
    const auto outcomes = outcomes_at(paths, operating_threshold);
    report.add = compute_add(outcomes);
    report.pfd = compute_pfd(outcomes);
    report.apo = compute_apo(outcomes);
    report.pdc = compute_pdc(outcomes);
    report.censored = censored_count(outcomes);
  }

  report.curve.assign(ascending.rbegin(), ascending.rend());
  return report;
}

/// Re-evaluates the headline metrics of a report at another threshold,
/// reusing the recorded paths. The curve and alpha queries are unchanged.
inline void set_operating_point(MetricsReport& report, std::span<const TrialPath> paths,
                                double threshold) {
  const auto outcomes = outcomes_at(paths, threshold);
  report.threshold = threshold;
  report.add = compute_add(outcomes);
  report.pfd = compute_pfd(outcomes);
  report.apo = compute_apo(outcomes);
  report.pdc = compute_pdc(outcomes);
  report.censored = censored_count(outcomes);
}

/// One-call sweep for a fixed profile set shared by every trial. Each
/// trial is simulated once; the threshold grid reuses the recorded paths.
template <class Profile>
MetricsReport sweep_threshold(std::span<const Profile> profiles,
                              const DetectorConfig& config,
                              std::span<const TrialStream> trials,
                              std::span<const double> thresholds,
                              std::span<const double> alphas) {
  std::vector<TrialPath> paths;
  paths.reserve(trials.size());
  for (const auto& t : trials) paths.push_back(trace_path(profiles, config, t));
  MetricsReport report = sweep_paths(paths, thresholds, alphas, config.threshold);
  report.algorithm = algorithm_name(config.algorithm);
  report.user_count = profiles.size();
  return report;
}

// ---------------------------------------------------------------------------
// CSV import/export
// ---------------------------------------------------------------------------

/// Per-trial outcomes. Integer columns only, so recomputing metrics from a
/// reloaded file reproduces the in-memory values exactly.
inline void write_outcomes_csv(std::ostream& out, std::span<const TrialOutcome> outcomes,
                               std::uint64_t seed) {
  out << "# seed=" << seed << "\n";
  out << "trial_id,declared,declaration_time,change_point,prechange_length,"
         "stream_length,observed_prechange,observed_to_stop\n";
  for (const auto& o : outcomes) {
    out << o.trial_id << ',' << (o.declared ? 1 : 0) << ',';
    if (o.declared) out << *o.declaration_time;
    out << ',' << o.change_point << ',' << o.prechange_length << ',' << o.stream_length
        << ',' << o.observed_prechange << ',' << o.observed_to_stop << "\n";
  }
}

inline std::vector<TrialOutcome> load_outcomes_csv(std::istream& in) {
  std::string line;
  std::vector<TrialOutcome> outcomes;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      if (line != "trial_id,declared,declaration_time,change_point,prechange_length,"
                  "stream_length,observed_prechange,observed_to_stop")
        throw std::invalid_argument("outcomes CSV: unexpected header");
      header_seen = true;
      continue;
    }
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 8)
      throw std::invalid_argument("outcomes CSV line " + std::to_string(line_no) +
                                  ": expected 8 cells");
    auto to_count = [&](const std::string& s) -> std::size_t {
      try {
        return static_cast<std::size_t>(std::stoull(s));
      } catch (const std::exception&) {
        throw std::invalid_argument("outcomes CSV line " + std::to_string(line_no) +
                                    ": bad integer '" + s + "'");
      }
    };
    TrialOutcome o;
    o.trial_id = cells[0];
    o.declared = to_count(cells[1]) != 0;
    if (o.declared) o.declaration_time = to_count(cells[2]);
    else if (!cells[2].empty())
      throw std::invalid_argument("outcomes CSV line " + std::to_string(line_no) +
                                  ": declaration_time set on an undeclared trial");
    o.change_point = to_count(cells[3]);
    o.prechange_length = to_count(cells[4]);
    o.stream_length = to_count(cells[5]);
    o.observed_prechange = to_count(cells[6]);
    o.observed_to_stop = to_count(cells[7]);
    outcomes.push_back(std::move(o));
  }
  if (!header_seen) throw std::invalid_argument("outcomes CSV: missing header");
  return outcomes;
}

/// Swept curve as `A,pfd,add,apo`, one row per threshold (descending A).
inline void write_curve_csv(std::ostream& out, const MetricsReport& report) {
  out << "# seed=" << report.seed << "\n";
  out << "A,pfd,add,apo\n";
  for (const auto& pt : report.curve)
    out << dec17(pt.threshold) << ',' << dec17(pt.pfd) << ',' << dec17(pt.add) << ','
        << dec17(pt.apo) << "\n";
}

inline std::vector<CurvePoint> load_curve_csv(std::istream& in) {
  std::string line;
  std::vector<CurvePoint> points;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      if (line != "A,pfd,add,apo")
        throw std::invalid_argument("curve CSV: unexpected header");
      header_seen = true;
      continue;
    }
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 4) throw std::invalid_argument("curve CSV: expected 4 cells");
    CurvePoint pt;
    double* fields[4] = {&pt.threshold, &pt.pfd, &pt.add, &pt.apo};
    for (int i = 0; i < 4; ++i) {
      char* end = nullptr;
      *fields[i] = std::strtod(cells[i].c_str(), &end);
      if (end == cells[i].c_str() || *end != '\0')
        throw std::invalid_argument("curve CSV: bad number '" + cells[i] + "'");
    }
    points.push_back(pt);
  }
  if (!header_seen) throw std::invalid_argument("curve CSV: missing header");
  return points;
}

}  // namespace qid
