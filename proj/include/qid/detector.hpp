#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qid/enrollment.hpp"
#include "qid/format.hpp"
#include "qid/stream.hpp"

namespace qid {

/// Sequential decision statistics over a score stream.
///
/// MQID        running sum of fused log-likelihood ratios, no clamps.
/// DEMQID      data-efficient variant: while the statistic is negative it
///             skips observations and ramps up by skip_increment (capped
///             at 0); observed steps add the ratio, clamped below at
///             -skip_floor.
/// CUSUM_MIN_LLR  running sum clamped below at 0 (classic reference).
/// SSA         memoryless: the statistic is the latest ratio.
/// TIME_DECAY  geometric memory: statistic <- decay * statistic + ratio.
enum class Algorithm { Mqid, Demqid, CusumMinLlr, Ssa, TimeDecay };

inline const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::Mqid: return "MQID";
    case Algorithm::Demqid: return "DEMQID";
    case Algorithm::CusumMinLlr: return "CUSUM_MIN_LLR";
    case Algorithm::Ssa: return "SSA";
    case Algorithm::TimeDecay: return "TIME_DECAY";
  }
  throw std::logic_error("unreachable");
}

inline Algorithm algorithm_from_name(const std::string& name) {
  if (name == "MQID") return Algorithm::Mqid;
  if (name == "DEMQID") return Algorithm::Demqid;
  if (name == "CUSUM_MIN_LLR") return Algorithm::CusumMinLlr;
  if (name == "SSA") return Algorithm::Ssa;
  if (name == "TIME_DECAY") return Algorithm::TimeDecay;
  throw std::invalid_argument("unknown algorithm '" + name + "'");
}

struct DetectorConfig {
  Algorithm algorithm = Algorithm::Mqid;
  double threshold = 10.0;      // declare once the statistic exceeds this
  double skip_floor = 2.0;      // DEMQID lower clamp on observed updates
  double skip_increment = 0.1;  // DEMQID ramp per skipped step
  double decay = 0.9;           // TIME_DECAY memory factor

  void validate() const {
    const bool cumulative = algorithm == Algorithm::Mqid ||
                            algorithm == Algorithm::Demqid ||
                            algorithm == Algorithm::CusumMinLlr;
    if (std::isnan(threshold) || (cumulative && !(threshold > 0.0)))
      throw std::invalid_argument("threshold must be > 0 for cumulative detectors");
    if (!(skip_floor >= 0.0))
      throw std::invalid_argument("skip_floor must be nonnegative");
    if (!(skip_increment > 0.0))
      throw std::invalid_argument("skip_increment must be positive");
    if (!(decay > 0.0) || decay > 1.0)
      throw std::invalid_argument("decay must lie in (0,1]");
  }
};

/// Running state of one detector over one stream. A value type: copy it
/// to fork a run. Once declared, the state is frozen until reset().
struct DetectorState {
  double statistic = 0.0;
  std::size_t time = 0;  // steps processed, 1-based at declaration
  std::vector<bool> observed_flags;
  bool declared = false;
  std::optional<std::size_t> declaration_time;
};

/// DEMQID skips the next observation while the statistic is negative.
/// Every other algorithm observes every step.
inline bool should_observe(const DetectorState& state, const DetectorConfig& config) {
  if (config.algorithm != Algorithm::Demqid) return true;
  return state.statistic >= 0.0;
}

/// Advances one step. `llr` must be present exactly when should_observe()
/// said so. Declares when the new statistic strictly exceeds the
/// threshold; the declaration time never changes afterwards.
inline void update(DetectorState& state, const DetectorConfig& config,
                   std::optional<double> llr) {
  if (state.declared)
    throw std::logic_error("update after declaration; reset() to re-arm");
  const bool observing = should_observe(state, config);
  if (observing && !llr)
    throw std::logic_error("observation required on an observe step");
  if (!observing && llr)
    throw std::logic_error("observation supplied on a skip step");
  if (llr && !std::isfinite(*llr))
    throw std::invalid_argument("log-likelihood ratio must be finite");

  double w = state.statistic;
  switch (config.algorithm) {
    case Algorithm::Demqid:
      w = observing ? std::max(w + *llr, -config.skip_floor)
                    : std::min(w + config.skip_increment, 0.0);
      break;
    case Algorithm::Mqid:
      w += *llr;
      break;
    case Algorithm::CusumMinLlr:
      w = std::max(w + *llr, 0.0);
      break;
    case Algorithm::Ssa:
      w = *llr;
      break;
    case Algorithm::TimeDecay:
      w = config.decay * w + *llr;
      break;
  }
  state.statistic = w;
  state.time += 1;
  state.observed_flags.push_back(observing);
  if (w > config.threshold) {
    state.declared = true;
    state.declaration_time = state.time;
  }
}

/// Re-arms a declared detector: statistic back to 0, step count and
/// observation history preserved.
inline void reset(DetectorState& state) {
  state.statistic = 0.0;
  state.declared = false;
  state.declaration_time.reset();
}

/// Fused statistic over all enrolled users: the minimum per-user
/// log-likelihood ratio. One legitimate user scoring as matched is enough
/// to hold the statistic down.
inline double fused_statistic(std::span<const UserProfile> profiles,
                              const FeatureVector& query) {
  if (profiles.empty())
    throw std::invalid_argument("fused_statistic: no enrolled profiles");
  double best = std::numeric_limits<double>::infinity();
  for (const UserProfile& p : profiles) {
    const double s = classifier_score(p, query);
    best = std::min(best, log_likelihood_ratio(p.nonmatched, p.matched, s));
  }
  return best;
}

/// Score-injection variant for streams of precomputed scalar scores.
inline double fused_statistic(std::span<const ScoreProfile> profiles, double score) {
  if (profiles.empty())
    throw std::invalid_argument("fused_statistic: no enrolled profiles");
  double best = std::numeric_limits<double>::infinity();
  for (const ScoreProfile& p : profiles)
    best = std::min(best, log_likelihood_ratio(p.nonmatched, p.matched, score));
  return best;
}

struct RunResult {
  DetectorState state;
  std::vector<double> statistic_path;  // statistic after each processed step
  std::vector<double> llr_path;        // NaN on skipped steps
  std::size_t llr_evaluations = 0;
};

/// Core stream driver. `llr_at(i)` is called only on observed steps; a
/// skipped step costs no classifier or density work. Stops at declaration
/// unless `stop_at_declaration` is false, in which case the detector runs
/// threshold-free to the end of the stream: the statistic path does not
/// depend on the threshold, so declaration times for any threshold can be
/// recovered from the recorded path afterwards.
template <class LlrFn>
RunResult run_detector(const DetectorConfig& config, std::size_t length, LlrFn&& llr_at,
                       bool stop_at_declaration = true) {
  config.validate();
  if (length == 0) throw std::invalid_argument("stream must be nonempty");
  DetectorConfig effective = config;
  if (!stop_at_declaration)
    effective.threshold = std::numeric_limits<double>::infinity();
  RunResult r;
  r.statistic_path.reserve(length);
  r.llr_path.reserve(length);
  for (std::size_t i = 0; i < length; ++i) {
    std::optional<double> llr;
    if (should_observe(r.state, effective)) {
      llr = llr_at(i);
      ++r.llr_evaluations;
    }
    update(r.state, effective, llr);
    r.statistic_path.push_back(r.state.statistic);
    r.llr_path.push_back(llr ? *llr : std::numeric_limits<double>::quiet_NaN());
    if (r.state.declared) break;
  }
  return r;
}

/// Runs over a precomputed log-likelihood-ratio sequence.
inline RunResult run_stream_llr(const DetectorConfig& config, std::span<const double> llrs,
                                bool stop_at_declaration = true) {
  return run_detector(config, llrs.size(), [llrs](std::size_t i) { return llrs[i]; },
                      stop_at_declaration);
}

/// Runs over a dataset stream of feature vectors.
inline RunResult run_stream(std::span<const UserProfile> profiles,
                            const DetectorConfig& config, const TrialStream& stream,
                            bool stop_at_declaration = true) {
  stream.validate();
  if (stream.synthetic())
    throw std::invalid_argument("feature-profile run on a synthetic score stream");
  return run_detector(
      config, stream.size(),
      [&](std::size_t i) { return fused_statistic(profiles, stream.features[i]); },
      stop_at_declaration);
}

/// Runs over a synthetic stream of scalar scores.
inline RunResult run_stream(std::span<const ScoreProfile> profiles,
                            const DetectorConfig& config, const TrialStream& stream,
                            bool stop_at_declaration = true) {
  stream.validate();
  if (!stream.synthetic())
    throw std::invalid_argument("score-profile run on a feature stream");
  return run_detector(
      config, stream.size(),
      [&](std::size_t i) { return fused_statistic(profiles, stream.scores[i]); },
      stop_at_declaration);
}

/// Debug/plot trace: `n,observed,L_or_empty,W,declared`, one row per step.
/// `declared` turns 1 on the declaration row and stays 1 afterwards.
inline void write_trace_csv(std::ostream& out, const RunResult& r) {
  out << "n,observed,L_or_empty,W,declared\n";
  for (std::size_t i = 0; i < r.statistic_path.size(); ++i) {
    const bool observed = r.state.observed_flags[i];
    const bool declared =
        r.state.declared && r.state.declaration_time && *r.state.declaration_time <= i + 1;
    out << (i + 1) << ',' << (observed ? 1 : 0) << ',';
    if (observed) out << dec17(r.llr_path[i]);
    out << ',' << dec17(r.statistic_path[i]) << ',' << (declared ? 1 : 0) << "\n";
  }
}

struct TraceRow {
  std::size_t step = 0;
  bool observed = false;
  std::optional<double> llr;
  double statistic = 0.0;
  bool declared = false;
};

inline std::vector<TraceRow> load_trace_csv(std::istream& in) {
  std::vector<TraceRow> rows;
  std::string line;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      if (line != "n,observed,L_or_empty,W,declared")
        throw std::invalid_argument("trace CSV: unexpected header");
      header_seen = true;
      continue;
    }
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 5)
      throw std::invalid_argument("trace CSV line " + std::to_string(line_no) +
                                  ": expected 5 cells");
    TraceRow row;
    row.step = std::stoull(cells[0]);
    row.observed = cells[1] == "1";
    if (!cells[2].empty()) {
      char* end = nullptr;
      row.llr = std::strtod(cells[2].c_str(), &end);
      if (end == cells[2].c_str() || *end != '\0')
        throw std::invalid_argument("trace CSV line " + std::to_string(line_no) +
                                    ": bad ratio value");
    }
    if (row.observed != row.llr.has_value())
      throw std::invalid_argument("trace CSV line " + std::to_string(line_no) +
                                  ": ratio column out of step with observed flag");
    char* end = nullptr;
    row.statistic = std::strtod(cells[3].c_str(), &end);
    if (end == cells[3].c_str() || *end != '\0')
      throw std::invalid_argument("trace CSV line " + std::to_string(line_no) +
                                  ": bad statistic value");
    row.declared = cells[4] == "1";
    rows.push_back(row);
  }
  if (!header_seen) throw std::invalid_argument("trace CSV: missing header");
  return rows;
}

}  // namespace qid
