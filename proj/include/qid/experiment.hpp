#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "qid/detector.hpp"
#include "qid/evaluation.hpp"
#include "qid/json_io.hpp"
#include "qid/log.hpp"
#include "qid/stream.hpp"

namespace qid {

/// A configuration problem; `key` names the offending entry. Mapped to
/// exit status 2 by the experiment runners.
struct ConfigError : std::runtime_error {
  std::string key;
  ConfigError(std::string k, const std::string& msg)
      : std::runtime_error("config key '" + k + "': " + msg), key(std::move(k)) {}
};

enum class ExperimentMode { Synthetic, Dataset };

struct DetectorSpec {
  double gamma = 2.0;
  double skip_increment = 0.1;
  double decay_lambda = 0.9;
  std::vector<double> thresholds;   // explicit grid; empty -> auto grid
  std::size_t threshold_count = 60; // auto grid size
};

struct SyntheticSpec {
  std::size_t trials = 500;
  std::size_t segment_length = 100;
  std::size_t intruder_length = 200;
  DistributionModel matched = DistributionModel::gaussian(0.0, 1.0);
  DistributionModel nonmatched = DistributionModel::gaussian(1.0, 1.0);
  // Per-user shift of the matched gaussian mean, to give each simulated
  // user a distinct pre-change score law.
  double user_mean_spread = 0.0;
};

struct DatasetSpec {
  std::string path;
  std::size_t enrolled_count = 22;  // first N users in file order
  std::size_t negative_count = 11;  // next M users
  std::vector<std::string> enrolled_ids;  // explicit overrides
  std::vector<std::string> negative_ids;
  std::vector<std::string> intruder_ids;
  double enrollment_fraction = 0.10;
  int bin_count = 50;
  double smoothing_floor = 1e-6;
};

struct ExperimentConfig {
  ExperimentMode mode = ExperimentMode::Synthetic;
  std::vector<Algorithm> algorithms = {Algorithm::Mqid, Algorithm::Demqid};
  std::size_t users_min = 1;
  std::size_t users_max = 1;
  std::uint64_t seed = 1;
  unsigned jobs = 1;
  std::vector<double> alphas = {0.02, 0.05};
  std::string out_dir = "out";
  bool trace = false;
  DetectorSpec detector;
  SyntheticSpec synthetic;
  DatasetSpec dataset;
};

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace detail {

inline void reject_unknown_keys(const json& j, const std::string& prefix,
                                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(prefix.empty() ? "(root)" : prefix, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) { known = true; break; }
    if (!known)
      throw ConfigError(prefix.empty() ? it.key() : prefix + "." + it.key(), "unknown key");
  }
}

inline double config_number(const json& j, const std::string& key) {
  try {
    return number_in(j, key);
  } catch (const std::exception& e) {
    throw ConfigError(key, e.what());
  }
}

inline std::size_t config_count(const json& j, const std::string& key) {
  if (!j.is_number_unsigned() && !j.is_number_integer())
    throw ConfigError(key, "expected a nonnegative integer");
  const auto v = j.get<long long>();
  if (v < 0) throw ConfigError(key, "expected a nonnegative integer");
  return static_cast<std::size_t>(v);
}

inline DistributionModel config_distribution(const json& j, const std::string& key) {
  if (!j.is_object()) throw ConfigError(key, "expected a distribution object");
  const std::string kind = j.contains("kind") && j.at("kind").is_string()
                               ? j.at("kind").get<std::string>()
                               : "";
  if (kind == "analytic-gaussian")
    reject_unknown_keys(j, key, {"kind", "mean", "stddev"});
  else if (kind == "analytic-beta")
    reject_unknown_keys(j, key, {"kind", "alpha", "beta"});
  else if (kind == "empirical-histogram")
    reject_unknown_keys(j, key, {"kind", "bin_edges", "bin_masses", "smoothing_floor"});
  else
    throw ConfigError(key + ".kind", "expected analytic-gaussian, analytic-beta, or empirical-histogram");
  try {
    return dist_from_json(j, key);
  } catch (const std::exception& e) {
    throw ConfigError(key, e.what());
  }
}

}  // namespace detail

inline std::pair<std::size_t, std::size_t> parse_users_range(const std::string& text) {
  const auto dots = text.find("..");
  auto to_count = [&](const std::string& s) -> std::size_t {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &pos);
    } catch (const std::exception&) {
      throw ConfigError("users", "bad user count '" + s + "'");
    }
    if (pos != s.size() || v == 0)
      throw ConfigError("users", "bad user count '" + s + "'");
    return static_cast<std::size_t>(v);
  };
  if (dots == std::string::npos) {
    const std::size_t u = to_count(text);
    return {u, u};
  }
  const std::size_t lo = to_count(text.substr(0, dots));
  const std::size_t hi = to_count(text.substr(dots + 2));
  if (lo > hi) throw ConfigError("users", "range must be min..max");
  return {lo, hi};
}

inline std::vector<Algorithm> parse_algorithms(const std::string& csv) {
  std::vector<Algorithm> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(algorithm_from_name(item));
    } catch (const std::exception&) {
      throw ConfigError("algorithms", "unknown algorithm '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("algorithms", "no algorithms given");
  return out;
}

inline std::vector<double> parse_alphas(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    char* end = nullptr;
    const double a = std::strtod(item.c_str(), &end);
    if (end == item.c_str() || *end != '\0')
      throw ConfigError("alpha", "bad alpha '" + item + "'");
    out.push_back(a);
  }
  if (out.empty()) throw ConfigError("alpha", "no alpha values given");
  return out;
}

inline void validate_config(const ExperimentConfig& cfg) {
  if (cfg.algorithms.empty()) throw ConfigError("algorithms", "no algorithms selected");
  if (cfg.users_min == 0 || cfg.users_min > cfg.users_max)
    throw ConfigError("users", "need 1 <= min <= max");
  if (cfg.jobs == 0) throw ConfigError("jobs", "must be >= 1");
  if (cfg.alphas.empty()) throw ConfigError("alpha", "no alpha queries");
  for (double a : cfg.alphas)
    if (!(a > 0.0) || !(a < 1.0)) throw ConfigError("alpha", "alpha must lie in (0,1)");
  if (cfg.out_dir.empty()) throw ConfigError("out", "output directory must be set");
  if (!(cfg.detector.gamma >= 0.0)) throw ConfigError("detector.gamma", "must be >= 0");
  if (!(cfg.detector.skip_increment > 0.0))
    throw ConfigError("detector.skip_increment", "must be > 0");
  if (!(cfg.detector.decay_lambda > 0.0) || cfg.detector.decay_lambda > 1.0)
    throw ConfigError("detector.decay_lambda", "must lie in (0,1]");
  if (cfg.detector.threshold_count < 2)
    throw ConfigError("detector.threshold_count", "need at least 2 grid points");
  for (std::size_t i = 1; i < cfg.detector.thresholds.size(); ++i)
    if (!(cfg.detector.thresholds[i - 1] < cfg.detector.thresholds[i]))
      throw ConfigError("detector.thresholds", "must be strictly increasing");
  if (cfg.mode == ExperimentMode::Synthetic) {
    if (cfg.synthetic.trials == 0) throw ConfigError("synthetic.trials", "must be >= 1");
    if (cfg.synthetic.segment_length == 0)
      throw ConfigError("synthetic.segment_length", "must be >= 1");
    if (cfg.synthetic.intruder_length == 0)
      throw ConfigError("synthetic.intruder_length", "must be >= 1");
    if (cfg.synthetic.user_mean_spread != 0.0 &&
        cfg.synthetic.matched.kind() != DistributionKind::Gaussian)
      throw ConfigError("synthetic.user_mean_spread",
                        "only meaningful for a gaussian matched model");
  } else {
    if (cfg.dataset.path.empty()) throw ConfigError("dataset.path", "must be set in dataset mode");
    if (!(cfg.dataset.enrollment_fraction > 0.0) || !(cfg.dataset.enrollment_fraction < 1.0))
      throw ConfigError("dataset.enrollment_fraction", "must lie in (0,1)");
    if (cfg.dataset.bin_count < 2) throw ConfigError("dataset.bin_count", "must be >= 2");
    if (!(cfg.dataset.smoothing_floor > 0.0))
      throw ConfigError("dataset.smoothing_floor", "must be > 0");
  }
}

inline ExperimentConfig config_from_json(const json& j) {
  using detail::config_count;
  using detail::config_number;
  using detail::reject_unknown_keys;
  reject_unknown_keys(j, "", {"mode", "algorithms", "users", "seed", "jobs", "alpha",
                              "out", "trace", "detector", "synthetic", "dataset"});
  ExperimentConfig cfg;
  if (j.contains("mode")) {
    const std::string m = j.at("mode").is_string() ? j.at("mode").get<std::string>() : "";
    if (m == "synthetic") cfg.mode = ExperimentMode::Synthetic;
    else if (m == "dataset") cfg.mode = ExperimentMode::Dataset;
    else throw ConfigError("mode", "expected \"synthetic\" or \"dataset\"");
  }
  if (j.contains("algorithms")) {
    if (!j.at("algorithms").is_array()) throw ConfigError("algorithms", "expected an array");
    cfg.algorithms.clear();
    for (const auto& a : j.at("algorithms")) {
      if (!a.is_string()) throw ConfigError("algorithms", "expected algorithm names");
      try {
        cfg.algorithms.push_back(algorithm_from_name(a.get<std::string>()));
      } catch (const std::exception&) {
        throw ConfigError("algorithms", "unknown algorithm '" + a.get<std::string>() + "'");
      }
    }
  }
  if (j.contains("users")) {
    const auto& u = j.at("users");
    if (u.is_number_unsigned() || u.is_number_integer()) {
      cfg.users_min = cfg.users_max = config_count(u, "users");
    } else if (u.is_string()) {
      std::tie(cfg.users_min, cfg.users_max) = parse_users_range(u.get<std::string>());
    } else if (u.is_object()) {
      reject_unknown_keys(u, "users", {"min", "max"});
      if (u.contains("min")) cfg.users_min = config_count(u.at("min"), "users.min");
      if (u.contains("max")) cfg.users_max = config_count(u.at("max"), "users.max");
    } else {
      throw ConfigError("users", "expected an integer, \"min..max\", or {min,max}");
    }
  }
  if (j.contains("seed")) cfg.seed = static_cast<std::uint64_t>(config_count(j.at("seed"), "seed"));
  if (j.contains("jobs")) cfg.jobs = static_cast<unsigned>(config_count(j.at("jobs"), "jobs"));
  if (j.contains("alpha")) {
    if (!j.at("alpha").is_array()) throw ConfigError("alpha", "expected an array");
    cfg.alphas.clear();
    for (const auto& a : j.at("alpha")) cfg.alphas.push_back(config_number(a, "alpha"));
  }
  if (j.contains("out")) {
    if (!j.at("out").is_string()) throw ConfigError("out", "expected a string");
    cfg.out_dir = j.at("out").get<std::string>();
  }
  if (j.contains("trace")) {
    if (!j.at("trace").is_boolean()) throw ConfigError("trace", "expected a boolean");
    cfg.trace = j.at("trace").get<bool>();
  }
  if (j.contains("detector")) {
    const auto& d = j.at("detector");
    reject_unknown_keys(d, "detector", {"gamma", "skip_increment", "decay_lambda",
                                        "thresholds", "threshold_count"});
    if (d.contains("gamma")) cfg.detector.gamma = config_number(d.at("gamma"), "detector.gamma");
    if (d.contains("skip_increment"))
      cfg.detector.skip_increment = config_number(d.at("skip_increment"), "detector.skip_increment");
    if (d.contains("decay_lambda"))
      cfg.detector.decay_lambda = config_number(d.at("decay_lambda"), "detector.decay_lambda");
    if (d.contains("thresholds")) {
      if (!d.at("thresholds").is_array())
        throw ConfigError("detector.thresholds", "expected an array");
      for (const auto& t : d.at("thresholds"))
        cfg.detector.thresholds.push_back(config_number(t, "detector.thresholds"));
    }
    if (d.contains("threshold_count"))
      cfg.detector.threshold_count = config_count(d.at("threshold_count"), "detector.threshold_count");
  }
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    reject_unknown_keys(s, "synthetic", {"trials", "segment_length", "intruder_length",
                                         "matched", "nonmatched", "user_mean_spread"});
    if (s.contains("trials")) cfg.synthetic.trials = config_count(s.at("trials"), "synthetic.trials");
    if (s.contains("segment_length"))
      cfg.synthetic.segment_length = config_count(s.at("segment_length"), "synthetic.segment_length");
    if (s.contains("intruder_length"))
      cfg.synthetic.intruder_length = config_count(s.at("intruder_length"), "synthetic.intruder_length");
    if (s.contains("matched"))
      cfg.synthetic.matched = detail::config_distribution(s.at("matched"), "synthetic.matched");
    if (s.contains("nonmatched"))
      cfg.synthetic.nonmatched = detail::config_distribution(s.at("nonmatched"), "synthetic.nonmatched");
    if (s.contains("user_mean_spread"))
      cfg.synthetic.user_mean_spread = config_number(s.at("user_mean_spread"), "synthetic.user_mean_spread");
  }
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    reject_unknown_keys(d, "dataset", {"path", "enrolled_count", "negative_count",
                                       "enrolled_ids", "negative_ids", "intruder_ids",
                                       "enrollment_fraction", "bin_count", "smoothing_floor"});
    if (d.contains("path")) {
      if (!d.at("path").is_string()) throw ConfigError("dataset.path", "expected a string");
      cfg.dataset.path = d.at("path").get<std::string>();
    }
    if (d.contains("enrolled_count"))
      cfg.dataset.enrolled_count = config_count(d.at("enrolled_count"), "dataset.enrolled_count");
    if (d.contains("negative_count"))
      cfg.dataset.negative_count = config_count(d.at("negative_count"), "dataset.negative_count");
    auto read_ids = [&](const char* key, std::vector<std::string>& dst) {
      if (!d.contains(key)) return;
      if (!d.at(key).is_array()) throw ConfigError(std::string("dataset.") + key, "expected an array");
      for (const auto& v : d.at(key)) {
        if (!v.is_string()) throw ConfigError(std::string("dataset.") + key, "expected id strings");
        dst.push_back(v.get<std::string>());
      }
    };
    read_ids("enrolled_ids", cfg.dataset.enrolled_ids);
    read_ids("negative_ids", cfg.dataset.negative_ids);
    read_ids("intruder_ids", cfg.dataset.intruder_ids);
    if (d.contains("enrollment_fraction"))
      cfg.dataset.enrollment_fraction = config_number(d.at("enrollment_fraction"), "dataset.enrollment_fraction");
    if (d.contains("bin_count"))
      cfg.dataset.bin_count = static_cast<int>(config_count(d.at("bin_count"), "dataset.bin_count"));
    if (d.contains("smoothing_floor"))
      cfg.dataset.smoothing_floor = config_number(d.at("smoothing_floor"), "dataset.smoothing_floor");
  }
  validate_config(cfg);
  return cfg;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileOpenError("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("(file)", std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["mode"] = cfg.mode == ExperimentMode::Synthetic ? "synthetic" : "dataset";
  json algos = json::array();
  for (Algorithm a : cfg.algorithms) algos.push_back(algorithm_name(a));
  j["algorithms"] = std::move(algos);
  j["users"] = {{"min", cfg.users_min}, {"max", cfg.users_max}};
  j["seed"] = cfg.seed;
  j["jobs"] = cfg.jobs;
  json alphas = json::array();
  for (double a : cfg.alphas) alphas.push_back(number_out(a));
  j["alpha"] = std::move(alphas);
  j["out"] = cfg.out_dir;
  j["trace"] = cfg.trace;
  json det;
  det["gamma"] = number_out(cfg.detector.gamma);
  det["skip_increment"] = number_out(cfg.detector.skip_increment);
  det["decay_lambda"] = number_out(cfg.detector.decay_lambda);
  if (!cfg.detector.thresholds.empty()) {
    json grid = json::array();
    for (double t : cfg.detector.thresholds) grid.push_back(number_out(t));
    det["thresholds"] = std::move(grid);
  }
  det["threshold_count"] = cfg.detector.threshold_count;
  j["detector"] = std::move(det);
  if (cfg.mode == ExperimentMode::Synthetic) {
    json s;
    s["trials"] = cfg.synthetic.trials;
    s["segment_length"] = cfg.synthetic.segment_length;
    s["intruder_length"] = cfg.synthetic.intruder_length;
    s["matched"] = dist_to_json(cfg.synthetic.matched);
    s["nonmatched"] = dist_to_json(cfg.synthetic.nonmatched);
    s["user_mean_spread"] = number_out(cfg.synthetic.user_mean_spread);
    j["synthetic"] = std::move(s);
  } else {
    json d;
    d["path"] = cfg.dataset.path;
    d["enrolled_count"] = cfg.dataset.enrolled_count;
    d["negative_count"] = cfg.dataset.negative_count;
    if (!cfg.dataset.enrolled_ids.empty()) d["enrolled_ids"] = cfg.dataset.enrolled_ids;
    if (!cfg.dataset.negative_ids.empty()) d["negative_ids"] = cfg.dataset.negative_ids;
    if (!cfg.dataset.intruder_ids.empty()) d["intruder_ids"] = cfg.dataset.intruder_ids;
    d["enrollment_fraction"] = number_out(cfg.dataset.enrollment_fraction);
    d["bin_count"] = cfg.dataset.bin_count;
    d["smoothing_floor"] = number_out(cfg.dataset.smoothing_floor);
    j["dataset"] = std::move(d);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

namespace detail {

template <class Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const unsigned workers = static_cast<unsigned>(
      std::min<std::size_t>(jobs, n));
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

/// Trials plus whatever profile flavor drives them. Synthetic trials share
/// one score-profile set; protocol trials carry their own user profiles.
struct TrialSet {
  std::vector<TrialStream> streams;
  std::vector<ScoreProfile> score_profiles;
  std::vector<ProtocolTrial> protocol;
  bool is_synthetic = true;

  std::size_t size() const { return is_synthetic ? streams.size() : protocol.size(); }

  const TrialStream& stream(std::size_t i) const {
    return is_synthetic ? streams[i] : protocol[i].stream;
  }

  TrialPath path(std::size_t i, const DetectorConfig& cfg) const {
    if (is_synthetic)
      return trace_path(std::span<const ScoreProfile>(score_profiles), cfg, streams[i]);
    return trace_path(std::span<const UserProfile>(protocol[i].profiles), cfg,
                      protocol[i].stream);
  }

  RunResult run_first(const DetectorConfig& cfg) const {
    if (is_synthetic)
      return run_stream(std::span<const ScoreProfile>(score_profiles), cfg, streams[0]);
    return run_stream(std::span<const UserProfile>(protocol[0].profiles), cfg,
                      protocol[0].stream);
  }

  std::size_t user_count() const {
    return is_synthetic ? score_profiles.size()
                        : (protocol.empty() ? 0 : protocol[0].profiles.size());
  }
};

inline DistributionModel shifted_matched(const SyntheticSpec& s, std::size_t user_index) {
  if (s.user_mean_spread == 0.0 || s.matched.kind() != DistributionKind::Gaussian)
    return s.matched;
  return DistributionModel::gaussian(
      s.matched.mean() + s.user_mean_spread * static_cast<double>(user_index),
      s.matched.stddev());
}

inline TrialSet build_trial_set(const ExperimentConfig& cfg, const FeatureTable* table,
                                std::size_t users) {
  TrialSet set;
  if (cfg.mode == ExperimentMode::Synthetic) {
    set.is_synthetic = true;
    std::vector<SyntheticSegment> segments;
    for (std::size_t i = 0; i < users; ++i) {
      const std::string label = "user" + std::to_string(i + 1);
      const DistributionModel matched = shifted_matched(cfg.synthetic, i);
      segments.push_back(SyntheticSegment{matched, cfg.synthetic.segment_length, label});
      set.score_profiles.push_back(ScoreProfile{label, matched, cfg.synthetic.nonmatched});
    }
    set.streams = build_synthetic_trials(segments, cfg.synthetic.nonmatched,
                                         cfg.synthetic.intruder_length,
                                         cfg.synthetic.trials,
                                         derive_seed(cfg.seed, {1, users}));
  } else {
    set.is_synthetic = false;
    ProtocolSpec spec;
    const auto all_ids = table->user_ids();
    if (!cfg.dataset.enrolled_ids.empty()) {
      spec.enrolled_pool = cfg.dataset.enrolled_ids;
    } else {
      if (all_ids.size() < cfg.dataset.enrolled_count)
        throw ConfigError("dataset.enrolled_count",
                          "dataset has only " + std::to_string(all_ids.size()) + " users");
      spec.enrolled_pool.assign(all_ids.begin(),
                                all_ids.begin() + static_cast<std::ptrdiff_t>(cfg.dataset.enrolled_count));
    }
    if (!cfg.dataset.negative_ids.empty()) {
      spec.negative_ids = cfg.dataset.negative_ids;
    } else {
      const std::size_t lo = cfg.dataset.enrolled_count;
      const std::size_t hi = lo + cfg.dataset.negative_count;
      if (all_ids.size() < hi)
        throw ConfigError("dataset.negative_count", "not enough users for the negative split");
      spec.negative_ids.assign(all_ids.begin() + static_cast<std::ptrdiff_t>(lo),
                               all_ids.begin() + static_cast<std::ptrdiff_t>(hi));
    }
    if (!cfg.dataset.intruder_ids.empty()) {
      spec.intruder_ids = cfg.dataset.intruder_ids;
    } else {
      const std::size_t hi = cfg.dataset.enrolled_count + cfg.dataset.negative_count;
      if (all_ids.size() <= hi)
        throw ConfigError("dataset.path", "no users left over to act as intruders");
      spec.intruder_ids.assign(all_ids.begin() + static_cast<std::ptrdiff_t>(hi), all_ids.end());
    }
    if (users > spec.enrolled_pool.size())
      throw ConfigError("users", "more users per group than the enrolled pool holds");
    spec.users_per_group = users;
    spec.enrollment_fraction = cfg.dataset.enrollment_fraction;
    spec.fit = DistributionFitConfig{cfg.dataset.bin_count, cfg.dataset.smoothing_floor};
    set.protocol = build_protocol_trials(*table, spec, derive_seed(cfg.seed, {2, users}));
  }
  return set;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

struct SummaryCell {
  bool present = false;
  bool achieved = false;
  double add = 0.0;
};

inline std::string render_summary(const ExperimentConfig& cfg,
                                  const std::vector<MetricsReport>& reports,
                                  double sampling_period_s) {
  std::ostringstream out;
  out << "qid experiment summary\n";
  out << "mode=" << (cfg.mode == ExperimentMode::Synthetic ? "synthetic" : "dataset")
      << " seed=" << cfg.seed << " users=" << cfg.users_min << ".." << cfg.users_max
      << "\n";
  char period[96];
  std::snprintf(period, sizeof period,
                "ADD in observation steps; 1 step = %g s of stream time\n",
                sampling_period_s);
  out << period;
  char buf[64];
  for (std::size_t ai = 0; ai < cfg.alphas.size(); ++ai) {
    std::snprintf(buf, sizeof buf, "%g", cfg.alphas[ai]);
    out << "\nADD at PFD <= " << buf << " (N/A = not achieved)\n";
    out << "  algorithm";
    for (std::size_t u = cfg.users_min; u <= cfg.users_max; ++u) {
      std::snprintf(buf, sizeof buf, "%10s", ("U=" + std::to_string(u)).c_str());
      out << buf;
    }
    out << "\n";
    for (Algorithm a : cfg.algorithms) {
      std::snprintf(buf, sizeof buf, "  %-9s", algorithm_name(a));
      out << buf;
      for (std::size_t u = cfg.users_min; u <= cfg.users_max; ++u) {
        SummaryCell cell;
        for (const auto& r : reports) {
          if (r.algorithm != algorithm_name(a) || r.user_count != u) continue;
          if (ai < r.add_at_alpha.size()) {
            cell.present = true;
            cell.achieved = r.add_at_alpha[ai].achieved;
            cell.add = r.add_at_alpha[ai].add;
          }
        }
        if (!cell.present)
          std::snprintf(buf, sizeof buf, "%10s", "-");
        else if (!cell.achieved)
          std::snprintf(buf, sizeof buf, "%10s", "N/A");
        else
          std::snprintf(buf, sizeof buf, "%10.3f", cell.add);
        out << buf;
      }
      out << "\n";
    }
  }
  return out.str();
}

}  // namespace detail

struct EmitOptions {
  bool manifests = true;
  bool streams = false;
  bool outcomes = true;
  bool curves = true;
  bool reports = true;
  bool summary = true;
  bool detect = true;  // false: generation only (simulate)
};

/// Orchestrates enroll -> generate trials -> run detectors -> aggregate.
/// Throws ConfigError / FileOpenError; use the exit-code wrappers below
/// from command-line entry points.
inline void run_experiment_files(const ExperimentConfig& cfg, const EmitOptions& emit) {
  validate_config(cfg);
  namespace fs = std::filesystem;
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);

  detail::write_json_file(out / "config.json", config_to_json(cfg));

  std::optional<FeatureTable> table;
  if (cfg.mode == ExperimentMode::Dataset) {
    std::ifstream in(cfg.dataset.path);
    if (!in) throw FileOpenError("cannot open dataset '" + cfg.dataset.path + "'");
    table = load_features_csv(in);
  }

  std::vector<MetricsReport> reports;
  double sampling_period_s = 3.0;
  for (std::size_t users = cfg.users_min; users <= cfg.users_max; ++users) {
    log_info("building trials for U=" + std::to_string(users));
    const detail::TrialSet set =
        detail::build_trial_set(cfg, table ? &*table : nullptr, users);
    const std::string u_tag = "U" + std::to_string(users);
    if (set.size() > 0) sampling_period_s = set.stream(0).sampling_period_s;

    if (emit.manifests) {
      json manifests = json::array();
      for (std::size_t i = 0; i < set.size(); ++i)
        manifests.push_back(manifest_to_json(set.stream(i)));
      detail::write_json_file(out / ("manifests_" + u_tag + ".json"), manifests);
    }
    if (emit.streams && cfg.mode == ExperimentMode::Synthetic) {
      const fs::path dir = out / ("streams_" + u_tag);
      fs::create_directories(dir);
      for (const auto& s : set.streams) {
        std::ofstream os(dir / (s.trial_id + ".csv"));
        write_stream_csv(os, s);
      }
    }
    if (!emit.detect) continue;

    for (Algorithm algo : cfg.algorithms) {
      DetectorConfig dcfg;
      dcfg.algorithm = algo;
      dcfg.threshold = 1.0;  // sweeps pick the reported operating point
      dcfg.skip_floor = cfg.detector.gamma;
      dcfg.skip_increment = cfg.detector.skip_increment;
      dcfg.decay = cfg.detector.decay_lambda;

      log_info(std::string("running ") + algorithm_name(algo) + " over " +
               std::to_string(set.size()) + " trials (" + u_tag + ")");
      std::vector<TrialPath> paths(set.size());
      detail::parallel_for(set.size(), cfg.jobs,
                           [&](std::size_t i) { paths[i] = set.path(i, dcfg); });

      const std::vector<double> grid =
          cfg.detector.thresholds.empty()
              ? auto_threshold_grid(paths, cfg.detector.threshold_count)
              : cfg.detector.thresholds;

      MetricsReport report = sweep_paths(paths, grid, cfg.alphas,
                                         /*operating_threshold=*/grid.back());
      // Headline metrics sit at the first achieved alpha's threshold.
      for (const auto& q : report.add_at_alpha) {
        if (!q.achieved) continue;
        set_operating_point(report, paths, q.threshold);
        break;
      }
      report.algorithm = algorithm_name(algo);
      report.user_count = users;
      report.seed = cfg.seed;
      reports.push_back(report);

      const std::string tag = std::string(algorithm_name(algo)) + "_" + u_tag;
      if (emit.reports)
        detail::write_json_file(out / ("report_" + tag + ".json"), report_to_json(report));
      if (emit.curves) {
        std::ofstream os(out / ("curve_" + tag + ".csv"));
        write_curve_csv(os, report);
      }
      if (emit.outcomes) {
        const auto outcomes = outcomes_at(paths, report.threshold);
        std::ofstream os(out / ("outcomes_" + tag + ".csv"));
        write_outcomes_csv(os, outcomes, cfg.seed);
      }
      if (cfg.trace) {
        DetectorConfig traced = dcfg;
        traced.threshold = report.threshold;
        const RunResult first = set.run_first(traced);
        std::ofstream os(out / ("trace_" + tag + ".csv"));
        write_trace_csv(os, first);
      }
    }
  }

  if (emit.detect && emit.summary) {
    const std::string summary = detail::render_summary(cfg, reports, sampling_period_s);
    detail::write_text_file(out / "summary.txt", summary);
    std::cout << summary;
  }
}

inline int exit_code_for(const std::exception_ptr& err) {
  try {
    std::rethrow_exception(err);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const FileOpenError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

/// Full experiment; returns a process exit status.
inline int run_experiment(const ExperimentConfig& cfg) {
  try {
    run_experiment_files(cfg, EmitOptions{});
    return 0;
  } catch (...) {
    return exit_code_for(std::current_exception());
  }
}

/// Curve/report emission only (no outcome CSVs, no summary table).
inline int run_sweep(const ExperimentConfig& cfg) {
  EmitOptions emit;
  emit.outcomes = false;
  emit.summary = false;
  try {
    run_experiment_files(cfg, emit);
    return 0;
  } catch (...) {
    return exit_code_for(std::current_exception());
  }
}

/// Trial generation only: manifests plus synthetic stream CSVs.
inline int run_simulate(const ExperimentConfig& cfg) {
  EmitOptions emit;
  emit.streams = true;
  emit.detect = false;
  try {
    run_experiment_files(cfg, emit);
    return 0;
  } catch (...) {
    return exit_code_for(std::current_exception());
  }
}

/// Builds one profile per enrolled-pool user from its seeded enrollment
/// split and writes profiles.json.
inline int run_enroll(const ExperimentConfig& cfg) {
  try {
    validate_config(cfg);
    if (cfg.mode != ExperimentMode::Dataset)
      throw ConfigError("mode", "enroll requires dataset mode");
    std::ifstream in(cfg.dataset.path);
    if (!in) throw FileOpenError("cannot open dataset '" + cfg.dataset.path + "'");
    const FeatureTable table = load_features_csv(in);

    std::vector<std::string> pool;
    std::vector<FeatureVector> negatives;
    {
      const auto all_ids = table.user_ids();
      pool = !cfg.dataset.enrolled_ids.empty()
                 ? cfg.dataset.enrolled_ids
                 : std::vector<std::string>(all_ids.begin(),
                                            all_ids.begin() + static_cast<std::ptrdiff_t>(
                                                std::min(cfg.dataset.enrolled_count, all_ids.size())));
      std::vector<std::string> neg_ids = cfg.dataset.negative_ids;
      if (neg_ids.empty()) {
        const std::size_t lo = cfg.dataset.enrolled_count;
        const std::size_t hi = std::min(lo + cfg.dataset.negative_count, all_ids.size());
        neg_ids.assign(all_ids.begin() + static_cast<std::ptrdiff_t>(std::min(lo, all_ids.size())),
                       all_ids.begin() + static_cast<std::ptrdiff_t>(hi));
      }
      for (const auto& id : neg_ids) {
        const UserFrames* u = table.find(id);
        if (u == nullptr) throw ConfigError("dataset.negative_ids", "unknown user '" + id + "'");
        negatives.insert(negatives.end(), u->features.begin(), u->features.end());
      }
      if (negatives.empty())
        throw ConfigError("dataset.negative_count", "no negative frames available");
    }

    const DistributionFitConfig fit{cfg.dataset.bin_count, cfg.dataset.smoothing_floor};
    json profiles = json::array();
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const UserFrames* u = table.find(pool[i]);
      if (u == nullptr) throw ConfigError("dataset.enrolled_ids", "unknown user '" + pool[i] + "'");
      const std::size_t n = u->features.size();
      const std::size_t k = static_cast<std::size_t>(
          std::llround(cfg.dataset.enrollment_fraction * static_cast<double>(n)));
      if (k < 2)
        throw ConfigError("dataset.enrollment_fraction",
                          "user '" + pool[i] + "' gets fewer than 2 enrollment frames");
      std::mt19937_64 gen(derive_seed(cfg.seed, {3, i}));
      const auto chosen = detail::sample_without_replacement(gen, n, k);
      std::vector<FeatureVector> enrollment;
      for (std::size_t idx : chosen) enrollment.push_back(u->features[idx]);
      profiles.push_back(profile_to_json(build_profile(pool[i], std::move(enrollment),
                                                       negatives, fit)));
    }
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    detail::write_json_file(fs::path(cfg.out_dir) / "profiles.json", profiles);
    return 0;
  } catch (...) {
    return exit_code_for(std::current_exception());
  }
}

/// Recomputes aggregate metrics from emitted outcome CSVs and prints one
/// line per file.
inline int run_report(const std::string& dir) {
  try {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir))
      throw FileOpenError("not a directory: '" + dir + "'");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("outcomes_", 0) == 0 && entry.path().extension() == ".csv")
        files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw FileOpenError("no outcomes_*.csv files in '" + dir + "'");
    for (const auto& f : files) {
      std::ifstream in(f);
      if (!in) throw FileOpenError("cannot open '" + f.string() + "'");
      const auto outcomes = load_outcomes_csv(in);
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "%s: trials=%zu add=%.6f pfd=%.6f apo=%.6f pdc=%.6f censored=%zu",
                    f.filename().string().c_str(), outcomes.size(), compute_add(outcomes),
                    compute_pfd(outcomes), compute_apo(outcomes), compute_pdc(outcomes),
                    censored_count(outcomes));
      std::cout << buf << "\n";
    }
    return 0;
  } catch (...) {
    return exit_code_for(std::current_exception());
  }
}

}  // namespace qid
