#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "qid/evaluation.hpp"
#include "qid/json_io.hpp"
#include "qid/stream.hpp"

using namespace qid;

namespace {

TrialOutcome outcome(bool declared, std::size_t tau, std::size_t change_point,
                     std::size_t length, std::size_t obs_pre, std::size_t obs_stop) {
  TrialOutcome o;
  o.trial_id = "t";
  o.declared = declared;
  if (declared) o.declaration_time = tau;
  o.change_point = change_point;
  o.prechange_length = change_point;
  o.stream_length = length;
  o.observed_prechange = obs_pre;
  o.observed_to_stop = obs_stop;
  return o;
}

std::vector<TrialPath> gaussian_paths(Algorithm algo, std::size_t trials,
                                      std::size_t prechange, std::size_t postchange,
                                      std::uint64_t seed) {
  const auto f0 = DistributionModel::gaussian(0.0, 1.0);
  const auto f1 = DistributionModel::gaussian(1.0, 1.0);
  const std::vector<ScoreProfile> profiles{{"u", f0, f1}};
  std::vector<TrialStream> streams;
  if (prechange > 0) {
    const std::vector<SyntheticSegment> pre{{f0, prechange, "u"}};
    streams = build_synthetic_trials(pre, f1, postchange, trials, seed);
  } else {
    const std::vector<SyntheticSegment> pre{{f1, postchange, "u"}};
    streams = build_synthetic_trials(pre, f1, 1, trials, seed);
    // all-post-change stream: relabel so the change point sits at zero
    for (auto& s : streams) {
      s.change_point = 0;
      for (auto& label : s.segment_labels) label = s.intruder_id;
    }
  }
  DetectorConfig cfg;
  cfg.algorithm = algo;
  cfg.threshold = 1.0;
  std::vector<TrialPath> paths;
  paths.reserve(streams.size());
  for (const auto& s : streams)
    paths.push_back(trace_path(std::span<const ScoreProfile>(profiles), cfg, s));
  return paths;
}

}  // namespace

TEST_CASE("compute_add averages positive-part delays") {
  std::vector<TrialOutcome> outcomes{
      outcome(true, 12, 10, 40, 10, 12),
      outcome(true, 15, 10, 40, 10, 15),
      outcome(true, 8, 10, 40, 8, 8),
  };
  CHECK(compute_add(outcomes) == doctest::Approx(7.0 / 3.0).epsilon(1e-12));

  std::vector<TrialOutcome> zero{outcome(true, 10, 10, 40, 10, 10)};
  CHECK(compute_add(zero) == 0.0);

  // undeclared trials are censored at stream end
  std::vector<TrialOutcome> censored{outcome(false, 0, 10, 40, 10, 40)};
  CHECK(compute_add(censored) == 30.0);
  CHECK(censored_count(censored) == 1);

  CHECK_THROWS_AS(compute_add(std::vector<TrialOutcome>{}), std::invalid_argument);
}

TEST_CASE("compute_pfd counts declarations strictly before the change") {
  std::vector<TrialOutcome> outcomes;
  for (int i = 0; i < 49; ++i) outcomes.push_back(outcome(true, 20, 10, 40, 10, 20));
  outcomes.push_back(outcome(true, 7, 10, 40, 7, 7));
  CHECK(compute_pfd(outcomes) == doctest::Approx(0.02).epsilon(1e-12));

  std::vector<TrialOutcome> clean{outcome(true, 10, 10, 40, 10, 10),
                                  outcome(false, 0, 10, 40, 10, 40)};
  CHECK(compute_pfd(clean) == 0.0);
  CHECK_THROWS_AS(compute_pfd(std::vector<TrialOutcome>{}), std::invalid_argument);
}

TEST_CASE("compute_apo is the mean observed fraction up to the stop") {
  std::vector<TrialOutcome> outcomes{outcome(true, 10, 20, 40, 4, 4)};
  CHECK(compute_apo(outcomes) == doctest::Approx(0.4).epsilon(1e-12));

  // every step observed -> exactly 1
  std::vector<TrialOutcome> full{outcome(false, 0, 10, 25, 10, 25),
                                 outcome(true, 9, 10, 25, 9, 9)};
  CHECK(compute_apo(full) == 1.0);
  CHECK_THROWS_AS(compute_apo(std::vector<TrialOutcome>{}), std::invalid_argument);
}

TEST_CASE("compute_pdc uses the pre-change horizon") {
  std::vector<TrialOutcome> outcomes{outcome(false, 0, 10, 40, 5, 20)};
  CHECK(compute_pdc(outcomes) == doctest::Approx(0.5).epsilon(1e-12));
  // stopped before the change: horizon is the stop time
  std::vector<TrialOutcome> early{outcome(true, 4, 10, 40, 2, 2)};
  CHECK(compute_pdc(early) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("outcome_at mirrors a stopped run exactly") {
  std::mt19937_64 gen(10);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> llrs(120);
    for (auto& v : llrs) v = 0.15 + standard_normal(gen);
    DetectorConfig cfg;
    cfg.algorithm = rep % 2 == 0 ? Algorithm::Mqid : Algorithm::Demqid;
    cfg.threshold = 2.5;
    const RunResult full = run_stream_llr(cfg, llrs, false);
    TrialPath path;
    path.trial_id = "p";
    path.change_point = 60;
    path.statistic = full.statistic_path;
    path.observed = full.state.observed_flags;

    const TrialOutcome o = outcome_at(path, cfg.threshold);
    const RunResult stopped = run_stream_llr(cfg, llrs, true);
    CHECK(o.declared == stopped.state.declared);
    if (o.declared) {
      CHECK(o.declaration_time == stopped.state.declaration_time);
      std::size_t observed = 0;
      for (bool f : stopped.state.observed_flags) observed += f ? 1 : 0;
      CHECK(o.observed_to_stop == observed);
    }
  }
}

TEST_CASE("MQID detection latency matches the first-passage oracle") {
  // all-post-change unit-shift streams: mean stopping time near
  // (threshold + overshoot) / KL with KL = 1/2
  const auto paths = gaussian_paths(Algorithm::Mqid, 2000, 0, 400, 321);
  const auto outcomes = outcomes_at(paths, 10.0);
  const double add = compute_add(outcomes);
  CHECK(add == doctest::Approx(22.2).epsilon(0.25));
  CHECK(compute_apo(outcomes) == 1.0);
}

TEST_CASE("DEMQID observes strictly less than MQID on the same streams") {
  const auto f0 = DistributionModel::gaussian(0.0, 1.0);
  const auto f1 = DistributionModel::gaussian(1.0, 1.0);
  const std::vector<ScoreProfile> profiles{{"u", f0, f1}};
  const std::vector<SyntheticSegment> pre{{f0, 150, "u"}};
  const auto streams = build_synthetic_trials(pre, f1, 150, 200, 55);

  DetectorConfig mqid;
  mqid.algorithm = Algorithm::Mqid;
  mqid.threshold = 4.0;
  DetectorConfig demqid = mqid;
  demqid.algorithm = Algorithm::Demqid;
  demqid.skip_increment = 0.1;
  demqid.skip_floor = 2.0;

  std::vector<TrialOutcome> mq, dq;
  for (const auto& s : streams) {
    mq.push_back(outcome_at(trace_path(std::span<const ScoreProfile>(profiles), mqid, s),
                            mqid.threshold));
    dq.push_back(outcome_at(trace_path(std::span<const ScoreProfile>(profiles), demqid, s),
                            demqid.threshold));
  }
  CHECK(compute_apo(mq) == 1.0);
  CHECK(compute_apo(dq) < compute_apo(mq));
  CHECK(compute_pdc(dq) < 1.0);
}

TEST_CASE("sweeps are monotone in the threshold") {
  const auto paths = gaussian_paths(Algorithm::Mqid, 400, 80, 200, 77);
  const auto grid = auto_threshold_grid(paths, 40);
  const std::vector<double> alphas{0.02, 0.05};
  const MetricsReport report = sweep_paths(paths, grid, alphas, grid.back());

  REQUIRE(report.curve.size() == grid.size());
  // curve is ordered by descending threshold
  for (std::size_t i = 1; i < report.curve.size(); ++i) {
    CHECK(report.curve[i - 1].threshold > report.curve[i].threshold);
    CHECK(report.curve[i - 1].pfd <= report.curve[i].pfd);
    CHECK(report.curve[i - 1].add >= report.curve[i].add);
  }
}

TEST_CASE("alpha queries pick the smallest achieving threshold or mark N/A") {
  const auto paths = gaussian_paths(Algorithm::Mqid, 500, 60, 200, 13);
  const auto grid = auto_threshold_grid(paths, 50);
  const std::vector<double> alphas{0.05, 1e-9};
  const MetricsReport report = sweep_paths(paths, grid, alphas, grid.back());

  REQUIRE(report.add_at_alpha.size() == 2);
  const AlphaQuery& q = report.add_at_alpha[0];
  CHECK(q.achieved);
  CHECK(q.pfd <= 0.05);
  // every smaller grid threshold must miss the target
  for (const auto& pt : report.curve)
    if (pt.threshold < q.threshold) CHECK(pt.pfd > 0.05);

  // 1e-9 is unreachable on 500 trials unless pfd is exactly 0 somewhere;
  // if achieved it must be at pfd == 0
  const AlphaQuery& strict = report.add_at_alpha[1];
  if (strict.achieved) CHECK(strict.pfd == 0.0);
}

TEST_CASE("duplicated profiles reproduce the single-user metrics exactly") {
  const auto f0 = DistributionModel::gaussian(0.0, 1.0);
  const auto f1 = DistributionModel::gaussian(1.0, 1.0);
  const ScoreProfile p{"u", f0, f1};
  const std::vector<ScoreProfile> one{p};
  const std::vector<ScoreProfile> three{p, p, p};
  const std::vector<SyntheticSegment> pre{{f0, 60, "u"}};
  const auto streams = build_synthetic_trials(pre, f1, 120, 150, 2025);

  DetectorConfig cfg;
  cfg.algorithm = Algorithm::Demqid;
  cfg.threshold = 3.0;
  const std::vector<double> grid{0.5, 1.0, 2.0, 4.0, 8.0};
  const std::vector<double> alphas{0.02};
  const MetricsReport a = sweep_threshold(std::span<const ScoreProfile>(one), cfg,
                                          streams, grid, alphas);
  const MetricsReport b = sweep_threshold(std::span<const ScoreProfile>(three), cfg,
                                          streams, grid, alphas);
  REQUIRE(a.curve.size() == b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].pfd == b.curve[i].pfd);
    CHECK(a.curve[i].add == b.curve[i].add);
    CHECK(a.curve[i].apo == b.curve[i].apo);
  }
  CHECK(a.add == b.add);
  CHECK(a.pfd == b.pfd);
  CHECK(a.apo == b.apo);
}

TEST_CASE("outcome CSV round-trips and metrics recompute exactly") {
  const auto paths = gaussian_paths(Algorithm::Demqid, 150, 40, 120, 31);
  const auto outcomes = outcomes_at(paths, 2.0);

  std::stringstream ss;
  write_outcomes_csv(ss, outcomes, 31);
  const auto loaded = load_outcomes_csv(ss);
  REQUIRE(loaded.size() == outcomes.size());
  CHECK(compute_add(loaded) == compute_add(outcomes));
  CHECK(compute_pfd(loaded) == compute_pfd(outcomes));
  CHECK(compute_apo(loaded) == compute_apo(outcomes));
  CHECK(compute_pdc(loaded) == compute_pdc(outcomes));
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    CHECK(loaded[i].trial_id == outcomes[i].trial_id);
    CHECK(loaded[i].declared == outcomes[i].declared);
    CHECK(loaded[i].declaration_time == outcomes[i].declaration_time);
  }
}

TEST_CASE("curve CSV round-trips bit-exactly") {
  const auto paths = gaussian_paths(Algorithm::Mqid, 100, 30, 90, 63);
  const auto grid = auto_threshold_grid(paths, 12);
  MetricsReport report = sweep_paths(paths, grid, std::vector<double>{0.05}, grid.back());
  report.seed = 63;

  std::stringstream ss;
  write_curve_csv(ss, report);
  const auto points = load_curve_csv(ss);
  REQUIRE(points.size() == report.curve.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    CHECK(points[i].threshold == report.curve[i].threshold);
    CHECK(points[i].pfd == report.curve[i].pfd);
    CHECK(points[i].add == report.curve[i].add);
    CHECK(points[i].apo == report.curve[i].apo);
  }
}

TEST_CASE("report JSON round-trips") {
  const auto paths = gaussian_paths(Algorithm::Mqid, 80, 20, 60, 8);
  const auto grid = auto_threshold_grid(paths, 8);
  MetricsReport report = sweep_paths(paths, grid, std::vector<double>{0.05, 0.001},
                                     grid.back());
  report.algorithm = "MQID";
  report.user_count = 2;
  report.seed = 8;

  const json j = report_to_json(report);
  CHECK(j.at("algorithm") == "MQID");
  CHECK(j.at("U") == 2);
  CHECK(j.contains("points"));
  CHECK(j.contains("add_at_alpha"));

  const MetricsReport parsed = report_from_json(j);
  CHECK(parsed.algorithm == report.algorithm);
  CHECK(parsed.user_count == report.user_count);
  CHECK(parsed.seed == report.seed);
  CHECK(parsed.add == report.add);
  CHECK(parsed.pfd == report.pfd);
  CHECK(parsed.apo == report.apo);
  REQUIRE(parsed.curve.size() == report.curve.size());
  for (std::size_t i = 0; i < parsed.curve.size(); ++i)
    CHECK(parsed.curve[i].threshold == report.curve[i].threshold);
  REQUIRE(parsed.add_at_alpha.size() == report.add_at_alpha.size());
  for (std::size_t i = 0; i < parsed.add_at_alpha.size(); ++i) {
    CHECK(parsed.add_at_alpha[i].achieved == report.add_at_alpha[i].achieved);
    CHECK(parsed.add_at_alpha[i].add == report.add_at_alpha[i].add);
  }
}

TEST_CASE("sweep input validation") {
  const auto paths = gaussian_paths(Algorithm::Mqid, 10, 10, 20, 1);
  const std::vector<double> alphas{0.05};
  CHECK_THROWS_AS(sweep_paths(paths, std::vector<double>{}, alphas, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(sweep_paths(paths, std::vector<double>{2.0, 1.0}, alphas, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(sweep_paths(std::vector<TrialPath>{}, std::vector<double>{1.0},
                              alphas, 1.0),
                  std::invalid_argument);
}
