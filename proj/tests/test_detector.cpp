#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "qid/detector.hpp"
#include "qid/random.hpp"

using namespace qid;

namespace {

DetectorConfig make_config(Algorithm a, double threshold) {
  DetectorConfig c;
  c.algorithm = a;
  c.threshold = threshold;
  return c;
}

std::vector<double> random_llrs(std::mt19937_64& gen, std::size_t n, double mean,
                                double sd) {
  std::vector<double> llrs(n);
  for (auto& v : llrs) v = mean + sd * standard_normal(gen);
  return llrs;
}

}  // namespace

TEST_CASE("should_observe follows the sign rule only for DEMQID") {
  DetectorConfig demqid = make_config(Algorithm::Demqid, 5.0);
  DetectorState s;
  s.statistic = -0.01;
  CHECK_FALSE(should_observe(s, demqid));
  s.statistic = 0.0;
  CHECK(should_observe(s, demqid));

  DetectorConfig mqid = make_config(Algorithm::Mqid, 5.0);
  s.statistic = -5.0;
  CHECK(should_observe(s, mqid));
}

TEST_CASE("update arithmetic per algorithm") {
  SUBCASE("DEMQID skip ramps toward zero") {
    DetectorConfig c = make_config(Algorithm::Demqid, 5.0);
    c.skip_increment = 0.1;
    DetectorState s;
    s.statistic = -0.3;
    update(s, c, std::nullopt);
    CHECK(s.statistic == doctest::Approx(-0.2).epsilon(1e-12));
    CHECK(s.observed_flags == std::vector<bool>{false});
  }
  SUBCASE("DEMQID observe clamps at the floor") {
    DetectorConfig c = make_config(Algorithm::Demqid, 5.0);
    c.skip_floor = 2.0;
    DetectorState s;
    s.statistic = 0.2;
    update(s, c, -5.0);
    CHECK(s.statistic == -2.0);
  }
  SUBCASE("MQID adds without clamps") {
    DetectorConfig c = make_config(Algorithm::Mqid, 5.0);
    DetectorState s;
    s.statistic = 1.0;
    update(s, c, -0.4);
    CHECK(s.statistic == doctest::Approx(0.6).epsilon(1e-12));
  }
  SUBCASE("DEMQID declares on first passage") {
    DetectorConfig c = make_config(Algorithm::Demqid, 0.4);
    c.skip_floor = 2.0;
    DetectorState s;
    s.statistic = 0.0;
    s.time = 7;
    update(s, c, 0.5);
    CHECK(s.statistic == 0.5);
    CHECK(s.declared);
    CHECK(s.declaration_time == 8);
  }
  SUBCASE("CUSUM_MIN_LLR clamps below at zero") {
    DetectorConfig c = make_config(Algorithm::CusumMinLlr, 5.0);
    DetectorState s;
    update(s, c, -3.0);
    CHECK(s.statistic == 0.0);
  }
  SUBCASE("SSA is memoryless") {
    DetectorConfig c = make_config(Algorithm::Ssa, 5.0);
    DetectorState s;
    update(s, c, 2.0);
    update(s, c, -1.0);
    CHECK(s.statistic == -1.0);
  }
  SUBCASE("TIME_DECAY applies geometric memory") {
    DetectorConfig c = make_config(Algorithm::TimeDecay, 5.0);
    c.decay = 0.5;
    DetectorState s;
    update(s, c, 2.0);
    update(s, c, 1.0);
    CHECK(s.statistic == doctest::Approx(2.0).epsilon(1e-12));
  }
}

TEST_CASE("update contract violations throw") {
  DetectorConfig demqid = make_config(Algorithm::Demqid, 0.1);
  DetectorState s;
  s.statistic = -1.0;
  CHECK_THROWS_AS(update(s, demqid, 1.0), std::logic_error);  // skip step given L

  DetectorState t;
  CHECK_THROWS_AS(update(t, demqid, std::nullopt), std::logic_error);  // observe step, no L

  DetectorConfig mqid = make_config(Algorithm::Mqid, 0.1);
  DetectorState u;
  update(u, mqid, 1.0);  // declares (1.0 > 0.1)
  REQUIRE(u.declared);
  CHECK_THROWS_AS(update(u, mqid, 1.0), std::logic_error);
  reset(u);
  CHECK(u.statistic == 0.0);
  CHECK_FALSE(u.declared);
  CHECK(u.time == 1);  // step count preserved
  update(u, mqid, 0.05);
  CHECK_FALSE(u.declared);
}

TEST_CASE("config validation") {
  DetectorConfig c = make_config(Algorithm::Mqid, 0.0);
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = make_config(Algorithm::Ssa, -1.0);  // non-cumulative may use any threshold
  CHECK_NOTHROW(c.validate());
  c = make_config(Algorithm::Demqid, 1.0);
  c.skip_increment = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = make_config(Algorithm::TimeDecay, 1.0);
  c.decay = 1.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("fused_statistic takes the minimum over users") {
  // gaussian pairs engineered to give per-user ratios {0.7, -0.2, 0.3} at s=0
  const double r = std::sqrt(0.4);
  std::vector<ScoreProfile> profiles{
      {"a", DistributionModel::gaussian(1.2, 1.0), DistributionModel::gaussian(0.2, 1.0)},
      {"b", DistributionModel::gaussian(0.0, 1.0), DistributionModel::gaussian(r, 1.0)},
      {"c", DistributionModel::gaussian(1.0, 1.0), DistributionModel::gaussian(r, 1.0)},
  };
  CHECK(fused_statistic(profiles, 0.0) == doctest::Approx(-0.2).epsilon(1e-12));

  // singleton equals the plain ratio; duplicates change nothing
  std::vector<ScoreProfile> one{profiles[1]};
  const double single = fused_statistic(one, 0.0);
  CHECK(single == doctest::Approx(-0.2).epsilon(1e-12));
  std::vector<ScoreProfile> dup{profiles[1], profiles[1]};
  CHECK(fused_statistic(dup, 0.0) == single);

  CHECK_THROWS_AS(fused_statistic(std::vector<ScoreProfile>{}, 0.0), std::invalid_argument);
}

TEST_CASE("run over unit increments declares at the expected step") {
  const std::vector<double> ones(30, 1.0);
  const RunResult r = run_stream_llr(make_config(Algorithm::Mqid, 10.0), ones);
  REQUIRE(r.state.declared);
  CHECK(*r.state.declaration_time == 11);

  const std::vector<double> minus_ones(100, -1.0);
  const RunResult q = run_stream_llr(make_config(Algorithm::Mqid, 10.0), minus_ones);
  CHECK_FALSE(q.state.declared);
  CHECK(q.state.time == 100);
}

TEST_CASE("DEMQID floor and skip-ceiling invariants hold on random streams") {
  std::mt19937_64 gen(2024);
  for (int rep = 0; rep < 30; ++rep) {
    DetectorConfig c = make_config(Algorithm::Demqid, 1e18);
    c.skip_floor = 0.5 + 2.0 * uniform_unit(gen);
    c.skip_increment = 0.05 + 0.3 * uniform_unit(gen);
    const auto llrs = random_llrs(gen, 400, -0.3, 1.0);
    const RunResult r = run_stream_llr(c, llrs, false);
    for (std::size_t i = 0; i < r.statistic_path.size(); ++i) {
      CHECK(r.statistic_path[i] >= -c.skip_floor);
      if (!r.state.observed_flags[i]) CHECK(r.statistic_path[i] <= 0.0);
    }
  }
}

TEST_CASE("skipped steps never evaluate the likelihood") {
  DetectorConfig c = make_config(Algorithm::Demqid, 1e18);
  c.skip_increment = 0.1;
  std::mt19937_64 gen(7);
  const auto llrs = random_llrs(gen, 1000, -0.5, 1.0);
  std::size_t calls = 0;
  const RunResult r = run_detector(c, llrs.size(), [&](std::size_t i) {
    ++calls;
    return llrs[i];
  }, false);
  std::size_t observed = 0;
  for (bool f : r.state.observed_flags) observed += f ? 1 : 0;
  CHECK(calls == observed);
  CHECK(calls == r.llr_evaluations);
  CHECK(observed < llrs.size());  // the skip rule must engage on drift-down streams
}

TEST_CASE("DEMQID observes less than every step on pre-change data") {
  // scores from the matched model, ratios against a unit mean shift
  const auto f0 = DistributionModel::gaussian(0.0, 1.0);
  const auto f1 = DistributionModel::gaussian(1.0, 1.0);
  std::vector<ScoreProfile> profiles{{"u", f0, f1}};
  std::mt19937_64 gen(42);
  DetectorConfig c = make_config(Algorithm::Demqid, 1e18);
  c.skip_increment = 0.1;
  c.skip_floor = 2.0;
  std::size_t observed = 0, total = 0;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> scores(500);
    for (auto& s : scores) s = f0.sample(gen);
    const RunResult r = run_detector(c, scores.size(), [&](std::size_t i) {
      return fused_statistic(profiles, scores[i]);
    }, false);
    for (bool f : r.state.observed_flags) observed += f ? 1 : 0;
    total += scores.size();
  }
  CHECK(observed < total);
  CHECK(double(observed) / double(total) < 0.9);
}

TEST_CASE("identical inputs give identical runs") {
  std::mt19937_64 gen(77);
  const auto llrs = random_llrs(gen, 300, 0.0, 1.0);
  for (Algorithm a : {Algorithm::Mqid, Algorithm::Demqid, Algorithm::CusumMinLlr,
                      Algorithm::Ssa, Algorithm::TimeDecay}) {
    const DetectorConfig c = make_config(a, 4.0);
    const RunResult r1 = run_stream_llr(c, llrs, false);
    const RunResult r2 = run_stream_llr(c, llrs, false);
    CHECK(r1.statistic_path == r2.statistic_path);
    CHECK(r1.state.observed_flags == r2.state.observed_flags);
  }
}

TEST_CASE("declaration time is nondecreasing in the threshold") {
  std::mt19937_64 gen(88);
  for (int rep = 0; rep < 20; ++rep) {
    const auto llrs = random_llrs(gen, 200, 0.2, 1.0);
    for (Algorithm a : {Algorithm::Mqid, Algorithm::Demqid, Algorithm::CusumMinLlr}) {
      std::size_t prev = 0;
      for (double threshold : {0.5, 1.0, 2.0, 4.0, 8.0}) {
        const RunResult r = run_stream_llr(make_config(a, threshold), llrs);
        const std::size_t tau =
            r.state.declared ? *r.state.declaration_time : llrs.size() + 1;
        CHECK(tau >= prev);
        prev = tau;
      }
    }
  }
}

TEST_CASE("CUSUM_MIN_LLR statistic never goes negative") {
  std::mt19937_64 gen(3);
  const auto llrs = random_llrs(gen, 2000, -0.2, 1.5);
  const RunResult r = run_stream_llr(make_config(Algorithm::CusumMinLlr, 1e18), llrs, false);
  for (double w : r.statistic_path) CHECK(w >= 0.0);
}

TEST_CASE("SSA declares at the first ratio above the threshold") {
  std::mt19937_64 gen(4);
  for (int rep = 0; rep < 25; ++rep) {
    const auto llrs = random_llrs(gen, 150, 0.0, 2.0);
    const double threshold = 3.0;
    const RunResult r = run_stream_llr(make_config(Algorithm::Ssa, threshold), llrs);
    std::size_t expected = 0;
    for (std::size_t i = 0; i < llrs.size(); ++i) {
      if (llrs[i] > threshold) {
        expected = i + 1;
        break;
      }
    }
    if (expected == 0) {
      CHECK_FALSE(r.state.declared);
    } else {
      REQUIRE(r.state.declared);
      CHECK(*r.state.declaration_time == expected);
    }
  }
}

TEST_CASE("trace CSV has the documented shape") {
  DetectorConfig c = make_config(Algorithm::Demqid, 0.8);
  c.skip_increment = 0.5;
  const std::vector<double> llrs{-0.4, 0.6, 1.2, 1.0};
  const RunResult r = run_stream_llr(c, llrs);
  std::stringstream ss;
  write_trace_csv(ss, r);
  std::string line;
  std::getline(ss, line);
  CHECK(line == "n,observed,L_or_empty,W,declared");
  std::getline(ss, line);
  CHECK(line.substr(0, 4) == "1,1,");  // first step observes (statistic starts at 0)
  // skip rows carry an empty L column
  std::getline(ss, line);
  CHECK(line.substr(0, 4) == "2,0,");
  CHECK(line.find(",,") != std::string::npos);
}

TEST_CASE("trace CSV round-trips") {
  std::mt19937_64 gen(91);
  DetectorConfig c = make_config(Algorithm::Demqid, 2.5);
  const auto llrs = random_llrs(gen, 80, 0.1, 1.0);
  const RunResult r = run_stream_llr(c, llrs);
  std::stringstream ss;
  write_trace_csv(ss, r);
  const auto rows = load_trace_csv(ss);
  REQUIRE(rows.size() == r.statistic_path.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].step == i + 1);
    CHECK(rows[i].observed == static_cast<bool>(r.state.observed_flags[i]));
    CHECK(rows[i].statistic == r.statistic_path[i]);
    if (rows[i].observed) CHECK(*rows[i].llr == r.llr_path[i]);
  }
  CHECK(rows.back().declared == r.state.declared);
}
