#pragma once

#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "qid/distribution.hpp"
#include "qid/enrollment.hpp"
#include "qid/evaluation.hpp"
#include "qid/format.hpp"
#include "qid/stream.hpp"

namespace qid {

using json = nlohmann::json;

/// Numeric parameters are emitted as decimal strings with 17 significant
/// digits, which round-trip bit-exactly. Parsing accepts plain JSON
/// numbers too, for hand-written files.
inline json number_out(double v) { return json(dec17(v)); }

inline double number_in(const json& j, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
      throw std::invalid_argument(where + ": bad number '" + s + "'");
    return v;
  }
  throw std::invalid_argument(where + ": expected a number");
}

inline const json& member(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key))
    throw std::invalid_argument(where + ": missing key '" + key + "'");
  return j.at(key);
}

// ---------------------------------------------------------------------------
// Distributions and profiles
// ---------------------------------------------------------------------------

inline json dist_to_json(const DistributionModel& m) {
  json j;
  switch (m.kind()) {
    case DistributionKind::Gaussian:
      j["kind"] = "analytic-gaussian";
      j["mean"] = number_out(m.mean());
      j["stddev"] = number_out(m.stddev());
      break;
    case DistributionKind::Beta:
      j["kind"] = "analytic-beta";
      j["alpha"] = number_out(m.alpha());
      j["beta"] = number_out(m.beta_param());
      break;
    case DistributionKind::Histogram: {
      j["kind"] = "empirical-histogram";
      json edges = json::array(), masses = json::array();
      for (double e : m.bin_edges()) edges.push_back(number_out(e));
      for (double w : m.bin_masses()) masses.push_back(number_out(w));
      j["bin_edges"] = std::move(edges);
      j["bin_masses"] = std::move(masses);
      j["smoothing_floor"] = number_out(m.smoothing_floor());
      break;
    }
  }
  return j;
}

inline DistributionModel dist_from_json(const json& j, const std::string& where = "distribution") {
  const std::string kind = member(j, "kind", where).get<std::string>();
  if (kind == "analytic-gaussian")
    return DistributionModel::gaussian(number_in(member(j, "mean", where), where + ".mean"),
                                       number_in(member(j, "stddev", where), where + ".stddev"));
  if (kind == "analytic-beta")
    return DistributionModel::beta(number_in(member(j, "alpha", where), where + ".alpha"),
                                   number_in(member(j, "beta", where), where + ".beta"));
  if (kind == "empirical-histogram") {
    std::vector<double> edges, masses;
    for (const auto& e : member(j, "bin_edges", where)) edges.push_back(number_in(e, where + ".bin_edges"));
    for (const auto& m : member(j, "bin_masses", where)) masses.push_back(number_in(m, where + ".bin_masses"));
    return DistributionModel::histogram(std::move(edges), std::move(masses),
                                        number_in(member(j, "smoothing_floor", where),
                                                  where + ".smoothing_floor"));
  }
  throw std::invalid_argument(where + ": unknown kind '" + kind + "'");
}

inline json profile_to_json(const UserProfile& p) {
  json j;
  j["user_id"] = p.user_id;
  json templates = json::array();
  for (const auto& t : p.templates) {
    json row = json::array();
    for (double c : t.components) row.push_back(number_out(c));
    templates.push_back(std::move(row));
  }
  j["templates"] = std::move(templates);
  j["matched"] = dist_to_json(p.matched);
  j["nonmatched"] = dist_to_json(p.nonmatched);
  return j;
}

inline UserProfile profile_from_json(const json& j) {
  const std::string where = "profile";
  std::vector<FeatureVector> templates;
  for (const auto& row : member(j, "templates", where)) {
    FeatureVector v;
    for (const auto& c : row) v.components.push_back(number_in(c, where + ".templates"));
    templates.push_back(std::move(v));
  }
  return UserProfile{member(j, "user_id", where).get<std::string>(), std::move(templates),
                     dist_from_json(member(j, "matched", where), where + ".matched"),
                     dist_from_json(member(j, "nonmatched", where), where + ".nonmatched")};
}

// ---------------------------------------------------------------------------
// Trial manifests
// ---------------------------------------------------------------------------

struct TrialManifest {
  std::string trial_id;
  std::vector<std::string> enrolled_ids;
  std::string intruder_id;
  std::size_t change_point = 0;
  std::size_t length = 0;
  std::uint64_t seed = 0;
};

inline json manifest_to_json(const TrialStream& s) {
  json j;
  j["trial_id"] = s.trial_id;
  j["enrolled_ids"] = s.enrolled_ids;
  j["intruder_id"] = s.intruder_id;
  j["change_point_T"] = s.change_point;
  j["length"] = s.size();
  j["seed"] = s.seed;
  return j;
}

inline TrialManifest manifest_from_json(const json& j) {
  const std::string where = "manifest";
  TrialManifest m;
  m.trial_id = member(j, "trial_id", where).get<std::string>();
  for (const auto& id : member(j, "enrolled_ids", where))
    m.enrolled_ids.push_back(id.get<std::string>());
  m.intruder_id = member(j, "intruder_id", where).get<std::string>();
  m.change_point = member(j, "change_point_T", where).get<std::size_t>();
  m.length = member(j, "length", where).get<std::size_t>();
  m.seed = member(j, "seed", where).get<std::uint64_t>();
  if (m.change_point > m.length)
    throw std::invalid_argument("manifest: change point past end of stream");
  return m;
}

// ---------------------------------------------------------------------------
// Metric reports
// ---------------------------------------------------------------------------

inline json report_to_json(const MetricsReport& r) {
  json j;
  j["algorithm"] = r.algorithm;
  j["U"] = r.user_count;
  j["seed"] = r.seed;
  j["trial_count"] = r.trial_count;
  j["threshold_A"] = number_out(r.threshold);
  j["add"] = number_out(r.add);
  j["pfd"] = number_out(r.pfd);
  j["apo"] = number_out(r.apo);
  j["pdc"] = number_out(r.pdc);
  j["censored"] = r.censored;
  json alphas = json::array();
  for (double a : r.alphas) alphas.push_back(number_out(a));
  j["alpha_queries"] = std::move(alphas);
  json points = json::array();
  for (const auto& pt : r.curve) {
    json p;
    p["A"] = number_out(pt.threshold);
    p["pfd"] = number_out(pt.pfd);
    p["add"] = number_out(pt.add);
    p["apo"] = number_out(pt.apo);
    points.push_back(std::move(p));
  }
  j["points"] = std::move(points);
  json add_at_alpha = json::object();
  json alpha_detail = json::array();
  for (const auto& q : r.add_at_alpha) {
    const std::string key = dec17(q.alpha);
    add_at_alpha[key] = q.achieved ? json(number_out(q.add)) : json(nullptr);
    json d;
    d["alpha"] = number_out(q.alpha);
    d["achieved"] = q.achieved;
    if (q.achieved) {
      d["A"] = number_out(q.threshold);
      d["add"] = number_out(q.add);
      d["pfd"] = number_out(q.pfd);
      d["apo"] = number_out(q.apo);
    }
    alpha_detail.push_back(std::move(d));
  }
  j["add_at_alpha"] = std::move(add_at_alpha);
  j["alpha_detail"] = std::move(alpha_detail);
  return j;
}

inline MetricsReport report_from_json(const json& j) {
  const std::string where = "report";
  MetricsReport r;
  r.algorithm = member(j, "algorithm", where).get<std::string>();
  r.user_count = member(j, "U", where).get<std::size_t>();
  r.seed = member(j, "seed", where).get<std::uint64_t>();
  r.trial_count = member(j, "trial_count", where).get<std::size_t>();
  r.threshold = number_in(member(j, "threshold_A", where), where);
  r.add = number_in(member(j, "add", where), where);
  r.pfd = number_in(member(j, "pfd", where), where);
  r.apo = number_in(member(j, "apo", where), where);
  r.pdc = number_in(member(j, "pdc", where), where);
  r.censored = member(j, "censored", where).get<std::size_t>();
  for (const auto& a : member(j, "alpha_queries", where))
    r.alphas.push_back(number_in(a, where + ".alpha_queries"));
  for (const auto& p : member(j, "points", where)) {
    CurvePoint pt;
    pt.threshold = number_in(member(p, "A", where), where + ".points");
    pt.pfd = number_in(member(p, "pfd", where), where + ".points");
    pt.add = number_in(member(p, "add", where), where + ".points");
    pt.apo = number_in(member(p, "apo", where), where + ".points");
    r.curve.push_back(pt);
  }
  for (const auto& d : member(j, "alpha_detail", where)) {
    AlphaQuery q;
    q.alpha = number_in(member(d, "alpha", where), where + ".alpha_detail");
    q.achieved = member(d, "achieved", where).get<bool>();
    if (q.achieved) {
      q.threshold = number_in(member(d, "A", where), where + ".alpha_detail");
      q.add = number_in(member(d, "add", where), where + ".alpha_detail");
      q.pfd = number_in(member(d, "pfd", where), where + ".alpha_detail");
      q.apo = number_in(member(d, "apo", where), where + ".alpha_detail");
    }
    r.add_at_alpha.push_back(q);
  }
  return r;
}

}  // namespace qid
