#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qid/distribution.hpp"
#include "qid/format.hpp"

namespace qid {

/// Opening a required input file failed. Callers map this to its own
/// exit status, distinct from semantic input errors.
struct FileOpenError : std::runtime_error {
  explicit FileOpenError(const std::string& what) : std::runtime_error(what) {}
};

/// One ingested embedding. Features are read from files, never computed
/// here; any feature extractor that emits fixed-length real vectors works.
struct FeatureVector {
  std::vector<double> components;

  std::size_t dimension() const noexcept { return components.size(); }
};

inline void validate_feature(const FeatureVector& v, const std::string& what) {
  if (v.components.empty())
    throw std::invalid_argument(what + ": feature vector is empty");
  double sq = 0.0;
  for (double c : v.components) {
    if (!std::isfinite(c))
      throw std::invalid_argument(what + ": feature component is not finite");
    sq += c * c;
  }
  if (sq == 0.0) throw std::invalid_argument(what + ": feature vector has zero norm");
}

/// Cosine distance 1 - (a.b)/(|a||b|), in [0, 2]. The similarity is
/// clamped to [-1, 1] before subtraction so rounding cannot push the
/// result outside the range.
inline double cosine_distance(const FeatureVector& a, const FeatureVector& b) {
  if (a.dimension() != b.dimension())
    throw std::invalid_argument("cosine_distance: dimension mismatch");
  if (a.components.empty())
    throw std::invalid_argument("cosine_distance: empty vectors");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.components.size(); ++i) {
    dot += a.components[i] * b.components[i];
    na += a.components[i] * a.components[i];
    nb += b.components[i] * b.components[i];
  }
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("cosine_distance: zero-norm vector");
  const double sim = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
  return 1.0 - sim;
}

/// One enrolled user: template gallery plus the matched (legitimate-user)
/// and non-matched (everyone else) score distributions for the gallery's
/// nearest-template classifier.
struct UserProfile {
  std::string user_id;
  std::vector<FeatureVector> templates;
  DistributionModel matched;
  DistributionModel nonmatched;
};

/// Distribution pair without a template gallery, for streams that carry
/// precomputed scalar scores instead of features.
struct ScoreProfile {
  std::string user_id;
  DistributionModel matched;
  DistributionModel nonmatched;
};

inline ScoreProfile to_score_profile(const UserProfile& p) {
  return ScoreProfile{p.user_id, p.matched, p.nonmatched};
}

/// Dissimilarity of `query` to the nearest template: min over the gallery
/// of cosine distance. 0 means the query is parallel to some template.
inline double classifier_score(std::span<const FeatureVector> templates,
                               const FeatureVector& query) {
  if (templates.empty())
    throw std::invalid_argument("classifier_score: no templates");
  double best = std::numeric_limits<double>::infinity();
  for (const FeatureVector& t : templates)
    best = std::min(best, cosine_distance(query, t));
  return best;
}

inline double classifier_score(const UserProfile& profile, const FeatureVector& query) {
  return classifier_score(std::span<const FeatureVector>(profile.templates), query);
}

struct DistributionFitConfig {
  int bin_count = 50;
  double smoothing_floor = 1e-6;
};

/// Builds a user profile. Matched scores come from leave-one-out matching
/// inside the enrollment set (self-pairs would all score 0); non-matched
/// scores pool every negative vector against the full gallery.
inline UserProfile build_profile(std::string user_id,
                                 std::vector<FeatureVector> enrollment_features,
                                 std::span<const FeatureVector> negative_features,
                                 const DistributionFitConfig& fit = {}) {
  if (enrollment_features.size() < 2)
    throw std::invalid_argument("build_profile: user '" + user_id +
                                "' needs at least 2 enrollment vectors");
  if (negative_features.empty())
    throw std::invalid_argument("build_profile: no negative features");
  const std::size_t dim = enrollment_features.front().dimension();
  for (const auto& v : enrollment_features) {
    validate_feature(v, "enrollment feature of '" + user_id + "'");
    if (v.dimension() != dim)
      throw std::invalid_argument("build_profile: enrollment dimension mismatch");
  }
  for (const auto& v : negative_features) {
    validate_feature(v, "negative feature");
    if (v.dimension() != dim)
      throw std::invalid_argument("build_profile: negative dimension mismatch");
  }

  std::vector<double> matched_scores;
  matched_scores.reserve(enrollment_features.size());
  for (std::size_t i = 0; i < enrollment_features.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < enrollment_features.size(); ++j) {
      if (j == i) continue;
      best = std::min(best, cosine_distance(enrollment_features[i], enrollment_features[j]));
    }
    matched_scores.push_back(best);
  }

  std::vector<double> nonmatched_scores;
  nonmatched_scores.reserve(negative_features.size());
  for (const auto& z : negative_features)
    nonmatched_scores.push_back(
        classifier_score(std::span<const FeatureVector>(enrollment_features), z));

  DistributionModel matched =
      fit_empirical(matched_scores, fit.bin_count, fit.smoothing_floor);
  DistributionModel nonmatched =
      fit_empirical(nonmatched_scores, fit.bin_count, fit.smoothing_floor);

  return UserProfile{std::move(user_id), std::move(enrollment_features),
                     std::move(matched), std::move(nonmatched)};
}

// ---------------------------------------------------------------------------
// Feature ingestion
// ---------------------------------------------------------------------------

struct UserFrames {
  std::string user_id;
  std::vector<long long> frame_indices;  // strictly increasing
  std::vector<FeatureVector> features;
};

/// All frames of a dataset, grouped per user in file order. File order
/// defines the protocol's user ordering.
struct FeatureTable {
  std::vector<UserFrames> users;
  std::size_t dimension = 0;

  const UserFrames* find(const std::string& user_id) const {
    for (const auto& u : users)
      if (u.user_id == user_id) return &u;
    return nullptr;
  }

  std::vector<std::string> user_ids() const {
    std::vector<std::string> ids;
    ids.reserve(users.size());
    for (const auto& u : users) ids.push_back(u.user_id);
    return ids;
  }
};

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}
}  // namespace detail

/// Parses the feature CSV format: header `user_id,frame_index,f0,...,f{d-1}`,
/// rows grouped by user with strictly increasing frame_index inside a group.
inline FeatureTable load_features_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument("feature CSV: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "user_id" || header[1] != "frame_index")
    throw std::invalid_argument(
        "feature CSV: header must start with user_id,frame_index,f0,...");
  const std::size_t dim = header.size() - 2;
  for (std::size_t i = 0; i < dim; ++i)
    if (header[i + 2] != "f" + std::to_string(i))
      throw std::invalid_argument("feature CSV: expected column f" + std::to_string(i));

  FeatureTable table;
  table.dimension = dim;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != dim + 2)
      throw std::invalid_argument("feature CSV line " + std::to_string(line_no) +
                                  ": expected " + std::to_string(dim + 2) + " cells");
    const std::string& uid = cells[0];
    long long frame = 0;
    try {
      frame = std::stoll(cells[1]);
    } catch (const std::exception&) {
      throw std::invalid_argument("feature CSV line " + std::to_string(line_no) +
                                  ": bad frame_index");
    }
    FeatureVector v;
    v.components.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      char* end = nullptr;
      v.components[i] = std::strtod(cells[i + 2].c_str(), &end);
      if (end == cells[i + 2].c_str() || *end != '\0')
        throw std::invalid_argument("feature CSV line " + std::to_string(line_no) +
                                    ": bad value in f" + std::to_string(i));
    }
    validate_feature(v, "feature CSV line " + std::to_string(line_no));

    if (table.users.empty() || table.users.back().user_id != uid) {
      for (const auto& u : table.users)
        if (u.user_id == uid)
          throw std::invalid_argument("feature CSV: rows of user '" + uid +
                                      "' are not contiguous");
      table.users.push_back(UserFrames{uid, {}, {}});
    }
    UserFrames& u = table.users.back();
    if (!u.frame_indices.empty() && frame <= u.frame_indices.back())
      throw std::invalid_argument("feature CSV: frame_index not increasing for user '" +
                                  uid + "'");
    u.frame_indices.push_back(frame);
    u.features.push_back(std::move(v));
  }
  if (table.users.empty())
    throw std::invalid_argument("feature CSV: no data rows");
  return table;
}

inline void write_features_csv(std::ostream& out, const FeatureTable& table) {
  out << "user_id,frame_index";
  for (std::size_t i = 0; i < table.dimension; ++i) out << ",f" << i;
  out << "\n";
  for (const auto& u : table.users) {
    for (std::size_t r = 0; r < u.features.size(); ++r) {
      out << u.user_id << ',' << u.frame_indices[r];
      for (double c : u.features[r].components) out << ',' << dec17(c);
      out << "\n";
    }
  }
}

}  // namespace qid
