#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qid/enrollment.hpp"
#include "qid/format.hpp"
#include "qid/random.hpp"

namespace qid {

/// A finite observation sequence with a ground-truth change point.
/// Dataset streams carry feature vectors; synthetic streams carry scalar
/// scores directly. Indices below `change_point` belong to enrolled
/// users, indices at or past it to the intruder.
struct TrialStream {
  std::string trial_id;
  std::vector<FeatureVector> features;   // dataset mode
  std::vector<double> scores;            // synthetic mode
  std::vector<std::string> segment_labels;
  std::vector<long long> frame_indices;  // dataset mode provenance
  std::size_t change_point = 0;          // index of first intruder observation
  double sampling_period_s = 3.0;        // metadata only
  std::uint64_t seed = 0;
  std::vector<std::string> enrolled_ids;
  std::string intruder_id;

  bool synthetic() const noexcept { return features.empty(); }
  std::size_t size() const noexcept {
    return synthetic() ? scores.size() : features.size();
  }

  void validate() const {
    if (size() == 0) throw std::invalid_argument("trial stream is empty");
    if (!features.empty() && !scores.empty())
      throw std::invalid_argument("trial stream carries both features and scores");
    if (change_point > size())
      throw std::invalid_argument("change point past end of stream");
    if (segment_labels.size() != size())
      throw std::invalid_argument("segment labels out of step with observations");
    for (std::size_t i = change_point; i < size(); ++i)
      if (segment_labels[i] != intruder_id)
        throw std::invalid_argument("post-change observation not labeled as intruder");
    for (std::size_t i = 0; i < change_point; ++i)
      if (segment_labels[i] == intruder_id)
        throw std::invalid_argument("pre-change observation labeled as intruder");
  }
};

/// Dataset split and grouping parameters. `enrolled_pool` is partitioned
/// in order into disjoint groups of `users_per_group`; leftovers that do
/// not fill a group are dropped.
struct ProtocolSpec {
  std::vector<std::string> enrolled_pool;
  std::vector<std::string> negative_ids;
  std::vector<std::string> intruder_ids;
  std::size_t users_per_group = 1;
  double enrollment_fraction = 0.10;
  DistributionFitConfig fit;

  void validate() const {
    if (enrolled_pool.empty() || negative_ids.empty() || intruder_ids.empty())
      throw std::invalid_argument("protocol needs enrolled, negative, and intruder ids");
    if (users_per_group == 0 || users_per_group > enrolled_pool.size())
      throw std::invalid_argument("users_per_group out of range");
    if (!(enrollment_fraction > 0.0) || !(enrollment_fraction < 1.0))
      throw std::invalid_argument("enrollment_fraction must lie in (0,1)");
    auto overlaps = [](const std::vector<std::string>& a,
                       const std::vector<std::string>& b) {
      for (const auto& x : a)
        if (std::find(b.begin(), b.end(), x) != b.end()) return true;
      return false;
    };
    if (overlaps(enrolled_pool, negative_ids) || overlaps(enrolled_pool, intruder_ids) ||
        overlaps(negative_ids, intruder_ids))
      throw std::invalid_argument("enrolled, negative, and intruder id sets must be disjoint");
  }
};

struct ProtocolTrial {
  std::vector<UserProfile> profiles;
  TrialStream stream;
};

/// Consecutive disjoint groups of `group_size`; floor(n / group_size) of them.
inline std::vector<std::vector<std::string>> partition_groups(
    std::span<const std::string> ids, std::size_t group_size) {
  if (group_size == 0) throw std::invalid_argument("group size must be positive");
  std::vector<std::vector<std::string>> groups;
  const std::size_t count = ids.size() / group_size;
  groups.reserve(count);
  for (std::size_t g = 0; g < count; ++g)
    groups.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(g * group_size),
                        ids.begin() + static_cast<std::ptrdiff_t>((g + 1) * group_size));
  return groups;
}

namespace detail {

// Uniform sample of `count` positions out of `n`, without replacement,
// returned sorted. Partial Fisher-Yates on an index array.
inline std::vector<std::size_t> sample_without_replacement(std::mt19937_64& gen,
                                                           std::size_t n,
                                                           std::size_t count) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(gen() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

/// Builds one trial per (group, intruder) pair. Per user, an
/// enrollment_fraction share of frames (seeded, without replacement)
/// becomes the profile and is removed from the test stream; the remaining
/// frames of the group's users are concatenated in pool order and the
/// intruder's full frame sequence is appended. Every trial reseeds from
/// (seed, group index, intruder index), so any single trial is
/// reproducible in isolation.
inline std::vector<ProtocolTrial> build_protocol_trials(const FeatureTable& dataset,
                                                        const ProtocolSpec& spec,
                                                        std::uint64_t seed) {
  spec.validate();
  auto frames_of = [&dataset](const std::string& id) -> const UserFrames& {
    const UserFrames* u = dataset.find(id);
    if (u == nullptr)
      throw std::invalid_argument("dataset has no user '" + id + "'");
    return *u;
  };
  for (const auto& id : spec.enrolled_pool) frames_of(id);

  std::vector<FeatureVector> negatives;
  for (const auto& id : spec.negative_ids) {
    const UserFrames& u = frames_of(id);
    negatives.insert(negatives.end(), u.features.begin(), u.features.end());
  }
  if (negatives.empty())
    throw std::invalid_argument("negative users contribute no frames");

  const auto groups = partition_groups(spec.enrolled_pool, spec.users_per_group);
  std::vector<ProtocolTrial> trials;
  trials.reserve(groups.size() * spec.intruder_ids.size());

  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t j = 0; j < spec.intruder_ids.size(); ++j) {
      const std::string& intruder_id = spec.intruder_ids[j];
      const UserFrames& intruder = frames_of(intruder_id);
      if (intruder.features.empty())
        throw std::invalid_argument("intruder '" + intruder_id + "' has no frames");

      std::mt19937_64 gen(derive_seed(seed, {g, j}));
      ProtocolTrial trial;
      trial.stream.trial_id = "g" + std::to_string(g) + "_" + intruder_id;
      trial.stream.seed = derive_seed(seed, {g, j});
      trial.stream.enrolled_ids = groups[g];
      trial.stream.intruder_id = intruder_id;

      for (const auto& uid : groups[g]) {
        const UserFrames& u = frames_of(uid);
        const std::size_t n = u.features.size();
        const std::size_t k = static_cast<std::size_t>(
            std::llround(spec.enrollment_fraction * static_cast<double>(n)));
        if (k < 2)
          throw std::invalid_argument(
              "user '" + uid + "' has too few frames: the " +
              std::to_string(spec.enrollment_fraction) +
              " enrollment split leaves fewer than 2 enrollment vectors");
        const auto chosen = detail::sample_without_replacement(gen, n, k);

        std::vector<FeatureVector> enrollment;
        enrollment.reserve(k);
        std::vector<char> is_enrolled(n, 0);
        for (std::size_t idx : chosen) {
          enrollment.push_back(u.features[idx]);
          is_enrolled[idx] = 1;
        }
        trial.profiles.push_back(
            build_profile(uid, std::move(enrollment), negatives, spec.fit));

        for (std::size_t idx = 0; idx < n; ++idx) {
          if (is_enrolled[idx]) continue;
          trial.stream.features.push_back(u.features[idx]);
          trial.stream.frame_indices.push_back(u.frame_indices[idx]);
          trial.stream.segment_labels.push_back(uid);
        }
      }

      trial.stream.change_point = trial.stream.features.size();
      for (std::size_t idx = 0; idx < intruder.features.size(); ++idx) {
        trial.stream.features.push_back(intruder.features[idx]);
        trial.stream.frame_indices.push_back(intruder.frame_indices[idx]);
        trial.stream.segment_labels.push_back(intruder_id);
      }
      trial.stream.validate();
      trials.push_back(std::move(trial));
    }
  }
  return trials;
}

/// One pre-change segment: scores drawn i.i.d. from `model` for `length`
/// steps, labeled with the segment's user id.
struct SyntheticSegment {
  DistributionModel model;
  std::size_t length = 0;
  std::string label;
};

/// Seeded synthetic trials: scalar scores, one segment per enrolled user,
/// then `intruder_length` draws from `postchange`. change_point is the
/// total pre-change length.
inline std::vector<TrialStream> build_synthetic_trials(
    std::span<const SyntheticSegment> prechange, const DistributionModel& postchange,
    std::size_t intruder_length, std::size_t trial_count, std::uint64_t seed,
    const std::string& intruder_label = "intruder") {
  if (trial_count == 0) throw std::invalid_argument("trial_count must be >= 1");
  if (intruder_length == 0) throw std::invalid_argument("intruder_length must be positive");
  for (const auto& seg : prechange)
    if (seg.length == 0) throw std::invalid_argument("segment lengths must be positive");

  std::vector<TrialStream> trials;
  trials.reserve(trial_count);
  for (std::size_t t = 0; t < trial_count; ++t) {
    std::mt19937_64 gen(derive_seed(seed, {t}));
    TrialStream s;
    s.trial_id = "t" + std::to_string(t);
    s.seed = derive_seed(seed, {t});
    s.intruder_id = intruder_label;
    for (const auto& seg : prechange) {
      s.enrolled_ids.push_back(seg.label);
      for (std::size_t i = 0; i < seg.length; ++i) {
        s.scores.push_back(seg.model.sample(gen));
        s.segment_labels.push_back(seg.label);
      }
    }
    s.change_point = s.scores.size();
    for (std::size_t i = 0; i < intruder_length; ++i) {
      s.scores.push_back(postchange.sample(gen));
      s.segment_labels.push_back(intruder_label);
    }
    s.validate();
    trials.push_back(std::move(s));
  }
  return trials;
}

/// CSV export of a synthetic stream: `n,score,segment_label`, 1-based n.
inline void write_stream_csv(std::ostream& out, const TrialStream& s) {
  if (!s.synthetic())
    throw std::invalid_argument("stream CSV export is for synthetic streams");
  out << "# seed=" << s.seed << "\n";
  out << "n,score,segment_label\n";
  for (std::size_t i = 0; i < s.scores.size(); ++i)
    out << (i + 1) << ',' << dec17(s.scores[i]) << ',' << s.segment_labels[i] << "\n";
}

/// Reloads a synthetic stream CSV. The change point is recovered as the
/// first row labeled `intruder_label`.
inline TrialStream load_stream_csv(std::istream& in,
                                   const std::string& intruder_label = "intruder") {
  TrialStream s;
  s.trial_id = "loaded";
  s.intruder_id = intruder_label;
  std::string line;
  bool header_seen = false;
  bool change_seen = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      const std::string tag = "# seed=";
      if (line.rfind(tag, 0) == 0) s.seed = std::stoull(line.substr(tag.size()));
      continue;
    }
    if (!header_seen) {
      if (line != "n,score,segment_label")
        throw std::invalid_argument("stream CSV: unexpected header");
      header_seen = true;
      continue;
    }
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 3)
      throw std::invalid_argument("stream CSV line " + std::to_string(line_no) +
                                  ": expected 3 cells");
    char* end = nullptr;
    const double score = std::strtod(cells[1].c_str(), &end);
    if (end == cells[1].c_str() || *end != '\0')
      throw std::invalid_argument("stream CSV line " + std::to_string(line_no) +
                                  ": bad score");
    if (!change_seen && cells[2] == intruder_label) {
      s.change_point = s.scores.size();
      change_seen = true;
    }
    s.scores.push_back(score);
    s.segment_labels.push_back(cells[2]);
    if (cells[2] != intruder_label &&
        (s.enrolled_ids.empty() || s.enrolled_ids.back() != cells[2]))
      s.enrolled_ids.push_back(cells[2]);
  }
  if (!header_seen) throw std::invalid_argument("stream CSV: missing header");
  if (!change_seen) s.change_point = s.scores.size();
  s.validate();
  return s;
}

}  // namespace qid
