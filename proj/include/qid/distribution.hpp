#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qid/random.hpp"

namespace qid {

enum class DistributionKind { Gaussian, Beta, Histogram };

/// Evaluable probability density over scalar dissimilarity scores.
/// Either an analytic family (gaussian, beta) or a smoothed histogram
/// estimated from samples. Immutable after construction; safe to share
/// across threads.
///
/// Log densities are finite for every finite query: histogram queries
/// fall back to the smoothing floor outside the support and in empty
/// bins, and the beta family clamps at a tiny positive density outside
/// (0,1). A log-likelihood ratio of two models is therefore always
/// finite.
class DistributionModel {
 public:
  static DistributionModel gaussian(double mean, double stddev) {
    if (!std::isfinite(mean) || !std::isfinite(stddev) || stddev <= 0.0)
      throw std::invalid_argument("gaussian requires finite mean and stddev > 0");
    DistributionModel m;
    m.kind_ = DistributionKind::Gaussian;
    m.a_ = mean;
    m.b_ = stddev;
    return m;
  }

  static DistributionModel beta(double alpha, double beta) {
    if (!std::isfinite(alpha) || !std::isfinite(beta) || alpha <= 0.0 || beta <= 0.0)
      throw std::invalid_argument("beta requires alpha > 0 and beta > 0");
    DistributionModel m;
    m.kind_ = DistributionKind::Beta;
    m.a_ = alpha;
    m.b_ = beta;
    m.beta_log_norm_ = std::lgamma(alpha + beta) - std::lgamma(alpha) - std::lgamma(beta);
    return m;
  }

  static DistributionModel histogram(std::vector<double> bin_edges,
                                     std::vector<double> bin_masses,
                                     double smoothing_floor) {
    if (bin_edges.size() < 2 || bin_masses.size() + 1 != bin_edges.size())
      throw std::invalid_argument("histogram needs n+1 edges for n bins, n >= 1");
    if (!(smoothing_floor > 0.0) || !std::isfinite(smoothing_floor))
      throw std::invalid_argument("smoothing_floor must be positive and finite");
    double total = 0.0;
    for (double m : bin_masses) {
      if (!std::isfinite(m) || m < 0.0)
        throw std::invalid_argument("bin masses must be finite and nonnegative");
      total += m;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw std::invalid_argument("bin masses must sum to 1 within 1e-9");
    for (std::size_t i = 0; i + 1 < bin_edges.size(); ++i) {
      if (!std::isfinite(bin_edges[i]) || !(bin_edges[i] < bin_edges[i + 1]))
        throw std::invalid_argument("bin edges must be finite and strictly increasing");
    }
    DistributionModel m;
    m.kind_ = DistributionKind::Histogram;
    m.edges_ = std::move(bin_edges);
    m.masses_ = std::move(bin_masses);
    m.floor_ = smoothing_floor;
    m.rebuild_histogram_tables();
    return m;
  }

  DistributionKind kind() const noexcept { return kind_; }

  double mean() const { require(DistributionKind::Gaussian); return a_; }
  double stddev() const { require(DistributionKind::Gaussian); return b_; }
  double alpha() const { require(DistributionKind::Beta); return a_; }
  double beta_param() const { require(DistributionKind::Beta); return b_; }
  const std::vector<double>& bin_edges() const { require(DistributionKind::Histogram); return edges_; }
  const std::vector<double>& bin_masses() const { require(DistributionKind::Histogram); return masses_; }
  double smoothing_floor() const { require(DistributionKind::Histogram); return floor_; }

  /// Support interval; gaussian support is the whole real line.
  std::pair<double, double> support() const {
    switch (kind_) {
      case DistributionKind::Gaussian:
        return {-std::numeric_limits<double>::infinity(),
                std::numeric_limits<double>::infinity()};
      case DistributionKind::Beta:
        return {0.0, 1.0};
      case DistributionKind::Histogram:
        return {edges_.front(), edges_.back()};
    }
    throw std::logic_error("unreachable");
  }

  double log_density(double s) const {
    if (!std::isfinite(s)) throw std::invalid_argument("score must be finite");
    switch (kind_) {
      case DistributionKind::Gaussian: {
        const double z = (s - a_) / b_;
        return -0.5 * z * z - std::log(b_) - 0.5 * std::log(2.0 * std::numbers::pi);
      }
      case DistributionKind::Beta: {
        // Endpoints are excluded: the density there is 0 or unbounded
        // depending on the shape, so both map to the evaluation floor.
        if (s <= 0.0 || s >= 1.0) return kLogTinyDensity;
        return (a_ - 1.0) * std::log(s) + (b_ - 1.0) * std::log1p(-s) + beta_log_norm_;
      }
      case DistributionKind::Histogram: {
        if (s < edges_.front() || s > edges_.back()) return std::log(floor_);
        return bin_log_density_[bin_index(s)];
      }
    }
    throw std::logic_error("unreachable");
  }

  double density(double s) const { return std::exp(log_density(s)); }

  /// Seeded draw. Deterministic across platforms: only engine output and
  /// portable arithmetic are used.
  double sample(std::mt19937_64& gen) const {
    switch (kind_) {
      case DistributionKind::Gaussian:
        return a_ + b_ * standard_normal(gen);
      case DistributionKind::Beta: {
        const double x = gamma_sample(gen, a_);
        const double y = gamma_sample(gen, b_);
        return x / (x + y);
      }
      case DistributionKind::Histogram: {
        const double u = uniform_unit(gen);
        const auto it = std::lower_bound(cum_masses_.begin(), cum_masses_.end(), u);
        const std::size_t i = static_cast<std::size_t>(it - cum_masses_.begin());
        const double lo_mass = i == 0 ? 0.0 : cum_masses_[i - 1];
        const double within = (u - lo_mass) / masses_[i];
        return edges_[i] + within * (edges_[i + 1] - edges_[i]);
      }
    }
    throw std::logic_error("unreachable");
  }

  friend bool operator==(const DistributionModel& x, const DistributionModel& y) {
    return x.kind_ == y.kind_ && x.a_ == y.a_ && x.b_ == y.b_ &&
           x.floor_ == y.floor_ && x.edges_ == y.edges_ && x.masses_ == y.masses_;
  }

 private:
  DistributionModel() = default;

  void require(DistributionKind k) const {
    if (kind_ != k) throw std::logic_error("accessor does not match distribution kind");
  }

  std::size_t bin_index(double s) const {
    // Lower-inclusive bins; the last bin also includes its upper edge.
    const auto it = std::upper_bound(edges_.begin(), edges_.end(), s);
    std::size_t i = static_cast<std::size_t>(it - edges_.begin());
    if (i == 0) return 0;
    i -= 1;
    return std::min(i, masses_.size() - 1);
  }

  void rebuild_histogram_tables() {
    bin_log_density_.resize(masses_.size());
    cum_masses_.resize(masses_.size());
    double cum = 0.0;
    for (std::size_t i = 0; i < masses_.size(); ++i) {
      const double width = edges_[i + 1] - edges_[i];
      bin_log_density_[i] = std::log(std::max(masses_[i] / width, floor_));
      cum += masses_[i];
      cum_masses_[i] = cum;
    }
    cum_masses_.back() = 1.0;
  }

  static constexpr double kLogTinyDensity = -690.77552789821368;  // log(1e-300)

  DistributionKind kind_ = DistributionKind::Gaussian;
  double a_ = 0.0;  // mean or alpha
  double b_ = 1.0;  // stddev or beta
  double floor_ = 0.0;
  double beta_log_norm_ = 0.0;
  std::vector<double> edges_;
  std::vector<double> masses_;
  std::vector<double> bin_log_density_;
  std::vector<double> cum_masses_;
};

/// Histogram fit with additive smoothing. The fit range defaults to the
/// observed sample range widened by 5% (a degenerate range falls back to
/// unit width around the single value); pass `range` to pin it instead.
/// Each bin receives `smoothing_floor` pseudo-mass before normalization,
/// so no bin ever has zero mass. Bin edges are fixed at fit time.
inline DistributionModel fit_empirical(
    std::span<const double> samples, int bin_count, double smoothing_floor,
    std::optional<std::pair<double, double>> range = std::nullopt) {
  if (samples.empty()) throw std::invalid_argument("cannot fit a distribution to no samples");
  if (bin_count < 2) throw std::invalid_argument("bin_count must be at least 2");
  if (!(smoothing_floor > 0.0) || !std::isfinite(smoothing_floor))
    throw std::invalid_argument("smoothing_floor must be positive and finite");
  for (double s : samples)
    if (!std::isfinite(s)) throw std::invalid_argument("samples must be finite");

  double lo, hi;
  if (range) {
    lo = range->first;
    hi = range->second;
    if (!(lo < hi)) throw std::invalid_argument("fit range must have lo < hi");
    for (double s : samples)
      if (s < lo || s > hi)
        throw std::invalid_argument("sample outside the explicit fit range");
  } else {
    lo = *std::min_element(samples.begin(), samples.end());
    hi = *std::max_element(samples.begin(), samples.end());
    const double width = hi - lo;
    if (width == 0.0) {
      lo -= 0.5;
      hi += 0.5;
    } else {
      lo -= 0.025 * width;
      hi += 0.025 * width;
    }
  }

  const std::size_t bins = static_cast<std::size_t>(bin_count);
  std::vector<double> edges(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i)
    edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  edges.front() = lo;
  edges.back() = hi;

  std::vector<double> counts(bins, 0.0);
  for (double s : samples) {
    const auto it = std::upper_bound(edges.begin(), edges.end(), s);
    std::size_t i = it == edges.begin() ? 0 : static_cast<std::size_t>(it - edges.begin()) - 1;
    counts[std::min(i, bins - 1)] += 1.0;
  }

  const double norm = static_cast<double>(samples.size()) +
                      static_cast<double>(bins) * smoothing_floor;
  std::vector<double> masses(bins);
  for (std::size_t i = 0; i < bins; ++i) masses[i] = (counts[i] + smoothing_floor) / norm;

  return DistributionModel::histogram(std::move(edges), std::move(masses), smoothing_floor);
}

inline double log_density(const DistributionModel& model, double s) {
  return model.log_density(s);
}

/// log f1(s) - log f0(s); positive values are evidence that the score was
/// produced by f1 rather than f0. Finite for every finite s.
inline double log_likelihood_ratio(const DistributionModel& f1,
                                   const DistributionModel& f0, double s) {
  return f1.log_density(s) - f0.log_density(s);
}

}  // namespace qid
