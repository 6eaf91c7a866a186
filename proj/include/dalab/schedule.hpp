#pragma once

#include "dalab/core.hpp"

#include <cmath>
#include <vector>

namespace dalab {

/// Piecewise-constant function of time. Segments are contiguous and sorted;
/// times are in days.
class Schedule {
public:
  struct Segment {
    double start = 0.0;
    double end = 0.0;
    double value = 0.0;
  };

  Schedule() = default;
  explicit Schedule(std::vector<Segment> segments) : segments_(std::move(segments)) {
    for (std::size_t k = 0; k < segments_.size(); ++k) {
      require(segments_[k].end > segments_[k].start, "Schedule: empty or reversed segment");
      require(std::isfinite(segments_[k].value), "Schedule: non-finite value");
      if (k > 0)
        require(std::abs(segments_[k].start - segments_[k - 1].end) <= 1e-9 * (1.0 + segments_[k].start),
                "Schedule: segments must be contiguous");
    }
  }

  static Schedule constant(double value, double start, double end) {
    return Schedule({{start, end, value}});
  }

  const std::vector<Segment>& segments() const { return segments_; }
  bool empty() const { return segments_.empty(); }
  double start() const { return segments_.empty() ? 0.0 : segments_.front().start; }
  double end() const { return segments_.empty() ? 0.0 : segments_.back().end; }

  bool covers(double t0, double t1) const {
    const double tol = 1e-9 * (1.0 + std::abs(t1));
    return !segments_.empty() && start() <= t0 + tol && end() >= t1 - tol;
  }

  /// Value on the segment with start <= t < end; the last segment is closed.
  double value_at(double t) const {
    require(!segments_.empty(), "Schedule: empty schedule");
    for (const auto& s : segments_)
      if (t >= s.start && t < s.end) return s.value;
    if (t >= segments_.back().end - 1e-9 * (1.0 + std::abs(t)) && t <= segments_.back().end + 1e-9)
      return segments_.back().value;
    throw InvalidArgument("Schedule: time " + std::to_string(t) + " outside schedule");
  }

  /// Value in effect just before t (the rate that produced the state at t).
  double value_before(double t) const {
    for (const auto& s : segments_)
      if (t > s.start && t <= s.end) return s.value;
    return value_at(t);
  }

  /// Appends a segment continuing from the current end.
  Schedule extended(double end, double value) const {
    auto segs = segments_;
    segs.push_back({this->end(), end, value});
    return Schedule(std::move(segs));
  }

private:
  std::vector<Segment> segments_;
};

/// Uniform step grid of [0, horizon]; the final step may be shortened.
inline std::vector<double> step_times(double horizon, double dt) {
  require(horizon > 0.0 && dt > 0.0, "step_times: horizon and dt must be positive");
  std::vector<double> times{0.0};
  const double tol = 1e-9 * horizon;
  for (long k = 1;; ++k) {
    double t = k * dt;
    if (t >= horizon - tol) {
      times.push_back(horizon);
      break;
    }
    times.push_back(t);
  }
  return times;
}

/// Index of the step time equal to t (within round-off), or -1.
inline std::ptrdiff_t find_step(const std::vector<double>& times, double t) {
  const double tol = 1e-7 * (1.0 + std::abs(t));
  for (std::size_t k = 0; k < times.size(); ++k)
    if (std::abs(times[k] - t) <= tol) return std::ptrdiff_t(k);
  return -1;
}

}  // namespace dalab
