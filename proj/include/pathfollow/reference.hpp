#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "pathfollow/common.hpp"
#include "pathfollow/vehicle.hpp"

namespace pathfollow {

/// Target pose, speed and feed-forward command at one point of a path.
struct ReferencePoint {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double v = 0.0;
  double beta = 0.0;   // steering that reproduces the path curvature
  double alpha = 0.0;  // throttle that holds v on flat ground
};

/// Tracking error expressed in the vehicle body frame.
struct ErrorState {
  double along = 0.0;    // e1 [m], reference ahead is positive
  double cross = 0.0;    // e2 [m], reference to the left is positive
  double heading = 0.0;  // e3 [rad], theta_r - theta, wrapped
  double speed = 0.0;    // e4 [m/s], v_r - v

  std::array<double, 4> as_array() const { return {along, cross, heading, speed}; }
  static ErrorState from_array(std::span<const double, 4> e) { return {e[0], e[1], e[2], e[3]}; }
  bool finite() const {
    return std::isfinite(along) && std::isfinite(cross) && std::isfinite(heading) &&
           std::isfinite(speed);
  }
  friend bool operator==(const ErrorState&, const ErrorState&) = default;
};

/// Position error rotated into the vehicle frame; heading and speed errors
/// taken as plain differences.
inline ErrorState error_state(const VehicleState& q, const ReferencePoint& r) {
  const double dx = r.x - q.x;
  const double dy = r.y - q.y;
  const double c = std::cos(q.theta);
  const double s = std::sin(q.theta);
  return {c * dx + s * dy, -s * dx + c * dy, wrap_angle(r.theta - q.theta), r.v - q.v};
}

/// One sample of a reference path.
struct PathSample {
  double s = 0.0;      // arc length from the first sample [m]
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double v = 0.0;
  double kappa = 0.0;  // signed curvature [1/m], left turns positive
  double beta = 0.0;
  double alpha = 0.0;

  ReferencePoint point() const { return {x, y, theta, v, beta, alpha}; }
};

/// Result of looking up the reference for a vehicle pose.
struct ReferenceLookup {
  ReferencePoint point;
  std::size_t nearest = 0;  // index of the nearest sample
  std::size_t index = 0;    // index of the returned (look-ahead) sample
  ReferencePoint foot;      // the nearest point itself
};

/// Reference sources used by the closed-loop simulator: sampled paths and
/// analytic lines.
template <typename T>
concept ReferenceSource = requires(const T& r, const VehicleState& q, const ReferenceLookup& at, double lookahead) {
  { r.locate(q, lookahead) } -> std::convertible_to<ReferenceLookup>;
  { r.ahead(at, 1.0, lookahead) } -> std::convertible_to<ReferenceLookup>;
};

inline constexpr double kMaxSampleSpacing = 0.05;

/// Arc-length parameterized sequence of samples.
class ReferencePath {
 public:
  ReferencePath() = default;

  /// Takes ownership of `samples`; `s` must start at 0 and increase with
  /// spacing at most 0.05 m. For a closed path `length` includes the
  /// segment from the last sample back to the first.
  ReferencePath(std::vector<PathSample> samples, bool closed) : samples_(std::move(samples)), closed_(closed) {
    if (samples_.empty()) throw InvalidArgument("ReferencePath: no samples");
    for (std::size_t i = 1; i < samples_.size(); ++i) {
      const double ds = samples_[i].s - samples_[i - 1].s;
      if (!(ds > 0.0)) throw InvalidArgument("ReferencePath: arc length must increase");
      if (ds > kMaxSampleSpacing + 1e-9)
        throw InvalidArgument("ReferencePath: sample spacing exceeds 0.05 m");
    }
    length_ = samples_.back().s;
    if (closed_) {
      const double gap = std::hypot(samples_.front().x - samples_.back().x,
                                    samples_.front().y - samples_.back().y);
      if (gap > kMaxSampleSpacing + 1e-9)
        throw InvalidArgument("ReferencePath: closed path does not close within 0.05 m");
      length_ += gap;
    }
  }

  const std::vector<PathSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  bool closed() const { return closed_; }
  double length() const { return length_; }
  const PathSample& operator[](std::size_t i) const { return samples_[i]; }

  /// Nearest sample by Euclidean distance; ties go to the lowest index.
  std::size_t nearest_index(double x, double y) const {
    if (samples_.empty()) throw InvalidArgument("ReferencePath: empty path");
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const double dx = samples_[i].x - x;
      const double dy = samples_[i].y - y;
      const double d2 = dx * dx + dy * dy;
      if (d2 < best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    return best;
  }

  /// Sample whose arc length is closest to s_from + ahead (wrapping on closed
  /// paths, saturating at the end of open ones).
  std::size_t advance(std::size_t from, double ahead) const {
    double target = samples_[from].s + ahead;
    if (closed_) {
      target = std::fmod(target, length_);
      if (target < 0.0) target += length_;
      // Past the last sample: closer to the start of the next lap?
      if (target > samples_.back().s && length_ - target < target - samples_.back().s) return 0;
    } else if (target >= samples_.back().s) {
      return samples_.size() - 1;
    }
    auto it = std::lower_bound(samples_.begin(), samples_.end(), target,
                               [](const PathSample& p, double s) { return p.s < s; });
    if (it == samples_.end()) return samples_.size() - 1;
    auto j = static_cast<std::size_t>(it - samples_.begin());
    if (j > 0 && target - samples_[j - 1].s < samples_[j].s - target) --j;
    return j;
  }

  ReferenceLookup locate(const VehicleState& q, double lookahead) const {
    if (lookahead < 0.0) throw InvalidArgument("reference_point: lookahead must be >= 0");
    const std::size_t near = nearest_index(q.x, q.y);
    const std::size_t j = advance(near, lookahead);
    return {samples_[j].point(), near, j, samples_[near].point()};
  }

  /// The lookup a vehicle would get after moving `distance` along the path
  /// from the nearest point of `at`.
  ReferenceLookup ahead(const ReferenceLookup& at, double distance, double lookahead) const {
    const std::size_t near = advance(at.nearest, distance);
    const std::size_t j = advance(near, lookahead);
    return {samples_[j].point(), near, j, samples_[near].point()};
  }

 private:
  std::vector<PathSample> samples_;
  bool closed_ = false;
  double length_ = 0.0;
};

/// Nearest sample advanced by `lookahead` metres of arc length.
inline ReferencePoint reference_point(const ReferencePath& path, const VehicleState& q,
                                      double lookahead) {
  return path.locate(q, lookahead).point;
}

/// Closest point of a path polyline (segments between samples, including
/// the closing segment of a closed path).
struct PolylineProjection {
  double distance = 0.0;
  double signed_offset = 0.0;  // positive when the query point lies left of the path
  double theta = 0.0;          // path heading at the projection
  std::size_t segment = 0;     // index of the segment start sample
};

inline PolylineProjection project_onto_polyline(const ReferencePath& path, double x, double y) {
  const auto& pts = path.samples();
  if (pts.empty()) throw InvalidArgument("project_onto_polyline: empty path");
  PolylineProjection best{std::numeric_limits<double>::infinity(), 0.0, pts.front().theta, 0};
  if (pts.size() == 1) {
    best.distance = std::hypot(x - pts[0].x, y - pts[0].y);
    return best;
  }
  const std::size_t segments = path.closed() ? pts.size() : pts.size() - 1;
  for (std::size_t i = 0; i < segments; ++i) {
    const PathSample& a = pts[i];
    const PathSample& b = pts[(i + 1) % pts.size()];
    const double sx = b.x - a.x;
    const double sy = b.y - a.y;
    const double len2 = sx * sx + sy * sy;
    double t = len2 > 0.0 ? ((x - a.x) * sx + (y - a.y) * sy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double px = a.x + t * sx;
    const double py = a.y + t * sy;
    const double d = std::hypot(x - px, y - py);
    if (d < best.distance) {
      best.distance = d;
      best.segment = i;
      // Interpolate heading along the shorter arc between the end samples.
      best.theta = wrap_angle(a.theta + t * wrap_angle(b.theta - a.theta));
      best.signed_offset = -std::sin(best.theta) * (x - px) + std::cos(best.theta) * (y - py);
    }
  }
  return best;
}

/// Infinite straight reference through (x0, y0) with heading `theta`.
struct StraightLine {
  double x0 = 0.0;
  double y0 = 0.0;
  double theta = 0.0;
  double v = 1.0;
  double alpha = 0.0;

  ReferenceLookup locate(const VehicleState& q, double lookahead) const {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const double along = (q.x - x0) * c + (q.y - y0) * s;
    const double ahead = along + lookahead;
    return {{x0 + ahead * c, y0 + ahead * s, wrap_angle(theta), v, 0.0, alpha},
            0,
            0,
            {x0 + along * c, y0 + along * s, wrap_angle(theta), v, 0.0, alpha}};
  }

  ReferenceLookup ahead(const ReferenceLookup& at, double distance, double) const {
    ReferenceLookup r = at;
    r.point.x += distance * std::cos(theta);
    r.point.y += distance * std::sin(theta);
    r.foot.x += distance * std::cos(theta);
    r.foot.y += distance * std::sin(theta);
    return r;
  }

  /// Signed distance of (x, y) from the line, left positive.
  double offset(double x, double y) const {
    return -std::sin(theta) * (x - x0) + std::cos(theta) * (y - y0);
  }
};

}  // namespace pathfollow
