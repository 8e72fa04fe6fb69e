#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "pathfollow/common.hpp"
#include "pathfollow/csv.hpp"
#include "pathfollow/reference.hpp"
#include "pathfollow/vehicle.hpp"

namespace pathfollow {

enum class Direction { kCounterClockwise, kClockwise };

// Path segments, each described in a local frame that starts at the origin
// heading along +x. Composite paths chain them with continuous heading.
namespace segment {
struct Straight {
  double length = 1.0;
};
/// Circular arc; positive `angle` turns left.
struct Arc {
  double radius = 1.0;
  double angle = kPi / 2;
};
/// Lateral shift of `offset` (left positive) over `length` metres of
/// forward travel, quintic blend with zero slope and curvature at both ends.
struct LaneChange {
  double length = 10.0;
  double offset = 3.5;
};
/// One period of a sine of `amplitude`, windowed by sin^2 so the segment
/// starts and ends straight with zero net lateral displacement.
struct Sinusoid {
  double wavelength = 10.0;
  double amplitude = 2.0;
};
}  // namespace segment

using Segment = std::variant<segment::Straight, segment::Arc, segment::LaneChange, segment::Sinusoid>;

namespace descriptor {
struct Circle {
  double radius = 5.0;
  Direction direction = Direction::kCounterClockwise;
};
struct Line {
  double length = 30.0;
};
struct Composite {
  std::vector<Segment> segments;
  bool closed = false;
};
/// Circle with smooth seeded radial noise (harmonics 2..5).
struct PerturbedCircle {
  double radius = 10.0;
  std::uint64_t seed = 1;
  double noise = 0.04;  // max relative amplitude per harmonic
};
}  // namespace descriptor

struct PathDescriptor {
  std::variant<descriptor::Circle, descriptor::Line, descriptor::Composite, descriptor::PerturbedCircle> shape;
  double speed = 1.0;          // v_r along the whole path
  double target_length = 0.0;  // > 0: scale the geometry uniformly to this length
};

namespace detail {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Position and its first two derivatives of a parametric curve.
struct CurvePoint {
  Vec2 p, dp, ddp;
};

/// A parametric curve piece on [0, t_end] placed by a rigid transform.
struct Piece {
  std::function<CurvePoint(double)> eval;
  double t_end = 1.0;
  Vec2 origin;
  double rotation = 0.0;

  CurvePoint at(double t) const {
    const CurvePoint c = eval(t);
    const double cr = std::cos(rotation);
    const double sr = std::sin(rotation);
    auto rot = [&](Vec2 v) { return Vec2{cr * v.x - sr * v.y, sr * v.x + cr * v.y}; };
    const Vec2 p = rot(c.p);
    return {{origin.x + p.x, origin.y + p.y}, rot(c.dp), rot(c.ddp)};
  }
};

inline Piece local_piece(const Segment& seg) {
  return std::visit(
      [](const auto& s) -> Piece {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, segment::Straight>) {
          if (!(s.length > 0.0)) throw InvalidArgument("straight segment: length must be > 0");
          return {[](double t) { return CurvePoint{{t, 0.0}, {1.0, 0.0}, {0.0, 0.0}}; }, s.length};
        } else if constexpr (std::is_same_v<T, segment::Arc>) {
          if (!(s.radius > 0.0) || s.angle == 0.0 || !std::isfinite(s.angle))
            throw InvalidArgument("arc segment: radius must be > 0 and angle non-zero");
          const double r = s.radius;
          const double sign = s.angle > 0.0 ? 1.0 : -1.0;
          // t is the swept angle magnitude.
          return {[r, sign](double t) {
                    return CurvePoint{{r * std::sin(t), sign * r * (1.0 - std::cos(t))},
                                      {r * std::cos(t), sign * r * std::sin(t)},
                                      {-r * std::sin(t), sign * r * std::cos(t)}};
                  },
                  std::abs(s.angle)};
        } else if constexpr (std::is_same_v<T, segment::LaneChange>) {
          if (!(s.length > 0.0)) throw InvalidArgument("lane-change segment: length must be > 0");
          const double L = s.length;
          const double h = s.offset;
          return {[L, h](double t) {
                    const double u = t / L;
                    const double y = h * (10 * u * u * u - 15 * u * u * u * u + 6 * u * u * u * u * u);
                    const double dy = h * (30 * u * u - 60 * u * u * u + 30 * u * u * u * u) / L;
                    const double ddy = h * (60 * u - 180 * u * u + 120 * u * u * u) / (L * L);
                    return CurvePoint{{t, y}, {1.0, dy}, {0.0, ddy}};
                  },
                  L};
        } else {
          if (!(s.wavelength > 0.0)) throw InvalidArgument("sinusoid segment: wavelength must be > 0");
          const double L = s.wavelength;
          const double A = s.amplitude;
          return {[L, A](double t) {
                    const double w = 2.0 * kPi / L;
                    // y = A sin(wt) sin^2(wt/2) = A sin(wt) (1 - cos(wt)) / 2
                    const double sn = std::sin(w * t);
                    const double cs = std::cos(w * t);
                    const double y = 0.5 * A * sn * (1.0 - cs);
                    const double dy = 0.5 * A * w * (cs - cs * cs + sn * sn);
                    const double ddy = 0.5 * A * w * w * (-sn + 4.0 * sn * cs);
                    return CurvePoint{{t, y}, {1.0, dy}, {0.0, ddy}};
                  },
                  L};
        }
      },
      seg);
}

inline std::vector<Piece> pieces_for(const PathDescriptor& d, bool& closed) {
  return std::visit(
      [&closed](const auto& shape) -> std::vector<Piece> {
        using T = std::decay_t<decltype(shape)>;
        if constexpr (std::is_same_v<T, descriptor::Circle>) {
          if (!(shape.radius > 0.0) || !std::isfinite(shape.radius))
            throw InvalidArgument("circle: radius must be > 0");
          closed = true;
          const double sign = shape.direction == Direction::kCounterClockwise ? 1.0 : -1.0;
          Piece arc = local_piece(segment::Arc{shape.radius, sign * 2.0 * kPi});
          return {arc};
        } else if constexpr (std::is_same_v<T, descriptor::Line>) {
          if (!(shape.length > 0.0) || !std::isfinite(shape.length))
            throw InvalidArgument("line: length must be > 0");
          closed = false;
          return {local_piece(segment::Straight{shape.length})};
        } else if constexpr (std::is_same_v<T, descriptor::Composite>) {
          if (shape.segments.empty()) throw InvalidArgument("composite: no segments");
          closed = shape.closed;
          std::vector<Piece> out;
          Vec2 origin{};
          double heading = 0.0;
          for (const Segment& seg : shape.segments) {
            Piece piece = local_piece(seg);
            piece.origin = origin;
            piece.rotation = heading;
            const CurvePoint end = piece.at(piece.t_end);
            origin = end.p;
            heading = std::atan2(end.dp.y, end.dp.x);
            out.push_back(std::move(piece));
          }
          if (closed) {
            const Vec2 start = out.front().at(0.0).p;
            if (std::hypot(origin.x - start.x, origin.y - start.y) > 1e-6 ||
                std::abs(wrap_angle(heading)) > 1e-6)
              throw InvalidArgument("composite: segments do not close the loop");
          }
          return out;
        } else {
          if (!(shape.radius > 0.0)) throw InvalidArgument("perturbed circle: radius must be > 0");
          if (!(shape.noise >= 0.0 && shape.noise < 0.1))
            throw InvalidArgument("perturbed circle: noise must be in [0, 0.1)");
          closed = true;
          Rng rng = Rng::stream(shape.seed, "perturbed-circle");
          std::array<double, 4> amp{};
          std::array<double, 4> phase{};
          for (std::size_t i = 0; i < amp.size(); ++i) {
            amp[i] = rng.uniform(-shape.noise, shape.noise);
            phase[i] = rng.uniform(0.0, 2.0 * kPi);
          }
          const double R = shape.radius;
          Piece piece{[R, amp, phase](double phi) {
                        double r = 1.0, dr = 0.0, ddr = 0.0;
                        for (std::size_t i = 0; i < amp.size(); ++i) {
                          const double k = static_cast<double>(i + 2);
                          r += amp[i] * std::cos(k * phi + phase[i]);
                          dr -= amp[i] * k * std::sin(k * phi + phase[i]);
                          ddr -= amp[i] * k * k * std::cos(k * phi + phase[i]);
                        }
                        r *= R;
                        dr *= R;
                        ddr *= R;
                        const double c = std::cos(phi);
                        const double s = std::sin(phi);
                        return CurvePoint{{r * c, r * s},
                                          {dr * c - r * s, dr * s + r * c},
                                          {ddr * c - 2 * dr * s - r * c, ddr * s + 2 * dr * c - r * s}};
                      },
                      2.0 * kPi};
          return {piece};
        }
      },
      d.shape);
}

inline double speed_of(const CurvePoint& c) { return std::hypot(c.dp.x, c.dp.y); }

/// Cumulative arc-length table of one piece on a uniform parameter grid.
struct ArcTable {
  std::vector<double> t;
  std::vector<double> s;
};

inline ArcTable arc_table(const Piece& piece) {
  // Simpson on each grid interval; grid fine enough for sub-micron accuracy.
  const double rough = speed_of(piece.at(0.0)) * piece.t_end + speed_of(piece.at(piece.t_end)) * piece.t_end;
  const auto n = static_cast<std::size_t>(std::max(400.0, std::ceil(rough / 0.002)));
  ArcTable tab;
  tab.t.resize(n + 1);
  tab.s.resize(n + 1);
  const double h = piece.t_end / static_cast<double>(n);
  double prev_speed = speed_of(piece.at(0.0));
  for (std::size_t i = 0; i <= n; ++i) {
    tab.t[i] = h * static_cast<double>(i);
    if (i == 0) continue;
    const double mid = speed_of(piece.at(tab.t[i] - 0.5 * h));
    const double end = speed_of(piece.at(tab.t[i]));
    tab.s[i] = tab.s[i - 1] + h / 6.0 * (prev_speed + 4.0 * mid + end);
    prev_speed = end;
  }
  return tab;
}

/// Parameter value at arc length `s` within one piece (linear table lookup
/// refined by Newton steps on the exact speed).
inline double param_at(const Piece& piece, const ArcTable& tab, double s) {
  auto it = std::lower_bound(tab.s.begin(), tab.s.end(), s);
  std::size_t j = it == tab.s.end() ? tab.s.size() - 1 : static_cast<std::size_t>(it - tab.s.begin());
  if (j == 0) return 0.0;
  const double s0 = tab.s[j - 1];
  const double s1 = tab.s[j];
  const double f = s1 > s0 ? (s - s0) / (s1 - s0) : 0.0;
  double t = tab.t[j - 1] + f * (tab.t[j] - tab.t[j - 1]);
  // Newton refinement against Simpson integration from the table node.
  for (int iter = 0; iter < 2; ++iter) {
    const double t0 = tab.t[j - 1];
    const double a = speed_of(piece.at(t0));
    const double m = speed_of(piece.at(0.5 * (t0 + t)));
    const double b = speed_of(piece.at(t));
    const double s_here = s0 + (t - t0) / 6.0 * (a + 4.0 * m + b);
    if (b <= 0.0) break;
    t -= (s_here - s) / b;
  }
  return std::clamp(t, 0.0, piece.t_end);
}

}  // namespace detail

/// Samples a path description at uniform arc-length spacing <= 0.05 m.
/// beta_r and alpha_r come from the curvature and `params`.
inline ReferencePath build_path(const PathDescriptor& desc, const VehicleParams& params = {}) {
  if (!(desc.speed >= 0.0) || !std::isfinite(desc.speed))
    throw InvalidArgument("build_path: speed must be finite and >= 0");
  bool closed = false;
  const std::vector<detail::Piece> pieces = detail::pieces_for(desc, closed);
  std::vector<detail::ArcTable> tables;
  std::vector<double> offsets{0.0};
  for (const auto& piece : pieces) {
    tables.push_back(detail::arc_table(piece));
    offsets.push_back(offsets.back() + tables.back().s.back());
  }
  const double raw_length = offsets.back();
  double scale = 1.0;
  if (desc.target_length > 0.0) scale = desc.target_length / raw_length;
  const double length = raw_length * scale;

  const auto intervals = static_cast<std::size_t>(std::ceil(length / kMaxSampleSpacing - 1e-9));
  const double ds = length / static_cast<double>(intervals);
  const std::size_t count = closed ? intervals : intervals + 1;
  const double alpha_r = holding_throttle(desc.speed, params);

  std::vector<PathSample> samples;
  samples.reserve(count);
  std::size_t k = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const double s = ds * static_cast<double>(i);
    const double s_raw = s / scale;
    while (k + 1 < pieces.size() && s_raw > offsets[k + 1]) ++k;
    const double t = detail::param_at(pieces[k], tables[k], s_raw - offsets[k]);
    const detail::CurvePoint c = pieces[k].at(t);
    const double sp = detail::speed_of(c);
    const double kappa = (c.dp.x * c.ddp.y - c.dp.y * c.ddp.x) / (sp * sp * sp) / scale;
    PathSample sample;
    sample.s = s;
    sample.x = scale * c.p.x;
    sample.y = scale * c.p.y;
    sample.theta = wrap_angle(std::atan2(c.dp.y, c.dp.x));
    sample.v = desc.speed;
    sample.kappa = kappa;
    sample.beta = steering_for_curvature(kappa, params);
    sample.alpha = alpha_r;
    samples.push_back(sample);
  }
  return ReferencePath(std::move(samples), closed);
}

// ---------------------------------------------------------------------------
// Named paths.

struct NamedPath {
  std::string id;
  ReferencePath path;
};

/// The seven imitation-training trajectories: circles of radius 2, 5 and
/// 25 m in both directions and a 30 m straight line, all at 1 m/s.
inline std::vector<NamedPath> canonical_trajectories(const VehicleParams& params = {}) {
  std::vector<NamedPath> out;
  for (double r : {2.0, 5.0, 25.0}) {
    const std::string suffix = std::to_string(static_cast<int>(r));
    out.push_back({"circle_cw_" + suffix,
                   build_path({descriptor::Circle{r, Direction::kClockwise}}, params)});
    out.push_back({"circle_ccw_" + suffix,
                   build_path({descriptor::Circle{r, Direction::kCounterClockwise}}, params)});
  }
  out.push_back({"line_30", build_path({descriptor::Line{30.0}}, params)});
  return out;
}

namespace detail {
/// Bisection on a monotone length function.
template <typename F>
double solve_for_length(F length_of, double lo, double hi, double target) {
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (length_of(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline double composite_length(const descriptor::Composite& c) {
  bool closed = false;
  double total = 0.0;
  for (const auto& piece : pieces_for({c}, closed)) total += arc_table(piece).s.back();
  return total;
}
}  // namespace detail

/// Reconstruction of benchmark path 1: a radially distorted circle, 63.5 m.
inline PathDescriptor benchmark_path1() {
  PathDescriptor d{descriptor::PerturbedCircle{10.0, 20240101, 0.04}};
  d.target_length = 63.5;
  return d;
}

/// Reconstruction of benchmark path 2: double lane change (3.5 m), half
/// circle (r = 5 m) and one sinusoid period (amplitude 2 m), 49.5 m total.
inline PathDescriptor benchmark_path2() {
  auto make = [](double wavelength) {
    return descriptor::Composite{{segment::LaneChange{6.0, 3.5}, segment::Straight{2.0},
                                  segment::LaneChange{6.0, -3.5}, segment::Arc{5.0, kPi},
                                  segment::Sinusoid{wavelength, 2.0}},
                                 false};
  };
  const double wavelength = detail::solve_for_length(
      [&](double w) { return detail::composite_length(make(w)); }, 8.0, 30.0, 49.5);
  return {make(wavelength)};
}

/// Reconstruction of benchmark path 3: rounded rectangle with two 70 m
/// straights, a sinusoidal short edge and a semicircular short edge, 212.9 m.
inline PathDescriptor benchmark_path3() {
  constexpr double corner = 3.0;
  auto make = [](double width) {
    return descriptor::Composite{{segment::Straight{70.0}, segment::Arc{corner, kPi / 2},
                                  segment::Sinusoid{width, 2.0}, segment::Arc{corner, kPi / 2},
                                  segment::Straight{70.0}, segment::Arc{corner + width / 2, kPi}},
                                 true};
  };
  const double width = detail::solve_for_length(
      [&](double w) { return detail::composite_length(make(w)); }, 10.0, 40.0, 212.9);
  return {make(width)};
}

inline PathDescriptor benchmark_path(int index) {
  switch (index) {
    case 1: return benchmark_path1();
    case 2: return benchmark_path2();
    case 3: return benchmark_path3();
    default: throw InvalidArgument("benchmark_path: index must be 1, 2 or 3");
  }
}

// ---------------------------------------------------------------------------
// CSV exchange: header `s,x,y,theta,v,kappa`.

inline std::string path_to_csv(const ReferencePath& path) {
  std::ostringstream out;
  out << "s,x,y,theta,v,kappa\n";
  for (const PathSample& p : path.samples()) {
    out << csv::format_fixed(p.s, 6) << ',' << csv::format_fixed(p.x, 6) << ','
        << csv::format_fixed(p.y, 6) << ',' << csv::format_fixed(p.theta, 9) << ','
        << csv::format_fixed(p.v, 6) << ',' << csv::format_fixed(p.kappa, 9) << '\n';
  }
  return out.str();
}

enum class Closure { kAuto, kOpen, kClosed };

inline ReferencePath path_from_csv(std::istream& in, const VehicleParams& params = {},
                                   Closure closure = Closure::kAuto) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("path csv: empty input");
  if (csv::trim_eol(line) != "s,x,y,theta,v,kappa")
    throw ParseError("path csv: line 1: expected header 's,x,y,theta,v,kappa'");
  static constexpr std::string_view columns[] = {"s", "x", "y", "theta", "v", "kappa"};
  std::vector<PathSample> samples;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = csv::trim_eol(line);
    if (row.empty()) continue;
    const auto fields = csv::split(row);
    if (fields.size() != 6)
      throw ParseError("path csv: line " + std::to_string(line_no) + ": expected 6 fields");
    double vals[6];
    for (std::size_t i = 0; i < 6; ++i) vals[i] = csv::parse_double(fields[i], line_no, columns[i]);
    PathSample p{vals[0], vals[1], vals[2], wrap_angle(vals[3]), vals[4], vals[5]};
    if (p.v < 0.0) throw ParseError("path csv: line " + std::to_string(line_no) + ": negative speed");
    p.beta = steering_for_curvature(p.kappa, params);
    p.alpha = holding_throttle(p.v, params);
    samples.push_back(p);
  }
  if (samples.empty()) throw ParseError("path csv: no samples");
  bool closed = closure == Closure::kClosed;
  if (closure == Closure::kAuto && samples.size() > 2) {
    const double gap = std::hypot(samples.front().x - samples.back().x, samples.front().y - samples.back().y);
    closed = gap > 0.0 && gap <= kMaxSampleSpacing + 1e-9;
  }
  try {
    return ReferencePath(std::move(samples), closed);
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("path csv: ") + e.what());
  }
}

inline ReferencePath load_path_csv(const std::string& file, const VehicleParams& params = {},
                                   Closure closure = Closure::kAuto) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open path file '" + file + "'");
  return path_from_csv(in, params, closure);
}

}  // namespace pathfollow
