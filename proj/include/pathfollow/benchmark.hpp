#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathfollow/closed_loop.hpp"
#include "pathfollow/csv.hpp"
#include "pathfollow/parallel.hpp"
#include "pathfollow/paths.hpp"

namespace pathfollow {

struct RunLog {
  std::string policy;
  std::string path;
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  bool aborted = false;
  std::string abort_reason;
  double distance_covered = 0.0;  // arc length progressed along the path [m]
};

struct BenchmarkOptions {
  double max_start_offset = 0.1;  // |e2| bound of the seeded start pose [m]
  double abort_factor = 3.0;      // abort after this many nominal durations
  double corridor = 5.0;          // abort when further from the path [m]
  LoopOptions loop{};
  VehicleParams params{};
};

/// Drives `path` from its first sample (laterally offset by a seeded amount,
/// at rest) until the end of an open path, one lap of a closed one, or an
/// abort.
inline RunLog run_path_following(Policy& policy, const NamedPath& named, std::uint64_t seed,
                                 const BenchmarkOptions& opt = {}) {
  const ReferencePath& path = named.path;
  if (path.size() < 2) throw InvalidArgument("run_path_following: path needs at least two samples");
  const double v_target = opt.loop.speed.target;
  if (!(v_target > 0.0)) throw InvalidArgument("run_path_following: target speed must be positive");

  Rng rng = Rng::stream(seed, "benchmark-start");
  const double cross = rng.uniform(-opt.max_start_offset, opt.max_start_offset);
  const PathSample& p0 = path[0];
  const VehicleState start{p0.x - std::sin(p0.theta) * cross, p0.y + std::cos(p0.theta) * cross, p0.theta, 0.0};

  RunLog log;
  log.policy = policy.name();
  log.path = named.id;
  log.seed = seed;
  policy.reset();
  Simulation<ReferencePath> sim(path, start, opt.params, opt.loop);

  const double limit = opt.abort_factor * path.length() / v_target;
  const auto max_steps = static_cast<long>(std::ceil(limit / opt.loop.control_dt));
  std::size_t last = path.nearest_index(start.x, start.y);
  double progress = 0.0;
  const double L = path.length();
  auto finished = [&] {
    if (path.closed()) return progress >= L - 1e-9;
    return last + 1 == path.size();
  };

  try {
    for (long k = 0; k < max_steps && !finished(); ++k) {
      log.steps.push_back(sim.step(policy));
      const VehicleState& q = sim.state();
      const std::size_t now = path.nearest_index(q.x, q.y);
      double ds = path[now].s - path[last].s;
      if (path.closed()) ds = std::remainder(ds, L);
      progress += ds;
      last = now;
      if (project_onto_polyline(path, q.x, q.y).distance > opt.corridor) {
        log.aborted = true;
        log.abort_reason = "left the corridor";
        break;
      }
    }
  } catch (const IntegrationDiverged&) {
    log.aborted = true;
    log.abort_reason = "integration diverged";
  }
  if (!log.aborted && !finished()) {
    log.aborted = true;
    log.abort_reason = "time limit";
  }
  log.distance_covered = std::max(0.0, progress);
  return log;
}

/// Absolute lateral and heading error statistics (population std).
struct TrackingStats {
  std::size_t count = 0;
  double lateral_mean = 0.0;
  double lateral_std = 0.0;
  double lateral_max = 0.0;
  double heading_mean = 0.0;
  double heading_std = 0.0;
};

/// Per-step absolute errors: distance to the path polyline and heading
/// difference to the path tangent at the projection.
struct ErrorSeries {
  std::vector<double> lateral;
  std::vector<double> heading;
};

inline ErrorSeries error_series(const RunLog& log, const ReferencePath& path) {
  ErrorSeries s;
  s.lateral.reserve(log.steps.size());
  s.heading.reserve(log.steps.size());
  for (const StepRecord& r : log.steps) {
    const PolylineProjection pr = project_onto_polyline(path, r.state.x, r.state.y);
    s.lateral.push_back(pr.distance);
    s.heading.push_back(std::abs(wrap_angle(r.state.theta - pr.theta)));
  }
  return s;
}

namespace detail {
inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  sd = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (double x : v) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / static_cast<double>(v.size()));
}
}  // namespace detail

inline TrackingStats stats_of(const ErrorSeries& s) {
  TrackingStats t;
  t.count = s.lateral.size();
  detail::mean_std(s.lateral, t.lateral_mean, t.lateral_std);
  detail::mean_std(s.heading, t.heading_mean, t.heading_std);
  for (double x : s.lateral) t.lateral_max = std::max(t.lateral_max, x);
  return t;
}

inline TrackingStats tracking_stats(const RunLog& log, const ReferencePath& path) {
  if (log.steps.empty()) throw InvalidArgument("tracking_stats: empty log");
  return stats_of(error_series(log, path));
}

/// Statistics pooled over every step of several runs on the same path.
inline TrackingStats aggregate_stats(const std::vector<const RunLog*>& logs, const ReferencePath& path) {
  ErrorSeries all;
  for (const RunLog* log : logs) {
    ErrorSeries s = error_series(*log, path);
    all.lateral.insert(all.lateral.end(), s.lateral.begin(), s.lateral.end());
    all.heading.insert(all.heading.end(), s.heading.begin(), s.heading.end());
  }
  if (all.lateral.empty()) throw InvalidArgument("aggregate_stats: no steps");
  return stats_of(all);
}

// ---------------------------------------------------------------------------
// Full benchmark: policies x paths x repeats.

struct BenchmarkCell {
  std::string policy;
  std::string path;
  TrackingStats stats;
  int runs = 0;
  int completed = 0;
};

struct BenchmarkResult {
  std::vector<NamedPath> paths;
  std::vector<RunLog> logs;  // ordered by (policy, path, repeat)
  std::vector<BenchmarkCell> cells;  // ordered by (policy, path)
};

struct BenchmarkPlan {
  std::vector<int> paths{1, 2, 3};
  int repeats = 5;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  BenchmarkOptions run{};
};

inline std::string benchmark_path_id(int index) { return "path" + std::to_string(index) + "_reconstruction"; }

/// Per-run seed: shared by every policy for the same (path, repeat), so the
/// policies see identical start poses.
inline std::uint64_t benchmark_run_seed(std::uint64_t root, const std::string& path_id, int repeat) {
  return splitmix64(root ^ fnv1a64(path_id) ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(repeat + 1)));
}

inline BenchmarkResult run_benchmark(const std::vector<const Policy*>& prototypes, const BenchmarkPlan& plan) {
  if (prototypes.empty()) throw InvalidArgument("run_benchmark: no policies");
  if (plan.repeats < 1) throw InvalidArgument("run_benchmark: repeats must be >= 1");
  BenchmarkResult res;
  for (int idx : plan.paths)
    res.paths.push_back({benchmark_path_id(idx), build_path(benchmark_path(idx), plan.run.params)});

  const std::size_t P = prototypes.size();
  const std::size_t G = res.paths.size();
  const auto R = static_cast<std::size_t>(plan.repeats);
  res.logs.resize(P * G * R);
  parallel_for(res.logs.size(), plan.workers, [&](std::size_t job) {
    const std::size_t p = job / (G * R);
    const std::size_t g = (job / R) % G;
    const std::size_t r = job % R;
    std::unique_ptr<Policy> policy = prototypes[p]->clone();
    const std::uint64_t seed = benchmark_run_seed(plan.seed, res.paths[g].id, static_cast<int>(r));
    res.logs[job] = run_path_following(*policy, res.paths[g], seed, plan.run);
  });

  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t g = 0; g < G; ++g) {
      BenchmarkCell cell;
      cell.policy = prototypes[p]->name();
      cell.path = res.paths[g].id;
      std::vector<const RunLog*> runs;
      for (std::size_t r = 0; r < R; ++r) {
        const RunLog& log = res.logs[(p * G + g) * R + r];
        runs.push_back(&log);
        if (!log.aborted) ++cell.completed;
      }
      cell.runs = static_cast<int>(R);
      cell.stats = aggregate_stats(runs, res.paths[g].path);
      res.cells.push_back(cell);
    }
  return res;
}

// ---------------------------------------------------------------------------
// Export.

inline std::string run_log_csv(const RunLog& log) { return step_log_csv(log.steps); }

inline constexpr std::string_view kAggregateHeader =
    "policy,path,lateral_mean,lateral_std,lateral_max,heading_mean,heading_std,runs,completed";

/// One row per (policy, path); errors in metres and radians.
inline std::string aggregate_csv(const BenchmarkResult& res) {
  std::string out(kAggregateHeader);
  out += '\n';
  for (const BenchmarkCell& c : res.cells) {
    out += c.policy + ',' + c.path;
    for (double v : {c.stats.lateral_mean, c.stats.lateral_std, c.stats.lateral_max, c.stats.heading_mean,
                     c.stats.heading_std})
      out += ',' + csv::format_fixed(v, 6);
    out += ',' + std::to_string(c.runs) + ',' + std::to_string(c.completed) + '\n';
  }
  return out;
}

/// Text table in the layout of the lateral/heading error tables (mean ± std).
inline std::string render_benchmark_table(const BenchmarkResult& res) {
  std::ostringstream out;
  std::size_t pw = 6;
  for (const auto& c : res.cells) pw = std::max(pw, c.policy.size());
  out << "Lateral error [m] / heading error [rad], mean +- std (paths are reconstructions)\n";
  for (const auto& c : res.cells) {
    out << c.policy << std::string(pw - c.policy.size() + 2, ' ') << c.path << "  lateral "
        << csv::format_fixed(c.stats.lateral_mean, 3) << " +- " << csv::format_fixed(c.stats.lateral_std, 3)
        << "  heading " << csv::format_fixed(c.stats.heading_mean, 3) << " +- "
        << csv::format_fixed(c.stats.heading_std, 3) << "  completed " << c.completed << "/" << c.runs << '\n';
  }
  return out.str();
}

/// Top-down overlay of the reference path and the driven trajectory: two
/// polylines, y pointing up.
inline std::string run_svg(const RunLog& log, const ReferencePath& path) {
  double xmin = path[0].x, xmax = xmin, ymin = path[0].y, ymax = ymin;
  auto grow = [&](double x, double y) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  };
  for (const auto& s : path.samples()) grow(s.x, s.y);
  for (const auto& r : log.steps) grow(r.state.x, r.state.y);
  const double pad = 1.0;
  xmin -= pad;
  ymin -= pad;
  xmax += pad;
  ymax += pad;
  const double w = xmax - xmin;
  const double h = ymax - ymin;
  auto pt = [&](double x, double y) { return csv::format_fixed(x - xmin, 3) + "," + csv::format_fixed(ymax - y, 3); };

  std::string ref_pts;
  for (const auto& s : path.samples()) ref_pts += pt(s.x, s.y) + ' ';
  if (path.closed()) ref_pts += pt(path[0].x, path[0].y) + ' ';
  std::string run_pts;
  for (const auto& r : log.steps) run_pts += pt(r.state.x, r.state.y) + ' ';
  if (!ref_pts.empty()) ref_pts.pop_back();
  if (!run_pts.empty()) run_pts.pop_back();

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << csv::format_fixed(w * 20, 0)
      << "\" height=\"" << csv::format_fixed(h * 20, 0) << "\" viewBox=\"0 0 " << csv::format_fixed(w, 3) << ' '
      << csv::format_fixed(h, 3) << "\">\n"
      << "  <title>" << log.policy << " on " << log.path << " (reconstructed path), seed " << log.seed
      << (log.aborted ? ", aborted" : "") << "</title>\n"
      << "  <polyline id=\"reference\" fill=\"none\" stroke=\"#888888\" stroke-width=\"0.08\" points=\"" << ref_pts
      << "\"/>\n"
      << "  <polyline id=\"driven\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"0.05\" points=\"" << run_pts
      << "\"/>\n"
      << "</svg>\n";
  return out.str();
}

inline std::string run_file_stem(const RunLog& log, int repeat) {
  return log.policy + "_" + log.path + "_run" + std::to_string(repeat);
}

inline nlohmann::json to_json(const BenchmarkResult& res) {
  nlohmann::json j;
  j["cells"] = nlohmann::json::array();
  for (const auto& c : res.cells)
    j["cells"].push_back({{"policy", c.policy},
                          {"path", c.path},
                          {"lateral_mean", c.stats.lateral_mean},
                          {"lateral_std", c.stats.lateral_std},
                          {"lateral_max", c.stats.lateral_max},
                          {"heading_mean", c.stats.heading_mean},
                          {"heading_std", c.stats.heading_std},
                          {"steps", c.stats.count},
                          {"runs", c.runs},
                          {"completed", c.completed}});
  j["runs"] = nlohmann::json::array();
  for (const auto& l : res.logs)
    j["runs"].push_back({{"policy", l.policy},
                         {"path", l.path},
                         {"seed", l.seed},
                         {"steps", l.steps.size()},
                         {"aborted", l.aborted},
                         {"abort_reason", l.abort_reason},
                         {"distance_covered", l.distance_covered}});
  return j;
}

}  // namespace pathfollow
