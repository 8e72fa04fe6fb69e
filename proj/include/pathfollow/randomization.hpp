#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathfollow/closed_loop.hpp"
#include "pathfollow/parallel.hpp"

namespace pathfollow {

/// Start-pose perturbation from a straight reference: signed lateral offset
/// (|offset| in [1.5, 2.5]) and heading offset in [-pi/4, pi/4].
struct Perturbation {
  double offset = 0.0;
  double phi = 0.0;
};

inline Perturbation sample_perturbation(Rng& rng) {
  const double magnitude = rng.uniform(1.5, 2.5);
  const double sign = rng.coin() ? 1.0 : -1.0;
  const double phi = rng.uniform(-kPi / 4, kPi / 4);
  return {sign * magnitude, phi};
}

/// Settling criterion and run limits of a micro-simulation.
struct MicroSimOptions {
  double cap = 30.0;         // sim-time limit [s]
  double tube_cross = 0.1;   // |cross-track| bound [m]
  double tube_heading = 0.1; // |heading error| bound [rad]
  double dwell = 1.0;        // continuous time inside the tube [s]
  bool keep_log = true;
  LoopOptions loop{};
  VehicleParams params{};
};

struct MicroSimResult {
  std::string policy;
  Perturbation perturbation;
  std::optional<double> settling_time;  // empty on timeout
  bool diverged = false;
  std::vector<StepRecord> log;

  bool timed_out() const { return !settling_time.has_value(); }
  /// Settling time with timeouts counted at the cap.
  double capped(double cap) const { return settling_time.value_or(cap); }
};

/// Straight line along +x through the origin, vehicle placed at
/// (0, offset) with heading phi, at rest. Settling time is the start of the
/// first interval of `dwell` seconds spent inside the tube; tube membership
/// is checked after every physics step.
inline MicroSimResult run_micro_sim(Policy& policy, const Perturbation& pert, const MicroSimOptions& opt = {}) {
  const StraightLine line{0.0, 0.0, 0.0, opt.loop.speed.target, holding_throttle(opt.loop.speed.target, opt.params)};
  Simulation<StraightLine> sim(line, {0.0, pert.offset, wrap_angle(pert.phi), 0.0}, opt.params, opt.loop);
  policy.reset();

  MicroSimResult result;
  result.policy = policy.name();
  result.perturbation = pert;
  bool inside_run = false;
  double entered = 0.0;  // start of the current stretch inside the tube
  bool settled = false;
  auto watch = [&](double t, const VehicleState& q) {
    if (settled) return;
    const bool inside = std::abs(line.offset(q.x, q.y)) < opt.tube_cross &&
                        std::abs(wrap_angle(q.theta - line.theta)) < opt.tube_heading;
    if (!inside) {
      inside_run = false;
    } else {
      if (!inside_run) entered = t;
      inside_run = true;
      if (t - entered >= opt.dwell - 1e-9 && t <= opt.cap + 1e-9) settled = true;
    }
  };

  const auto max_steps = static_cast<long>(std::ceil(opt.cap / opt.loop.control_dt - 1e-9));
  try {
    for (long k = 0; k < max_steps && !settled; ++k) {
      StepRecord rec = sim.step(policy, watch);
      if (opt.keep_log) result.log.push_back(rec);
    }
  } catch (const IntegrationDiverged&) {
    result.diverged = true;
    settled = false;
  }
  if (settled) result.settling_time = entered;
  return result;
}

inline nlohmann::json to_json(const MicroSimResult& r) {
  nlohmann::json j{{"policy", r.policy},
                   {"offset", r.perturbation.offset},
                   {"phi", r.perturbation.phi},
                   {"settled", !r.timed_out()},
                   {"diverged", r.diverged},
                   {"steps", r.log.size()}};
  j["settling_time"] = r.settling_time ? nlohmann::json(*r.settling_time) : nlohmann::json(nullptr);
  return j;
}

/// Place counts and settling-time statistics for a set of policies run on
/// the same perturbation draws.
struct RankReport {
  std::vector<std::string> policies;
  std::uint64_t seed = 0;
  int draws = 0;
  double cap = 30.0;
  std::vector<Perturbation> perturbations;
  std::vector<std::vector<double>> settling;        // [policy][draw], timeouts at cap
  std::vector<std::vector<bool>> timeouts;          // [policy][draw]
  std::vector<std::vector<int>> place_counts;       // [policy][place]
  std::vector<std::vector<int>> places;             // [policy][draw], 0 = first

  double mean_settling(std::size_t p) const {
    if (settling[p].empty()) return 0.0;
    return std::accumulate(settling[p].begin(), settling[p].end(), 0.0) / static_cast<double>(settling[p].size());
  }
  int timeout_count(std::size_t p) const {
    return static_cast<int>(std::count(timeouts[p].begin(), timeouts[p].end(), true));
  }
  double median_settling(std::size_t p) const {
    std::vector<double> v = settling[p];
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  }
};

struct RankOptions {
  int draws = 100;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  MicroSimOptions sim{};
};

inline Perturbation perturbation_for_draw(std::uint64_t seed, std::size_t draw) {
  Rng rng = Rng::stream(seed, "micro-sim-draw", draw);
  return sample_perturbation(rng);
}

/// Runs every policy on the same `draws` perturbations and assigns places
/// per draw by ascending settling time (ties go to the earlier policy).
inline RankReport rank_policies(const std::vector<const Policy*>& prototypes, const RankOptions& opt) {
  if (prototypes.size() < 2) throw InvalidArgument("rank_policies: need at least two policies");
  if (opt.draws < 1) throw InvalidArgument("rank_policies: need at least one draw");
  const std::size_t P = prototypes.size();
  const auto n = static_cast<std::size_t>(opt.draws);

  RankReport rep;
  rep.seed = opt.seed;
  rep.draws = opt.draws;
  rep.cap = opt.sim.cap;
  for (const Policy* p : prototypes) rep.policies.push_back(p->name());
  for (std::size_t i = 0; i < n; ++i) rep.perturbations.push_back(perturbation_for_draw(opt.seed, i));

  rep.settling.assign(P, std::vector<double>(n, 0.0));
  rep.timeouts.assign(P, std::vector<bool>(n, false));
  MicroSimOptions sim_opt = opt.sim;
  sim_opt.keep_log = false;
  std::vector<double> st(P * n, 0.0);
  std::vector<char> to(P * n, 0);
  parallel_for(P * n, opt.workers, [&](std::size_t job) {
    const std::size_t p = job / n;
    const std::size_t i = job % n;
    std::unique_ptr<Policy> policy = prototypes[p]->clone();
    const MicroSimResult r = run_micro_sim(*policy, rep.perturbations[i], sim_opt);
    st[job] = r.capped(sim_opt.cap);
    to[job] = r.timed_out() ? 1 : 0;
  });
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t i = 0; i < n; ++i) {
      rep.settling[p][i] = st[p * n + i];
      rep.timeouts[p][i] = to[p * n + i] != 0;
    }

  rep.place_counts.assign(P, std::vector<int>(P, 0));
  rep.places.assign(P, std::vector<int>(n, 0));
  std::vector<std::size_t> order(P);
  for (std::size_t i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return rep.settling[a][i] < rep.settling[b][i]; });
    for (std::size_t place = 0; place < P; ++place) {
      rep.place_counts[order[place]][place] += 1;
      rep.places[order[place]][i] = static_cast<int>(place);
    }
  }
  return rep;
}

inline nlohmann::json to_json(const RankReport& r) {
  nlohmann::json j;
  j["seed"] = r.seed;
  j["draws"] = r.draws;
  j["cap"] = r.cap;
  j["perturbations"] = nlohmann::json::array();
  for (const auto& p : r.perturbations) j["perturbations"].push_back({{"offset", p.offset}, {"phi", p.phi}});
  j["policies"] = nlohmann::json::array();
  for (std::size_t p = 0; p < r.policies.size(); ++p) {
    nlohmann::json pj;
    pj["name"] = r.policies[p];
    pj["place_counts"] = r.place_counts[p];
    pj["mean_settling_time"] = r.mean_settling(p);
    pj["median_settling_time"] = r.median_settling(p);
    pj["timeouts"] = r.timeout_count(p);
    pj["settling_times"] = r.settling[p];
    std::vector<int> flags(r.timeouts[p].begin(), r.timeouts[p].end());
    pj["timeout_flags"] = flags;
    pj["places"] = r.places[p];
    j["policies"].push_back(pj);
  }
  return j;
}

namespace detail {
inline std::string ordinal(std::size_t k) {
  const std::size_t n = k + 1;
  const char* suffix = (n % 100 >= 11 && n % 100 <= 13) ? "th" : n % 10 == 1 ? "st" : n % 10 == 2 ? "nd" : n % 10 == 3 ? "rd" : "th";
  return std::to_string(n) + suffix;
}
}  // namespace detail

/// Text table: one row per policy, place counts then mean settling time.
inline std::string render_rank_table(const RankReport& r) {
  std::size_t name_w = 6;
  for (const auto& n : r.policies) name_w = std::max(name_w, n.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(name_w)) << "Policy";
  for (std::size_t k = 0; k < r.policies.size(); ++k) out << std::right << std::setw(6) << detail::ordinal(k);
  out << std::setw(11) << "Mean ST" << std::setw(10) << "Timeouts" << '\n';
  for (std::size_t p = 0; p < r.policies.size(); ++p) {
    out << std::left << std::setw(static_cast<int>(name_w)) << r.policies[p] << std::right;
    for (int c : r.place_counts[p]) out << std::setw(6) << c;
    std::ostringstream st;
    st << std::fixed << std::setprecision(3) << r.mean_settling(p) << " s";
    out << std::setw(11) << st.str() << std::setw(10) << r.timeout_count(p) << '\n';
  }
  return out.str();
}

}  // namespace pathfollow
