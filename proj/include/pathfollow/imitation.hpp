#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathfollow/closed_loop.hpp"
#include "pathfollow/config.hpp"
#include "pathfollow/csv.hpp"
#include "pathfollow/mlp.hpp"
#include "pathfollow/parallel.hpp"
#include "pathfollow/paths.hpp"

namespace pathfollow {

enum class SampleSource { kMpcExpert, kHumanDriver };

inline const char* to_string(SampleSource s) {
  return s == SampleSource::kMpcExpert ? "mpc-expert" : "human-driver";
}

struct ImitationSample {
  double t = 0.0;
  ErrorState e;
  ControlCommand u;
  SampleSource source = SampleSource::kMpcExpert;
  std::string trajectory_id;
};

struct DatasetMetadata {
  std::string params_hash;
  double dt = 0.1;
  std::uint64_t seed = 0;
  double duration = 0.0;  // per trajectory [s]
};

struct Dataset {
  std::vector<ImitationSample> samples;
  DatasetMetadata metadata;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

inline constexpr std::string_view kDatasetHeader = "t,e1,e2,e3,e4,alpha,beta,source,trajectory_id";

inline std::string dataset_csv_row(const ImitationSample& s) {
  std::string row;
  for (double v : {s.t, s.e.along, s.e.cross, s.e.heading, s.e.speed, s.u.alpha(), s.u.beta()}) {
    row += csv::format_exact(v);
    row += ',';
  }
  row += to_string(s.source);
  row += ',';
  row += s.trajectory_id;
  return row;
}

inline std::string dataset_to_csv(const Dataset& d) {
  std::string out(kDatasetHeader);
  out += '\n';
  for (const auto& s : d.samples) {
    out += dataset_csv_row(s);
    out += '\n';
  }
  return out;
}

/// Parses the dataset CSV, checking every row against the sample
/// invariants (finite error, command inside its box, known source).
inline Dataset dataset_from_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("dataset: empty file");
  if (csv::trim_eol(line) != kDatasetHeader)
    throw ParseError("dataset: line 1: expected header '" + std::string(kDatasetHeader) + "'");
  static constexpr std::string_view cols[] = {"t", "e1", "e2", "e3", "e4", "alpha", "beta"};
  Dataset d;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = csv::trim_eol(line);
    if (row.empty()) continue;
    const auto f = csv::split(row);
    if (f.size() != 9)
      throw ParseError("dataset: line " + std::to_string(line_no) + ": expected 9 fields, got " +
                       std::to_string(f.size()));
    double v[7];
    for (std::size_t i = 0; i < 7; ++i) v[i] = csv::parse_double(f[i], line_no, cols[i]);
    for (double x : v)
      if (!std::isfinite(x)) throw ParseError("dataset: line " + std::to_string(line_no) + ": non-finite value");
    if (v[5] < 0.0 || v[5] > 1.0 || v[6] < -1.0 || v[6] > 1.0)
      throw ParseError("dataset: line " + std::to_string(line_no) + ": command outside its box");
    ImitationSample s;
    s.t = v[0];
    s.e = {v[1], v[2], v[3], v[4]};
    s.u = ControlCommand(v[5], v[6]);
    if (f[7] == "mpc-expert") s.source = SampleSource::kMpcExpert;
    else if (f[7] == "human-driver") s.source = SampleSource::kHumanDriver;
    else throw ParseError("dataset: line " + std::to_string(line_no) + ": unknown source '" + std::string(f[7]) + "'");
    s.trajectory_id = std::string(f[8]);
    d.samples.push_back(std::move(s));
  }
  if (d.samples.empty()) throw ParseError("dataset: no samples");
  return d;
}

inline nlohmann::json to_json(const DatasetMetadata& m) {
  return {{"params_hash", m.params_hash}, {"dt", m.dt}, {"seed", m.seed}, {"duration", m.duration}};
}

inline DatasetMetadata dataset_metadata_from_json(const nlohmann::json& j) {
  try {
    DatasetMetadata m;
    m.params_hash = j.at("params_hash").get<std::string>();
    m.dt = j.at("dt").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.duration = j.at("duration").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("dataset metadata: ") + e.what());
  }
}

inline std::string metadata_path(const std::string& csv_file) { return csv_file + ".meta.json"; }

/// Writes `file` and its metadata sidecar `file.meta.json`. Extra keys in
/// `provenance` are merged into the sidecar.
inline void save_dataset(const Dataset& d, const std::string& file, const nlohmann::json& provenance = {}) {
  write_text_file(file, dataset_to_csv(d));
  nlohmann::json meta = to_json(d.metadata);
  if (provenance.is_object())
    for (const auto& [k, v] : provenance.items()) meta[k] = v;
  write_text_file(metadata_path(file), meta.dump(2) + "\n");
}

/// Loads a dataset CSV; the sidecar is optional (human recordings written
/// by the teleop service carry their own).
inline Dataset load_dataset(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open dataset '" + file + "'");
  Dataset d = dataset_from_csv(in);
  std::ifstream meta(metadata_path(file));
  if (meta) d.metadata = dataset_metadata_from_json(read_json_file(metadata_path(file)));
  return d;
}

/// Seeded shuffle, then the last round(fraction * n) samples form the
/// validation part.
inline std::pair<Dataset, Dataset> split(const Dataset& d, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw InvalidArgument("split: fraction must be in (0, 1)");
  Rng rng = Rng::stream(seed, "dataset-split");
  const std::vector<std::size_t> order = detail::shuffled_indices(d.size(), rng);
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(d.size())));
  Dataset train{{}, d.metadata};
  Dataset val{{}, d.metadata};
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < order.size() - n_val ? train : val).samples.push_back(d.samples[order[i]]);
  return {std::move(train), std::move(val)};
}

/// Error states as columns of a 4 x n matrix.
inline Eigen::MatrixXd error_matrix(const Dataset& d) {
  Eigen::MatrixXd E(4, static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) E.col(static_cast<Eigen::Index>(i)) = to_vector(d.samples[i].e);
  return E;
}

/// Commands as columns of a 2 x n matrix, minus `bias`.
inline Eigen::MatrixXd command_matrix(const Dataset& d, const Vector2& bias = Vector2::Zero()) {
  Eigen::MatrixXd U(2, static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i)
    U.col(static_cast<Eigen::Index>(i)) = to_vector(d.samples[i].u) - bias;
  return U;
}

inline TrainingSet training_set(const Dataset& d) { return {error_matrix(d), command_matrix(d)}; }

// ---------------------------------------------------------------------------
// Expert data generation.

struct ExpertOptions {
  std::uint64_t seed = 0;
  double duration = 120.0;        // per trajectory [s]
  double max_cross_offset = 0.6;  // initial |e2| bound [m]
  double max_heading_offset = 0.2;
  double episode = 10.0;           // re-perturb this often [s]; 0 = never
  bool restart_from_rest = false;  // re-perturbed episodes start at rest (else keep speed)
  double corridor = 5.0;          // abort if the vehicle strays further [m]
  unsigned workers = 1;
  MpcOptions mpc{};
  LoopOptions loop{};
  VehicleParams params{};
};

namespace detail {
inline VehicleState offset_start(const PathSample& at, double cross, double heading, double v) {
  return {at.x - std::sin(at.theta) * cross, at.y + std::cos(at.theta) * cross, wrap_angle(at.theta + heading), v};
}
}  // namespace detail

/// Rolls the MPC expert over one trajectory and records (e, u) at every
/// control step. Every `episode` seconds the vehicle is re-placed at a fresh
/// seeded offset from the path point it has reached; open paths
/// start over from their first sample when the end is near. The sample count
/// is always duration / dt.
inline std::vector<ImitationSample> expert_rollout(const NamedPath& traj, std::uint64_t index,
                                                   const ExpertOptions& opt) {
  if (opt.duration < 10.0) throw InvalidArgument("generate_expert_dataset: duration must be >= 10 s");
  if (opt.episode < 0.0) throw InvalidArgument("generate_expert_dataset: episode must be >= 0");
  Rng rng = Rng::stream(opt.seed, "expert-offset", index);
  const ReferencePath& path = traj.path;
  const double reserve = std::max(opt.episode, 1.0) * opt.loop.speed.target + 1.0;
  auto draw_start = [&](std::size_t at, double v) {
    if (!path.closed() && path.length() - path[at].s < reserve) at = 0;
    const double cross = rng.uniform(-opt.max_cross_offset, opt.max_cross_offset);
    const double heading = rng.uniform(-opt.max_heading_offset, opt.max_heading_offset);
    return detail::offset_start(path[at], cross, heading, v);
  };
  Simulation<ReferencePath> sim(path, draw_start(0, 0.0), opt.params, opt.loop);
  MpcController expert(opt.mpc);
  const auto steps = static_cast<long>(std::llround(opt.duration / opt.loop.control_dt));
  const long episode_steps = opt.episode > 0.0 ? std::max(1L, std::lround(opt.episode / opt.loop.control_dt)) : 0;
  std::vector<ImitationSample> out;
  out.reserve(static_cast<std::size_t>(steps));
  for (long k = 0; k < steps; ++k) {
    const std::size_t at = path.nearest_index(sim.state().x, sim.state().y);
    const bool at_end = !path.closed() && at + 1 == path.size();
    if (at_end || (k > 0 && episode_steps > 0 && k % episode_steps == 0)) {
      sim.reset_state(draw_start(at_end ? 0 : at, opt.restart_from_rest ? 0.0 : sim.state().v));
      expert.reset();
    }
    const StepRecord rec = sim.step(expert);
    const double off = project_onto_polyline(path, rec.state.x, rec.state.y).distance;
    if (off > opt.corridor)
      throw Error("expert-failed", "MPC expert left the " + csv::format_fixed(opt.corridor, 1) +
                                       " m corridor on trajectory '" + traj.id + "'");
    out.push_back({rec.t, rec.error, rec.command, SampleSource::kMpcExpert, traj.id});
  }
  return out;
}

/// Expert dataset over the seven canonical trajectories, merged in
/// (trajectory_id, t) order.
inline Dataset generate_expert_dataset(const ExpertOptions& opt) {
  const std::vector<NamedPath> trajs = canonical_trajectories(opt.params);
  std::vector<std::vector<ImitationSample>> parts(trajs.size());
  parallel_for(trajs.size(), opt.workers, [&](std::size_t i) { parts[i] = expert_rollout(trajs[i], i, opt); });
  std::vector<std::size_t> order(trajs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return trajs[a].id < trajs[b].id; });
  Dataset d;
  for (std::size_t i : order) d.samples.insert(d.samples.end(), parts[i].begin(), parts[i].end());
  d.metadata = {params_hash(opt.params), opt.loop.control_dt, opt.seed, opt.duration};
  return d;
}

}  // namespace pathfollow
