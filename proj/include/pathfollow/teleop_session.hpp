#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathfollow/closed_loop.hpp"
#include "pathfollow/config.hpp"
#include "pathfollow/imitation.hpp"
#include "pathfollow/paths.hpp"

namespace pathfollow {

inline constexpr int kTeleopSchemaVersion = 1;

struct TeleopOptions {
  std::string data_dir = ".";
  double dead_man = 0.5;  // throttle drops to zero after this long without a command [s]
  LoopOptions loop{};
  VehicleParams params{};
};

/// Passes human commands through unchanged.
class HumanPolicy final : public Policy {
 public:
  std::string name() const override { return "human"; }
  ControlCommand act(const ErrorState&, const TrackingContext&) override { return command; }
  std::unique_ptr<Policy> clone() const override { return std::make_unique<HumanPolicy>(*this); }
  ControlCommand command{0.0, 0.0};
};

/// One human-in-the-loop session, independent of any transport. Time is
/// supplied by the caller: `advance_to(t)` steps the simulation in control
/// periods until its clock reaches t; the server calls it with wall-clock
/// time since the session opened.
class TeleopSession {
 public:
  TeleopSession(std::string id, TeleopOptions options)
      : id_(std::move(id)), options_(std::move(options)), trajectories_(canonical_trajectories(options_.params)) {
    if (options_.loop.throttle != ThrottleMode::kPolicy) options_.loop.throttle = ThrottleMode::kPolicy;
  }
  TeleopSession(const TeleopSession&) = delete;
  TeleopSession& operator=(const TeleopSession&) = delete;
  ~TeleopSession() { close(); }

  const std::string& id() const { return id_; }
  bool active() const { return active_.has_value(); }
  bool recording() const { return recording_.has_value(); }
  double sim_time() const { return clock_; }
  std::size_t samples_recorded() const { return samples_; }
  const std::vector<std::string>& recordings() const { return files_; }
  const ControlCommand& latched() const { return human_.command; }
  std::optional<VehicleState> vehicle() const {
    if (!sim_) return std::nullopt;
    return sim_->state();
  }

  nlohmann::json hello() const {
    nlohmann::json names = nlohmann::json::array();
    for (const auto& t : trajectories_) names.push_back(t.id);
    return {{"type", "hello"}, {"schema_version", kTeleopSchemaVersion}, {"session", id_},
            {"trajectories", names}, {"dt", options_.loop.control_dt}};
  }

  /// Parses and applies one client frame; returns the frames to send back.
  std::vector<nlohmann::json> handle(const std::string& text) {
    nlohmann::json msg;
    try {
      msg = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      return {error_frame("malformed JSON: " + std::string(e.what()))};
    }
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
      return {error_frame("frame must be an object with a string 'type'")};
    const std::string type = msg["type"];
    try {
      if (type == "start") return on_start(msg);
      if (type == "cmd") return on_cmd(msg);
      if (type == "record") return on_record(msg);
      if (type == "stop") return on_stop();
    } catch (const nlohmann::json::exception& e) {
      return {error_frame("bad '" + type + "' frame: " + e.what())};
    } catch (const Error& e) {
      return {error_frame(e.what())};
    }
    return {error_frame("unknown message type '" + type + "'")};
  }

  /// Steps the simulation until its clock reaches `t` (no-op when idle).
  void advance_to(double t) {
    if (!sim_) {
      clock_ = std::max(clock_, t);
      return;
    }
    const double dt = options_.loop.control_dt;
    while (clock_ + dt <= t + 1e-9) {
      if (clock_ - last_cmd_ >= options_.dead_man - 1e-9)
        human_.command = ControlCommand(0.0, human_.command.beta());
      const StepRecord rec = sim_->step(human_);
      clock_ += dt;
      if (recording_) {
        *recording_ << dataset_csv_row({rec_time_, rec.error, rec.command, SampleSource::kHumanDriver, active_->id})
                    << '\n';
        recording_->flush();
        rec_time_ += dt;
        ++samples_;
      }
    }
  }

  /// Current state frame; the path polyline is attached to the first frame
  /// after each `start`.
  std::optional<nlohmann::json> state_frame() {
    if (!sim_) return std::nullopt;
    const VehicleState& q = sim_->state();
    const ReferenceLookup ref = active_->path.locate(q, options_.loop.lookahead);
    const ErrorState e = error_state(q, ref.point);
    nlohmann::json f{{"type", "state"},
                     {"t", clock_},
                     {"x", q.x},
                     {"y", q.y},
                     {"theta", q.theta},
                     {"v", q.v},
                     {"e", {e.along, e.cross, e.heading, e.speed}},
                     {"ref", {{"x", ref.point.x}, {"y", ref.point.y}, {"theta", ref.point.theta}}},
                     {"recording", recording()},
                     {"samples", samples_}};
    if (!path_sent_) {
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& s : active_->path.samples()) pts.push_back({s.x, s.y});
      f["path"] = pts;
      f["trajectory"] = active_->id;
      path_sent_ = true;
    }
    return f;
  }

  /// Ends recording (keeping what was written) and the episode.
  void close() {
    stop_recording();
    sim_.reset();
    active_.reset();
  }

 private:
  static nlohmann::json error_frame(const std::string& message) { return {{"type", "error"}, {"message", message}}; }
  static nlohmann::json warning_frame(const std::string& message) {
    return {{"type", "warning"}, {"message", message}};
  }

  std::vector<nlohmann::json> on_start(const nlohmann::json& msg) {
    const std::string name = msg.at("trajectory").get<std::string>();
    const NamedPath* found = nullptr;
    for (const auto& t : trajectories_)
      if (t.id == name) found = &t;
    if (!found) return {error_frame("unknown trajectory '" + name + "'")};
    stop_recording();
    sim_.reset();
    active_ = *found;
    const PathSample& p0 = active_->path[0];
    sim_.emplace(active_->path, VehicleState{p0.x, p0.y, p0.theta, 0.0}, options_.params, options_.loop);
    human_.command = ControlCommand(0.0, 0.0);
    last_cmd_ = clock_;
    path_sent_ = false;
    return {{{"type", "ack"}, {"of", "start"}, {"trajectory", name}}};
  }

  std::vector<nlohmann::json> on_cmd(const nlohmann::json& msg) {
    const double throttle = msg.at("throttle").get<double>();
    const double steering = msg.at("steering").get<double>();
    if (!std::isfinite(throttle) || !std::isfinite(steering)) return {error_frame("cmd values must be finite")};
    human_.command = ControlCommand(throttle, steering);
    last_cmd_ = clock_;
    std::vector<nlohmann::json> out;
    if (throttle != human_.command.alpha() || steering != human_.command.beta())
      out.push_back(warning_frame("command clamped to throttle " + csv::format_exact(human_.command.alpha()) +
                                  ", steering " + csv::format_exact(human_.command.beta())));
    return out;
  }

  std::vector<nlohmann::json> on_record(const nlohmann::json& msg) {
    bool on = false;
    const auto& v = msg.at("on");
    if (v.is_boolean()) on = v.get<bool>();
    else if (v.is_string() && (v == "on" || v == "off")) on = v == "on";
    else return {error_frame("record: 'on' must be true/false or \"on\"/\"off\"")};
    if (on && !active_) return {error_frame("record: no active trajectory (send start first)")};
    if (on && !recording_) start_recording();
    if (!on) stop_recording();
    return {{{"type", "ack"}, {"of", "record"}, {"recording", recording()}, {"samples", samples_}}};
  }

  std::vector<nlohmann::json> on_stop() {
    close();
    return {{{"type", "ack"}, {"of", "stop"}}};
  }

  void start_recording() {
    std::filesystem::create_directories(options_.data_dir);
    const std::string file = (std::filesystem::path(options_.data_dir) /
                              ("hd_" + id_ + "_" + active_->id + "_" + std::to_string(files_.size()) + ".csv"))
                                 .string();
    recording_.emplace(file, std::ios::binary | std::ios::trunc);
    if (!*recording_) {
      recording_.reset();
      throw IoError("cannot open recording file '" + file + "'");
    }
    *recording_ << kDatasetHeader << '\n';
    recording_->flush();
    files_.push_back(file);
    rec_start_samples_ = samples_;
    rec_time_ = 0.0;
  }

  void stop_recording() {
    if (!recording_) return;
    recording_->flush();
    recording_.reset();
    nlohmann::json meta = to_json(DatasetMetadata{params_hash(options_.params), options_.loop.control_dt, 0,
                                                  static_cast<double>(samples_ - rec_start_samples_) *
                                                      options_.loop.control_dt});
    meta["tool_version"] = std::string(kToolVersion);
    meta["source"] = "human-driver";
    write_text_file(metadata_path(files_.back()), meta.dump(2) + "\n");
  }

  std::string id_;
  TeleopOptions options_;
  std::vector<NamedPath> trajectories_;
  std::optional<NamedPath> active_;
  std::optional<Simulation<ReferencePath>> sim_;
  HumanPolicy human_;
  double clock_ = 0.0;
  double last_cmd_ = 0.0;
  bool path_sent_ = false;
  std::optional<std::ofstream> recording_;
  std::vector<std::string> files_;
  std::size_t samples_ = 0;
  std::size_t rec_start_samples_ = 0;
  double rec_time_ = 0.0;
};

}  // namespace pathfollow
