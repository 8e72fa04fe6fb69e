#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pathfollow/controllers.hpp"
#include "pathfollow/csv.hpp"
#include "pathfollow/reference.hpp"
#include "pathfollow/vehicle.hpp"

namespace pathfollow {

enum class ThrottleMode {
  kShared,  // throttle from the shared speed loop, steering from the policy
  kPolicy,  // both channels from the policy
};

struct LoopOptions {
  double control_dt = 0.1;
  int substeps = 10;  // physics steps per control period
  double lookahead = 0.5;
  int preview = 10;  // control periods of reference preview handed to the policy
  ThrottleMode throttle = ThrottleMode::kShared;
  SpeedLoop speed{};
};

/// What the controller saw and did at one control instant.
struct StepRecord {
  double t = 0.0;
  VehicleState state;
  ControlCommand command;
  ErrorState error;
  ReferencePoint reference;
  std::size_t ref_index = 0;
};

/// Vehicle + reference + policy stepped at the control period, with the
/// physics integrated at control_dt / substeps. The reference is held by
/// reference and must outlive the simulation.
template <ReferenceSource Ref>
class Simulation {
 public:
  Simulation(const Ref& reference, VehicleState start, VehicleParams params, LoopOptions options = {})
      : reference_(reference), state_(start), params_(params), options_(options) {
    if (options_.substeps < 1 || !(options_.control_dt > 0.0))
      throw InvalidArgument("Simulation: bad control period");
  }
  Simulation(Ref&&, VehicleState, VehicleParams, LoopOptions = {}) = delete;

  /// Observes the reference, queries the policy, and holds the command for
  /// one control period. `on_substep(t, state)` sees every physics step.
  template <typename OnSubstep>
  StepRecord step(Policy& policy, OnSubstep&& on_substep) {
    const ReferenceLookup ref = reference_.locate(state_, options_.lookahead);
    const ErrorState e = error_state(state_, ref.point);
    TrackingContext ctx = make_context(state_, ref.point, params_);
    ctx.previous = previous_;
    ctx.on_path = on_path_error(ref);
    ctx.preview.resize(static_cast<std::size_t>(std::max(options_.preview, 0)));
    for (std::size_t k = 0; k < ctx.preview.size(); ++k) {
      const double dist = ref.point.v * options_.control_dt * static_cast<double>(k + 1);
      const ReferenceLookup later = reference_.ahead(ref, dist, options_.lookahead);
      ctx.preview[k].beta_ref = later.point.beta;
      ctx.preview[k].on_path = on_path_error(later);
    }
    const ControlCommand raw = policy.act(e, ctx);
    const double alpha = options_.throttle == ThrottleMode::kShared
                             ? longitudinal_control(state_.v, params_, options_.speed)
                             : raw.alpha();
    const ControlCommand u(alpha, raw.beta());
    StepRecord rec{time_, state_, u, e, ref.point, ref.index};

    const double h = options_.control_dt / options_.substeps;
    for (int i = 0; i < options_.substeps; ++i) {
      state_ = pathfollow::step(state_, u, params_, h);
      ++substep_count_;
      on_substep(static_cast<double>(substep_count_) * h, state_);
    }
    ++control_count_;
    time_ = static_cast<double>(control_count_) * options_.control_dt;
    previous_ = u;
    return rec;
  }

  static Vector4 on_path_error(const ReferenceLookup& r) {
    return to_vector(error_state({r.foot.x, r.foot.y, r.foot.theta, r.point.v}, r.point));
  }

  StepRecord step(Policy& policy) {
    return step(policy, [](double, const VehicleState&) {});
  }

  /// Places the vehicle without touching the clock (episode restarts).
  void reset_state(const VehicleState& q) {
    state_ = q;
    previous_.reset();
  }

  const VehicleState& state() const { return state_; }
  double time() const { return time_; }
  const Ref& reference() const { return reference_; }
  const VehicleParams& params() const { return params_; }
  const LoopOptions& options() const { return options_; }

 private:
  const Ref& reference_;
  VehicleState state_;
  VehicleParams params_;
  LoopOptions options_;
  std::optional<ControlCommand> previous_;
  double time_ = 0.0;
  long control_count_ = 0;
  long substep_count_ = 0;
};

inline constexpr std::string_view kStepLogHeader = "t,x,y,theta,v,alpha,beta,e1,e2,e3,e4,ref_index";

inline std::string step_log_csv(const std::vector<StepRecord>& steps) {
  std::string out(kStepLogHeader);
  out += '\n';
  for (const StepRecord& r : steps) {
    for (double v : {r.t, r.state.x, r.state.y, r.state.theta, r.state.v, r.command.alpha(), r.command.beta(),
                     r.error.along, r.error.cross, r.error.heading, r.error.speed}) {
      out += csv::format_exact(v);
      out += ',';
    }
    out += std::to_string(r.ref_index);
    out += '\n';
  }
  return out;
}

}  // namespace pathfollow
