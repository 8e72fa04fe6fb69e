#pragma once

#include <array>
#include <cmath>
#include <string>

#include "pathfollow/common.hpp"

namespace pathfollow {

/// Simulated ground truth: planar pose plus longitudinal speed.
struct VehicleState {
  double x = 0.0;      // east [m]
  double y = 0.0;      // north [m]
  double theta = 0.0;  // heading [rad], (-pi, pi]
  double v = 0.0;      // longitudinal speed [m/s]

  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(theta) && std::isfinite(v);
  }
  friend bool operator==(const VehicleState&, const VehicleState&) = default;
};

/// Throttle/steering pair. Both channels are clamped to their box when the
/// command is built, so every instance is a valid actuator input.
class ControlCommand {
 public:
  ControlCommand() = default;
  ControlCommand(double alpha, double beta)
      : alpha_(clamp_finite(alpha, 0.0, 1.0)), beta_(clamp_finite(beta, -1.0, 1.0)) {}

  double alpha() const { return alpha_; }  // throttle, [0, 1]
  double beta() const { return beta_; }    // steering, [-1, 1]

  friend bool operator==(const ControlCommand&, const ControlCommand&) = default;

 private:
  double alpha_ = 0.0;
  double beta_ = 0.0;
};

/// Physical parameters of the 4-DOF model. The defaults describe a generic
/// 1/6-scale car and are not measured values.
struct VehicleParams {
  double wheelbase = 0.5;        // l [m]
  double steer_gain = 0.4;       // delta: steering command -> wheel angle [rad]
  double gear_ratio = 0.2;       // gamma [-]
  double wheel_inertia = 0.005;  // I_wheel [kg m^2]
  double wheel_radius = 0.09;    // R_wheel [m]
  double stall_torque = 0.3;     // tau_0 [N m]
  double no_load_speed = 120.0;  // omega_0 [rad/s]
  double motor_damping = 1e-4;   // c_1 [N m s/rad]

  void validate() const {
    const std::array<std::pair<const char*, double>, 8> fields{{
        {"wheelbase", wheelbase},
        {"steer_gain", steer_gain},
        {"gear_ratio", gear_ratio},
        {"wheel_inertia", wheel_inertia},
        {"wheel_radius", wheel_radius},
        {"stall_torque", stall_torque},
        {"no_load_speed", no_load_speed},
        {"motor_damping", motor_damping},
    }};
    for (const auto& [name, value] : fields) {
      if (!std::isfinite(value) || value <= 0.0)
        throw InvalidArgument(std::string("VehicleParams.") + name + " must be finite and > 0");
    }
    if (steer_gain >= kPi / 2) throw InvalidArgument("VehicleParams.steer_gain must be < pi/2");
  }

  friend bool operator==(const VehicleParams&, const VehicleParams&) = default;
};

/// Affine DC motor map: full stall torque at rest, linear drop with motor
/// shaft speed gamma*v/R_wheel.
inline double motor_torque(double alpha, double v, const VehicleParams& p) {
  const double shaft_speed = p.gear_ratio * v / p.wheel_radius;
  return p.stall_torque * alpha - (p.motor_damping + p.stall_torque / p.no_load_speed) * shaft_speed;
}

/// Throttle at which the motor torque vanishes at speed `v` (flat ground).
inline double holding_throttle(double v, const VehicleParams& p) {
  const double shaft_speed = p.gear_ratio * v / p.wheel_radius;
  return (p.motor_damping + p.stall_torque / p.no_load_speed) * shaft_speed / p.stall_torque;
}

/// Curvature produced by steering command `beta`.
inline double steering_curvature(double beta, const VehicleParams& p) {
  return std::tan(beta * p.steer_gain) / p.wheelbase;
}

/// Steering command that produces curvature `kappa`, saturated to [-1, 1].
inline double steering_for_curvature(double kappa, const VehicleParams& p) {
  return clamp_finite(std::atan(kappa * p.wheelbase) / p.steer_gain, -1.0, 1.0);
}

struct StateRate {
  double x_dot = 0.0;
  double y_dot = 0.0;
  double theta_dot = 0.0;
  double v_dot = 0.0;
};

inline StateRate derivative(const VehicleState& q, const ControlCommand& u, const VehicleParams& p) {
  return {
      std::cos(q.theta) * q.v,
      std::sin(q.theta) * q.v,
      q.v * steering_curvature(u.beta(), p),
      motor_torque(u.alpha(), q.v, p) * p.gear_ratio * p.wheel_radius / p.wheel_inertia,
  };
}

/// One classical RK4 step of length `dt` (0 < dt <= 0.1). Heading is
/// re-wrapped and speed floored at zero afterwards (the model has no
/// reverse gear).
inline VehicleState step(const VehicleState& q, const ControlCommand& u, const VehicleParams& p,
                         double dt) {
  if (!(dt > 0.0 && dt <= 0.1)) throw InvalidArgument("step: dt must be in (0, 0.1]");

  auto shifted = [&q](const StateRate& k, double h) {
    return VehicleState{q.x + h * k.x_dot, q.y + h * k.y_dot, q.theta + h * k.theta_dot,
                        q.v + h * k.v_dot};
  };
  const StateRate k1 = derivative(q, u, p);
  const StateRate k2 = derivative(shifted(k1, dt / 2), u, p);
  const StateRate k3 = derivative(shifted(k2, dt / 2), u, p);
  const StateRate k4 = derivative(shifted(k3, dt), u, p);

  VehicleState next{
      q.x + dt / 6 * (k1.x_dot + 2 * k2.x_dot + 2 * k3.x_dot + k4.x_dot),
      q.y + dt / 6 * (k1.y_dot + 2 * k2.y_dot + 2 * k3.y_dot + k4.y_dot),
      q.theta + dt / 6 * (k1.theta_dot + 2 * k2.theta_dot + 2 * k3.theta_dot + k4.theta_dot),
      q.v + dt / 6 * (k1.v_dot + 2 * k2.v_dot + 2 * k3.v_dot + k4.v_dot),
  };
  if (!next.finite()) throw IntegrationDiverged("step: non-finite state after RK4 step");
  next.theta = wrap_angle(next.theta);
  if (next.v < 0.0) next.v = 0.0;
  return next;
}

/// Holds `u` for `duration` seconds using `substeps` equal RK4 steps.
inline VehicleState advance(VehicleState q, const ControlCommand& u, const VehicleParams& p,
                            double duration, int substeps) {
  const double dt = duration / substeps;
  for (int i = 0; i < substeps; ++i) q = step(q, u, p, dt);
  return q;
}

}  // namespace pathfollow
