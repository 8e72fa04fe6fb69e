#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "pathfollow/reference.hpp"
#include "pathfollow/vehicle.hpp"

namespace pathfollow {

using Vector4 = Eigen::Vector4d;
using Vector2 = Eigen::Vector2d;
using Matrix4 = Eigen::Matrix4d;
using Matrix42 = Eigen::Matrix<double, 4, 2>;

inline Vector4 to_vector(const ErrorState& e) { return {e.along, e.cross, e.heading, e.speed}; }
inline ErrorState to_error(const Vector4& v) { return {v[0], v[1], v[2], v[3]}; }
inline Vector2 to_vector(const ControlCommand& u) { return {u.alpha(), u.beta()}; }

/// The reference one or more control periods ahead, assuming the vehicle
/// advances along the path at reference speed.
struct PreviewStep {
  double beta_ref = 0.0;
  Vector4 on_path = Vector4::Zero();
};

/// Quantities the error model needs besides e and u.
struct TrackingContext {
  double v = 0.0;        // vehicle speed
  double v_ref = 1.0;    // reference speed
  double beta_ref = 0.0;
  double alpha_ref = 0.0;
  VehicleParams params{};
  /// Command applied during the previous control period, if any.
  std::optional<ControlCommand> previous;
  /// Error seen by a vehicle sitting on the path at the nearest point at
  /// reference speed. Nonzero whenever the lookahead is: e1 is about the
  /// lookahead and, on curves, e2 and e3 pick up the arc's chord and angle.
  Vector4 on_path = Vector4::Zero();
  /// Entry k is the reference k + 1 control periods from now (may be empty).
  std::vector<PreviewStep> preview;

  Vector2 u_ref() const { return {alpha_ref, beta_ref}; }
};

inline TrackingContext make_context(const VehicleState& q, const ReferencePoint& r,
                                    const VehicleParams& p) {
  TrackingContext ctx;
  ctx.v = q.v;
  ctx.v_ref = r.v;
  ctx.beta_ref = r.beta;
  ctx.alpha_ref = r.alpha;
  ctx.params = p;
  return ctx;
}

/// Time derivative of the error state. Commands enter unclamped so that the
/// function can be differentiated across the box boundary.
inline Vector4 error_dynamics(const Vector4& e, const Vector2& u, const TrackingContext& ctx) {
  const VehicleParams& p = ctx.params;
  const double l = p.wheelbase;
  const double turn = ctx.v * std::tan(p.steer_gain * u[1]);
  const double turn_ref = ctx.v_ref * std::tan(p.steer_gain * ctx.beta_ref);
  const double drive_gain = p.stall_torque * p.wheel_radius * p.gear_ratio / p.wheel_inertia;
  const double damping = (p.motor_damping * p.no_load_speed + p.stall_torque) /
                         (p.wheel_inertia * p.no_load_speed);
  return {
      turn * e[1] / l + ctx.v_ref * std::cos(e[2]) - ctx.v,
      -turn * e[0] / l + ctx.v_ref * std::sin(e[2]),
      (turn_ref - turn) / l,
      drive_gain * (ctx.alpha_ref - u[0]) - e[3] * damping,
  };
}

inline Vector4 error_dynamics(const ErrorState& e, const ControlCommand& u, const TrackingContext& ctx) {
  return error_dynamics(to_vector(e), to_vector(u), ctx);
}

struct LinearizedModel {
  Matrix4 A_c = Matrix4::Zero();
  Matrix42 B_c = Matrix42::Zero();
  Matrix4 A_t = Matrix4::Identity();
  Matrix42 B_t = Matrix42::Zero();
  double dt = 0.1;
};

/// Closed-form Jacobians of error_dynamics at (e*, u*).
inline std::pair<Matrix4, Matrix42> linearize(const Vector4& e, const Vector2& u, const TrackingContext& ctx) {
  const VehicleParams& p = ctx.params;
  const double l = p.wheelbase;
  const double d = p.steer_gain;
  const double turn = ctx.v * std::tan(d * u[1]) / l;
  const double sec2 = 1.0 / (std::cos(u[1] * d) * std::cos(u[1] * d));
  const double damping = (p.motor_damping * p.no_load_speed + p.stall_torque) /
                         (p.wheel_inertia * p.no_load_speed);

  Matrix4 A = Matrix4::Zero();
  A(0, 1) = turn;
  A(0, 2) = -ctx.v_ref * std::sin(e[2]);
  A(1, 0) = -turn;
  A(1, 2) = ctx.v_ref * std::cos(e[2]);
  A(3, 3) = -damping;

  Matrix42 B = Matrix42::Zero();
  B(0, 1) = ctx.v * e[1] * d * sec2 / l;
  B(1, 1) = -ctx.v * e[0] * d * sec2 / l;
  B(2, 1) = -ctx.v * d * sec2 / l;
  B(3, 0) = -p.stall_torque * p.wheel_radius * p.gear_ratio / p.wheel_inertia;
  return {A, B};
}

/// Forward-Euler discretization: A_t = A_c dt + I, B_t = B_c dt.
inline LinearizedModel discretize(const Matrix4& A_c, const Matrix42& B_c, double dt = 0.1) {
  if (!(dt > 0.0)) throw InvalidArgument("discretize: dt must be > 0");
  LinearizedModel m;
  m.A_c = A_c;
  m.B_c = B_c;
  m.A_t = A_c * dt + Matrix4::Identity();
  m.B_t = B_c * dt;
  m.dt = dt;
  return m;
}

}  // namespace pathfollow
