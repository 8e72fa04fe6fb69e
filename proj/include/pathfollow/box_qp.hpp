#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "pathfollow/common.hpp"

namespace pathfollow {

/// minimize 1/2 x'Px + q'x + constant  subject to  lower <= x <= upper.
struct BoxQp {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  double constant = 0.0;

  Eigen::Index size() const { return q.size(); }

  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(P * x) + q.dot(x) + constant; }

  Eigen::VectorXd clamp(const Eigen::VectorXd& x) const { return x.cwiseMax(lower).cwiseMin(upper); }

  /// Max-norm of x - clamp(x - (Px + q)); zero exactly at a minimizer.
  double kkt_residual(const Eigen::VectorXd& x) const {
    return (x - clamp(x - (P * x + q))).lpNorm<Eigen::Infinity>();
  }
};

enum class QpStatus { kSolved, kMaxIterations, kInfeasibleBounds };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::kSolved: return "solved";
    case QpStatus::kMaxIterations: return "max-iterations";
    case QpStatus::kInfeasibleBounds: return "infeasible-bounds";
  }
  return "unknown";
}

struct QpSolution {
  Eigen::VectorXd x;
  QpStatus status = QpStatus::kMaxIterations;
  int iterations = 0;
  double kkt_residual = std::numeric_limits<double>::infinity();
  double objective = std::numeric_limits<double>::infinity();
  std::vector<double> objective_history;  // filled when requested; one entry per iterate
};

struct QpOptions {
  double tolerance = 1e-8;
  int max_iterations = 100000;
  std::optional<Eigen::VectorXd> warm_start;
  bool record_history = false;
};

/// Largest eigenvalue of a symmetric PSD matrix by power iteration from a
/// fixed start vector (Rayleigh quotient of the last iterate).
inline double max_eigenvalue(const Eigen::MatrixXd& P, int iterations = 50) {
  const Eigen::Index n = P.rows();
  if (n == 0) return 0.0;
  Rng rng = Rng::stream(0x5EED, "power-method");
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = 1.0 + rng.uniform();
  v.normalize();
  double lambda = 0.0;
  for (int k = 0; k < iterations; ++k) {
    Eigen::VectorXd w = P * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    lambda = v.dot(w);
    v = w / norm;
  }
  return std::max(lambda, v.dot(P * v));
}

/// Accelerated projected gradient with function-value restart. The
/// objective is non-increasing from iterate to iterate.
inline QpSolution solve_box_qp(const BoxQp& prob, const QpOptions& opt = {}) {
  const Eigen::Index n = prob.size();
  if (prob.P.rows() != n || prob.P.cols() != n || prob.lower.size() != n || prob.upper.size() != n)
    throw InvalidArgument("solve_box_qp: inconsistent dimensions");
  if (!prob.P.allFinite() || !prob.q.allFinite())
    throw InvalidArgument("solve_box_qp: non-finite cost data");
  const double scale = std::max(1.0, prob.P.cwiseAbs().maxCoeff());
  if (n > 0 && (prob.P - prob.P.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw InvalidArgument("solve_box_qp: P is not symmetric");

  QpSolution sol;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isnan(prob.lower[i]) || std::isnan(prob.upper[i]) || prob.lower[i] > prob.upper[i]) {
      sol.status = QpStatus::kInfeasibleBounds;
      sol.x = Eigen::VectorXd::Zero(n);
      return sol;
    }
  }

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  if (opt.warm_start && opt.warm_start->size() == n) x = *opt.warm_start;
  x = prob.clamp(x);

  double lipschitz = 1.05 * max_eigenvalue(prob.P);
  if (!(lipschitz > 0.0)) lipschitz = 1.0;

  // Decrease f(to) - f(from) evaluated from the step itself; comparing
  // objective values directly loses the decrease to rounding near the optimum.
  auto change = [&](const Eigen::VectorXd& from, const Eigen::VectorXd& to) {
    const Eigen::VectorXd d = to - from;
    return d.dot(prob.P * from + prob.q) + 0.5 * d.dot(prob.P * d);
  };

  Eigen::VectorXd y = x;
  double momentum = 1.0;
  if (opt.record_history) sol.objective_history.push_back(prob.objective(x));

  sol.kkt_residual = prob.kkt_residual(x);
  int k = 0;
  while (sol.kkt_residual > opt.tolerance && k < opt.max_iterations) {
    ++k;
    Eigen::VectorXd candidate = prob.clamp(y - (prob.P * y + prob.q) / lipschitz);
    if (change(x, candidate) > 0.0) {
      // Restart: drop momentum and take a plain projected step from x.
      momentum = 1.0;
      int backtracks = 0;
      while (true) {
        candidate = prob.clamp(x - (prob.P * x + prob.q) / lipschitz);
        if (change(x, candidate) <= 0.0) break;
        if (++backtracks > 30) {
          candidate = x;
          break;
        }
        lipschitz *= 2.0;
      }
      y = candidate;
    } else {
      const double next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
      y = candidate + ((momentum - 1.0) / next) * (candidate - x);
      momentum = next;
    }
    x = std::move(candidate);
    if (opt.record_history) sol.objective_history.push_back(prob.objective(x));
    sol.kkt_residual = prob.kkt_residual(x);
  }
  sol.objective = prob.objective(x);
  sol.x = std::move(x);
  sol.iterations = k;
  sol.status = sol.kkt_residual <= opt.tolerance ? QpStatus::kSolved : QpStatus::kMaxIterations;
  return sol;
}

inline QpSolution solve_box_qp(const BoxQp& prob, double tol, int max_iter) {
  QpOptions opt;
  opt.tolerance = tol;
  opt.max_iterations = max_iter;
  return solve_box_qp(prob, opt);
}

/// Linear(-affine) error model e_{k+1} = A e_k + B u_k + c used over the
/// horizon.
struct MpcModel {
  Eigen::Matrix4d A = Eigen::Matrix4d::Identity();
  Eigen::Matrix<double, 4, 2> B = Eigen::Matrix<double, 4, 2>::Zero();
  Eigen::Vector4d offset = Eigen::Vector4d::Zero();
};

struct MpcCost {
  Eigen::Matrix4d Q = Eigen::Matrix4d::Identity();
  Eigen::Matrix4d Q_terminal = Eigen::Matrix4d::Identity();
  Eigen::Matrix2d R = Eigen::Matrix2d::Identity();
};

/// Eliminates the error states from the horizon problem
///   e_N' Q_N e_N + sum_{k<N} e_k' Q e_k + (u_k - r_k)' R (u_k - r_k)
/// with e_{k+1} = A e_k + B u_k + c_k, leaving a box QP over the stacked
/// commands (u_0, ..., u_{N-1}) with the throttle/steering box on every
/// step. The horizon is the length of `u_refs` (and of `offsets`).
inline BoxQp condense_mpc(const Eigen::Matrix4d& A, const Eigen::Matrix<double, 4, 2>& B,
                          const std::vector<Eigen::Vector4d>& offsets, const MpcCost& cost,
                          const Eigen::Vector4d& e0, const std::vector<Eigen::Vector2d>& u_refs) {
  const auto N = static_cast<int>(u_refs.size());
  if (N < 1) throw InvalidArgument("condense_mpc: horizon must be >= 1");
  if (offsets.size() != u_refs.size()) throw InvalidArgument("condense_mpc: one offset per horizon step");
  const Eigen::Index nx = 4 * N;
  const Eigen::Index nu = 2 * N;

  // Prediction E = Phi e0 + Gamma U + C, rows k = 1..N.
  Eigen::MatrixXd Gamma = Eigen::MatrixXd::Zero(nx, nu);
  Eigen::VectorXd free_response(nx);
  std::vector<Eigen::Matrix4d> powers(static_cast<std::size_t>(N + 1));
  powers[0] = Eigen::Matrix4d::Identity();
  for (int k = 1; k <= N; ++k) powers[static_cast<std::size_t>(k)] = A * powers[static_cast<std::size_t>(k - 1)];

  Eigen::Vector4d e_free = e0;
  for (int k = 1; k <= N; ++k) {
    e_free = A * e_free + offsets[static_cast<std::size_t>(k - 1)];
    free_response.segment<4>(4 * (k - 1)) = e_free;
    for (int j = 0; j < k; ++j)
      Gamma.block<4, 2>(4 * (k - 1), 2 * j) = powers[static_cast<std::size_t>(k - 1 - j)] * B;
  }

  Eigen::MatrixXd Qbar = Eigen::MatrixXd::Zero(nx, nx);
  for (int k = 1; k < N; ++k) Qbar.block<4, 4>(4 * (k - 1), 4 * (k - 1)) = cost.Q;
  Qbar.block<4, 4>(4 * (N - 1), 4 * (N - 1)) = cost.Q_terminal;
  Eigen::MatrixXd Rbar = Eigen::MatrixXd::Zero(nu, nu);
  Eigen::VectorXd Uref(nu);
  for (int k = 0; k < N; ++k) {
    Rbar.block<2, 2>(2 * k, 2 * k) = cost.R;
    Uref.segment<2>(2 * k) = u_refs[static_cast<std::size_t>(k)];
  }

  BoxQp qp;
  qp.P = 2.0 * (Gamma.transpose() * Qbar * Gamma + Rbar);
  qp.P = 0.5 * (qp.P + qp.P.transpose()).eval();
  qp.q = 2.0 * Gamma.transpose() * (Qbar * free_response) - 2.0 * (Rbar * Uref);
  qp.constant = free_response.dot(Qbar * free_response) + e0.dot(cost.Q * e0) + Uref.dot(Rbar * Uref);
  qp.lower.resize(nu);
  qp.upper.resize(nu);
  for (int k = 0; k < N; ++k) {
    qp.lower.segment<2>(2 * k) << 0.0, -1.0;
    qp.upper.segment<2>(2 * k) << 1.0, 1.0;
  }
  return qp;
}

/// Time-invariant model and reference over the horizon.
inline BoxQp condense_mpc(const MpcModel& model, const MpcCost& cost, const Eigen::Vector4d& e0,
                          const Eigen::Vector2d& u_ref, int horizon) {
  if (horizon < 1) throw InvalidArgument("condense_mpc: horizon must be >= 1");
  const auto n = static_cast<std::size_t>(horizon);
  return condense_mpc(model.A, model.B, std::vector<Eigen::Vector4d>(n, model.offset), cost, e0,
                      std::vector<Eigen::Vector2d>(n, u_ref));
}

/// Condensation of the purely linear model (no affine offset).
inline BoxQp condense_mpc(const Eigen::Matrix4d& A_t, const Eigen::Matrix<double, 4, 2>& B_t,
                          const Eigen::Matrix4d& Q, const Eigen::Matrix4d& Q_N, const Eigen::Matrix2d& R,
                          const Eigen::Vector4d& e0, const Eigen::Vector2d& u_ref, int horizon) {
  return condense_mpc(MpcModel{A_t, B_t, Eigen::Vector4d::Zero()}, MpcCost{Q, Q_N, R}, e0, u_ref, horizon);
}

}  // namespace pathfollow
