#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pathfollow/box_qp.hpp"
#include "pathfollow/error_model.hpp"
#include "pathfollow/mlp.hpp"

namespace pathfollow {

/// A path-following policy: tracking error (plus context) in, command out.
/// Instances may carry internal state (MPC warm start), so each simulation
/// worker uses its own clone.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  virtual ControlCommand act(const ErrorState& e, const TrackingContext& ctx) = 0;
  /// Forget per-episode state.
  virtual void reset() {}
  virtual std::unique_ptr<Policy> clone() const = 0;
};

// ---------------------------------------------------------------------------
// Longitudinal speed loop shared by all policies.

struct SpeedLoop {
  double target = 1.0;
  double gain = 1.5;  // throttle per m/s of speed error
};

/// Feed-forward holding throttle plus proportional correction, clamped to [0, 1].
inline double longitudinal_control(double v, const VehicleParams& p, const SpeedLoop& loop = {}) {
  return clamp_finite(holding_throttle(loop.target, p) + loop.gain * (loop.target - v), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// MPC.

struct MpcWeights {
  // Cross-track weighted up from (1, 1, 2, 1): the lighter weight leaves the
  // expert slow to settle. Much heavier and it turns away from the line
  // when started pointing away from it.
  Matrix4 Q = Vector4(1.0, 3.0, 2.0, 1.0).asDiagonal();
  Matrix4 Q_terminal = 5.0 * Matrix4(Vector4(1.0, 3.0, 2.0, 1.0).asDiagonal());
  Eigen::Matrix2d R = Vector2(0.5, 0.5).asDiagonal();
  int horizon = 10;

  void validate() const {
    if (horizon < 1) throw InvalidArgument("MpcWeights: horizon must be >= 1");
    auto psd = [](const Eigen::MatrixXd& M, double floor) {
      if (!M.allFinite() || (M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12) return false;
      return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(M).eigenvalues().minCoeff() >= floor;
    };
    if (!psd(Q, -1e-12)) throw InvalidArgument("MpcWeights: Q must be symmetric PSD");
    if (!psd(Q_terminal, -1e-12)) throw InvalidArgument("MpcWeights: Q_N must be symmetric PSD");
    if (!psd(R, 1e-12)) throw InvalidArgument("MpcWeights: R must be symmetric PD");
  }
};

struct MpcOptions {
  MpcWeights weights;
  double dt = 0.1;
  double qp_tolerance = 1e-8;
  int qp_max_iterations = 100000;
  /// Speed used in the prediction model is at least this (the steering
  /// rows vanish at standstill otherwise).
  double min_model_speed = 0.5;
  /// Linearize at the previously applied command instead of the reference
  /// command (the previous command is hidden state that imitators cannot see).
  bool linearize_at_previous = true;
  /// Penalize e - ctx.on_path instead of e. With a lookahead e = 0 is not an
  /// equilibrium and the plain cost makes the vehicle cut inside curves.
  bool regulate_to_path = true;
  /// Use the reference preview in the context (curvature changes ahead).
  bool use_preview = true;
  bool record_history = false;
};

struct MpcTelemetry {
  long calls = 0;
  long max_iteration_hits = 0;
  int last_iterations = 0;
  QpStatus last_status = QpStatus::kSolved;
  double last_residual = 0.0;
  std::vector<double> last_history;
};

/// Receding-horizon controller on the error model, re-linearized every
/// call at the current error and the previously applied command.
class MpcController final : public Policy {
 public:
  explicit MpcController(MpcOptions options = {}, std::string label = "mpc")
      : options_(std::move(options)), label_(std::move(label)) {
    options_.weights.validate();
  }

  std::string name() const override { return label_; }

  ControlCommand act(const ErrorState& e_in, const TrackingContext& ctx_in) override {
    const Vector4 e = to_vector(e_in);
    TrackingContext ctx = ctx_in;
    ctx.v = std::max(ctx.v, options_.min_model_speed);

    Vector2 u_star = ctx.u_ref();
    if (options_.linearize_at_previous) {
      if (ctx_in.previous) u_star = to_vector(*ctx_in.previous);
      else if (last_) u_star = to_vector(*last_);
    }

    const auto [A_c, B_c] = linearize(e, u_star, ctx);
    const Vector4 drift = error_dynamics(e, u_star, ctx) - A_c * e - B_c * u_star;
    const LinearizedModel lin = discretize(A_c, B_c, options_.dt);
    const int N = options_.weights.horizon;
    const auto n = static_cast<std::size_t>(N);

    // Reference over the horizon: step k uses the reference curvature k
    // periods ahead when the loop supplies a preview, else today's.
    std::vector<double> beta_ref(n + 1, ctx.beta_ref);
    std::vector<Vector4> target(n + 1, options_.regulate_to_path ? ctx_in.on_path : Vector4::Zero());
    if (options_.use_preview) {
      for (std::size_t k = 1; k <= n && k <= ctx_in.preview.size(); ++k) {
        beta_ref[k] = ctx_in.preview[k - 1].beta_ref;
        if (options_.regulate_to_path) target[k] = ctx_in.preview[k - 1].on_path;
      }
      for (std::size_t k = ctx_in.preview.size() + 1; k <= n; ++k) {
        beta_ref[k] = beta_ref[k - 1];
        target[k] = target[k - 1];
      }
    }
    const double l = ctx.params.wheelbase;
    const auto turn_ref = [&](double b) { return ctx.v_ref * std::tan(ctx.params.steer_gain * b) / l; };
    std::vector<Vector4> offsets(n);
    std::vector<Vector2> u_refs(n);
    for (std::size_t k = 0; k < n; ++k) {
      Vector4 c = drift;
      c[2] += turn_ref(beta_ref[k]) - turn_ref(ctx.beta_ref);
      // Written for the shifted state e - target.
      offsets[k] = options_.dt * c + lin.A_t * target[k] - target[k + 1];
      u_refs[k] = {ctx.alpha_ref, beta_ref[k]};
    }
    const MpcCost cost{options_.weights.Q, options_.weights.Q_terminal, options_.weights.R};
    const BoxQp qp = condense_mpc(lin.A_t, lin.B_t, offsets, cost, e - target[0], u_refs);

    QpOptions qopt;
    qopt.tolerance = options_.qp_tolerance;
    qopt.max_iterations = options_.qp_max_iterations;
    qopt.record_history = options_.record_history;
    if (plan_.size() == 2 * N) {
      Eigen::VectorXd shifted(2 * N);
      shifted.head(2 * (N - 1)) = plan_.tail(2 * (N - 1));
      shifted.tail(2) = plan_.tail(2);
      qopt.warm_start = shifted;
    }
    QpSolution sol = solve_box_qp(qp, qopt);

    ++telemetry_.calls;
    if (sol.status == QpStatus::kMaxIterations) ++telemetry_.max_iteration_hits;
    telemetry_.last_iterations = sol.iterations;
    telemetry_.last_status = sol.status;
    telemetry_.last_residual = sol.kkt_residual;
    telemetry_.last_history = std::move(sol.objective_history);

    plan_ = sol.x;
    const ControlCommand u(sol.x[0], sol.x[1]);
    last_ = u;
    return u;
  }

  void reset() override {
    plan_.resize(0);
    last_.reset();
  }

  std::unique_ptr<Policy> clone() const override { return std::make_unique<MpcController>(*this); }

  const MpcOptions& options() const { return options_; }
  const MpcTelemetry& telemetry() const { return telemetry_; }

 private:
  MpcOptions options_;
  std::string label_;
  Eigen::VectorXd plan_;
  std::optional<ControlCommand> last_;
  MpcTelemetry telemetry_;
};

/// One-shot MPC evaluation with a fresh controller.
inline ControlCommand mpc_control(const ErrorState& e, const TrackingContext& ctx, const MpcWeights& w = {}) {
  MpcOptions opt;
  opt.weights = w;
  MpcController mpc(opt);
  return mpc.act(e, ctx);
}

// ---------------------------------------------------------------------------
// Least-squares linear feedback ("PID").

struct PidGains {
  Eigen::Matrix<double, 2, 4> K = Eigen::Matrix<double, 2, 4>::Zero();
};

class RankDeficient : public Error {
 public:
  RankDeficient(const std::string& what, std::vector<Vector4> directions)
      : Error("rank-deficient", what), directions_(std::move(directions)) {}
  const std::vector<Vector4>& directions() const { return directions_; }

 private:
  std::vector<Vector4> directions_;
};

/// K minimizing ||K E - U||_F, i.e. the least-squares map from error states
/// (columns of E, 4 x n) to commands (columns of U, 2 x n).
inline PidGains fit_pid(const Eigen::MatrixXd& E, const Eigen::MatrixXd& U) {
  if (E.rows() != 4 || U.rows() != 2 || E.cols() != U.cols())
    throw InvalidArgument("fit_pid: expected E 4xn and U 2xn with equal n");
  if (E.cols() < 4) throw InvalidArgument("fit_pid: need at least 4 samples");
  if (!E.allFinite() || !U.allFinite()) throw InvalidArgument("fit_pid: non-finite data");

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(E, Eigen::ComputeFullU);
  const Eigen::Vector4d sv = svd.singularValues();
  const double cutoff = std::max(sv[0], 1e-300) * 1e-10;
  std::vector<Vector4> null_dirs;
  for (int i = 0; i < 4; ++i)
    if (sv[i] <= cutoff) null_dirs.emplace_back(svd.matrixU().col(i));
  if (!null_dirs.empty()) {
    std::ostringstream msg;
    msg << "fit_pid: error data is rank deficient along";
    for (const auto& d : null_dirs) {
      msg << " [";
      for (int k = 0; k < 4; ++k) msg << (k ? " " : "") << d[k];
      msg << "]";
    }
    throw RankDeficient(msg.str(), std::move(null_dirs));
  }

  const Eigen::MatrixXd Kt = E.transpose().colPivHouseholderQr().solve(U.transpose());
  PidGains g;
  g.K = Kt.transpose();
  return g;
}

/// Squared Frobenius residual of a gain matrix on (E, U).
inline double fit_residual(const Eigen::Matrix<double, 2, 4>& K, const Eigen::MatrixXd& E, const Eigen::MatrixXd& U) {
  return (K * E - U).squaredNorm();
}

/// u = clamp(K e + (alpha_ref, 0)).
inline ControlCommand pid_control(const PidGains& g, const ErrorState& e, double alpha_ref) {
  const Vector2 u = g.K * to_vector(e) + Vector2(alpha_ref, 0.0);
  return {u[0], u[1]};
}

class PidController final : public Policy {
 public:
  explicit PidController(PidGains gains, std::string label = "pid") : gains_(gains), label_(std::move(label)) {}
  std::string name() const override { return label_; }
  ControlCommand act(const ErrorState& e, const TrackingContext& ctx) override {
    return pid_control(gains_, e, ctx.alpha_ref);
  }
  std::unique_ptr<Policy> clone() const override { return std::make_unique<PidController>(*this); }
  const PidGains& gains() const { return gains_; }

 private:
  PidGains gains_;
  std::string label_;
};

// ---------------------------------------------------------------------------
// Imitation-learned network.

inline ControlCommand nn_control(const MlpModel& model, const ErrorState& e) {
  if (model.layers.front() != 4 || model.layers.back() != 2)
    throw InvalidArgument("nn_control: model must map 4 inputs to 2 outputs");
  const Eigen::VectorXd u = forward(model, to_vector(e));
  return {u[0], u[1]};
}

class NnController final : public Policy {
 public:
  explicit NnController(std::shared_ptr<const MlpModel> model, std::string label = "nn")
      : model_(std::move(model)), label_(std::move(label)) {
    if (!model_) throw InvalidArgument("NnController: no model");
    model_->validate();
    if (model_->layers.front() != 4 || model_->layers.back() != 2)
      throw InvalidArgument("NnController: model must map 4 inputs to 2 outputs");
  }
  std::string name() const override { return label_; }
  ControlCommand act(const ErrorState& e, const TrackingContext&) override { return nn_control(*model_, e); }
  std::unique_ptr<Policy> clone() const override { return std::make_unique<NnController>(*this); }
  const MlpModel& model() const { return *model_; }

 private:
  std::shared_ptr<const MlpModel> model_;
  std::string label_;
};

// ---------------------------------------------------------------------------
// JSON for gains and weights.

namespace detail {
template <typename Derived>
nlohmann::json matrix_json(const Eigen::MatrixBase<Derived>& M) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    rows.push_back(row);
  }
  return rows;
}

template <int Rows, int Cols>
Eigen::Matrix<double, Rows, Cols> matrix_from_json(const nlohmann::json& j, const char* what) {
  Eigen::Matrix<double, Rows, Cols> M;
  if (!j.is_array() || j.size() != Rows) throw ParseError(std::string(what) + ": expected " + std::to_string(Rows) + " rows");
  for (int r = 0; r < Rows; ++r) {
    if (!j[r].is_array() || j[r].size() != Cols)
      throw ParseError(std::string(what) + ": row " + std::to_string(r) + " must have " + std::to_string(Cols) + " entries");
    for (int c = 0; c < Cols; ++c) M(r, c) = j[r][c].get<double>();
  }
  return M;
}
}  // namespace detail

inline nlohmann::json to_json(const PidGains& g) {
  return {{"kind", "pid_gains"}, {"K", detail::matrix_json(g.K)}};
}

inline PidGains pid_gains_from_json(const nlohmann::json& j) {
  try {
    if (!j.contains("K")) throw ParseError("pid gains: missing field 'K'");
    PidGains g;
    g.K = detail::matrix_from_json<2, 4>(j.at("K"), "pid gains K");
    if (!g.K.allFinite()) throw ParseError("pid gains: non-finite entry");
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("pid gains: ") + e.what());
  }
}

inline nlohmann::json to_json(const MpcWeights& w) {
  return {{"kind", "mpc_weights"},
          {"Q", detail::matrix_json(w.Q)},
          {"Q_N", detail::matrix_json(w.Q_terminal)},
          {"R", detail::matrix_json(w.R)},
          {"N", w.horizon}};
}

inline MpcWeights mpc_weights_from_json(const nlohmann::json& j) {
  try {
    MpcWeights w;
    if (j.contains("Q")) w.Q = detail::matrix_from_json<4, 4>(j.at("Q"), "mpc Q");
    if (j.contains("Q_N")) w.Q_terminal = detail::matrix_from_json<4, 4>(j.at("Q_N"), "mpc Q_N");
    if (j.contains("R")) w.R = detail::matrix_from_json<2, 2>(j.at("R"), "mpc R");
    if (j.contains("N")) w.horizon = j.at("N").get<int>();
    w.validate();
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("mpc weights: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what());
  }
}

}  // namespace pathfollow
