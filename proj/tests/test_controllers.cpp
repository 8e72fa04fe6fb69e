#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "oracles.hpp"
#include "pathfollow/closed_loop.hpp"
#include "pathfollow/controllers.hpp"
#include "pathfollow/paths.hpp"
#include "pathfollow/randomization.hpp"

using namespace pathfollow;
using Eigen::MatrixXd;

namespace {

TrackingContext straight_context(double v = 1.0) {
  TrackingContext ctx;
  ctx.v = v;
  ctx.v_ref = 1.0;
  ctx.alpha_ref = holding_throttle(1.0, ctx.params);
  return ctx;
}

template <typename F>
double mean_call_ms(int calls, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < calls; ++i) f(i);
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / calls;
}

}  // namespace

using namespace pathfollow::oracle;

TEST(LongitudinalControl, Examples) {
  const VehicleParams p;
  const double ff = holding_throttle(1.0, p);
  EXPECT_DOUBLE_EQ(longitudinal_control(1.0, p), ff);
  EXPECT_GT(longitudinal_control(0.0, p), ff);
  EXPECT_LT(longitudinal_control(1.2, p), ff);
  EXPECT_EQ(longitudinal_control(100.0, p), 0.0);
}

TEST(LongitudinalControl, ReachesTargetFromRest) {
  const VehicleParams p;
  VehicleState q{0, 0, 0, 0};
  double reached = -1.0;
  for (int k = 0; k < 100; ++k) {
    q = advance(q, {longitudinal_control(q.v, p), 0.0}, p, 0.1, 10);
    const double t = 0.1 * (k + 1);
    if (std::abs(q.v - 1.0) <= 0.05 && reached < 0) reached = t;
    if (reached >= 0) {
      EXPECT_NEAR(q.v, 1.0, 0.05) << "t=" << t;
    }
  }
  EXPECT_GE(reached, 0.0);
  EXPECT_LE(reached, 5.0);
}

TEST(Mpc, ZeroErrorGivesReferenceCommand) {
  const TrackingContext ctx = straight_context();
  const ControlCommand u = mpc_control({}, ctx);
  EXPECT_LE(std::abs(u.alpha() - ctx.alpha_ref), 1e-3);
  EXPECT_LE(std::abs(u.beta()), 1e-3);

  // With a lookahead the on-path error is (L, 0, 0, 0); sitting on the
  // line is still the equilibrium.
  TrackingContext la = ctx;
  la.on_path = Vector4(0.5, 0, 0, 0);
  la.preview.assign(10, PreviewStep{0.0, la.on_path});
  const ControlCommand w = mpc_control({0.5, 0, 0, 0}, la);
  EXPECT_LE(std::abs(w.alpha() - ctx.alpha_ref), 1e-3);
  EXPECT_LE(std::abs(w.beta()), 1e-3);
}

TEST(Mpc, SteersTowardTheReference) {
  // Reference to the right (e2 < 0), aligned: steer right.
  EXPECT_LT(mpc_control({0, -1.0, 0, 0}, straight_context()).beta(), 0.0);
  EXPECT_GT(mpc_control({0, 1.0, 0, 0}, straight_context()).beta(), 0.0);
  // Reference heading 30 degrees to the left of the vehicle: turn left.
  EXPECT_GT(mpc_control({0, 0, kPi / 6, 0}, straight_context()).beta(), 0.0);
  // 1.5 m left of the line, at rest, angled 30 degrees toward it: keep
  // turning toward the line (right).
  EXPECT_LT(mpc_control({0, -1.5, kPi / 6, 1}, straight_context(0.0)).beta(), 0.0);
}

TEST(Mpc, WorkedExampleSettles) {
  // e = -1.5 m, phi = pi/6 from rest.
  MpcController mpc;
  const MicroSimResult r = run_micro_sim(mpc, {-1.5, kPi / 6});
  ASSERT_FALSE(r.timed_out());
  EXPECT_LT(*r.settling_time, 15.0);
  EXPECT_EQ(mpc.telemetry().max_iteration_hits, 0);
}

TEST(Mpc, OutputsStayInBox) {
  Rng rng(3);
  MpcController mpc;
  for (int i = 0; i < 200; ++i) {
    TrackingContext ctx = straight_context(rng.uniform(0, 2));
    ctx.beta_ref = rng.uniform(-1, 1);
    const ControlCommand u = mpc.act({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-1, 1)}, ctx);
    EXPECT_GE(u.alpha(), 0.0);
    EXPECT_LE(u.alpha(), 1.0);
    EXPECT_GE(u.beta(), -1.0);
    EXPECT_LE(u.beta(), 1.0);
  }
}

TEST(Mpc, QpObjectiveDecreasesEveryCall) {
  MpcOptions opt;
  opt.record_history = true;
  MpcController mpc(opt);
  const StraightLine line{0, 0, 0, 1.0, holding_throttle(1.0, {})};
  Simulation<StraightLine> sim(line, {0, 2.0, 0.5, 0}, {});
  for (int k = 0; k < 150; ++k) {
    sim.step(mpc);
    const auto& h = mpc.telemetry().last_history;
    ASSERT_FALSE(h.empty());
    for (std::size_t i = 1; i < h.size(); ++i)
      ASSERT_LE(h[i], h[i - 1] + 1e-12 * std::abs(h[i - 1])) << "call " << k << " iteration " << i;
  }
  EXPECT_EQ(mpc.telemetry().max_iteration_hits, 0);
}

TEST(Mpc, TracksCircleTighterWhenRegulatingToPath) {
  auto mean_offset = [](bool regulate) {
    const ReferencePath c = build_path({descriptor::Circle{5.0, Direction::kCounterClockwise}});
    MpcOptions opt;
    opt.regulate_to_path = regulate;
    MpcController mpc(opt);
    Simulation<ReferencePath> sim(c, {c[0].x, c[0].y, c[0].theta, 1.0}, {});
    double sum = 0.0;
    int n = 0;
    for (int k = 0; k < 300; ++k) {
      sim.step(mpc);
      if (k >= 100) {
        sum += project_onto_polyline(c, sim.state().x, sim.state().y).distance;
        ++n;
      }
    }
    return sum / n;
  };
  const double plain = mean_offset(false);
  const double shifted = mean_offset(true);
  EXPECT_LT(shifted, 0.01);
  EXPECT_LT(shifted, 0.5 * plain);
}

TEST(Mpc, ComputeBudget) {
  MpcController mpc;
  Rng rng(5);
  const TrackingContext ctx = straight_context();
  mpc.act({}, ctx);
  const double ms = mean_call_ms(200, [&](int) {
    mpc.act({rng.uniform(-1, 1), rng.uniform(-2, 2), rng.uniform(-0.7, 0.7), rng.uniform(0, 1)}, ctx);
  });
  RecordProperty("mpc_ms", std::to_string(ms));
  EXPECT_LE(ms, 10.0);
}

TEST(FitPid, RecoversExactGains) {
  Rng rng(1);
  const auto K0 = random_gains(rng, 2.0);
  const MatrixXd E = random_errors(rng, 200);
  const PidGains g = fit_pid(E, K0 * E);
  EXPECT_LE((g.K - K0).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(FitPid, NoisyRecoveryWithinStatisticalBound) {
  // K_hat - K0 = N E'(EE')^-1, so entry (i, j) has standard deviation
  // sigma * sqrt([(EE')^-1]_jj).
  Rng rng(2);
  const double sigma = 0.01;
  int within3 = 0, total = 0;
  double worst_z = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto K0 = random_gains(rng, 2.0);
    const MatrixXd E = random_errors(rng, 300);
    MatrixXd U = K0 * E;
    for (int i = 0; i < U.size(); ++i) {
      // Box-Muller
      const double a = rng.uniform(), b = rng.uniform();
      U.data()[i] += sigma * std::sqrt(-2.0 * std::log(1.0 - a)) * std::cos(2 * kPi * b);
    }
    const PidGains g = fit_pid(E, U);
    const Eigen::Matrix4d cov = (E * E.transpose()).inverse();
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 4; ++j) {
        const double z = std::abs(g.K(i, j) - K0(i, j)) / (sigma * std::sqrt(cov(j, j)));
        worst_z = std::max(worst_z, z);
        within3 += z <= 3.0;
        ++total;
      }
  }
  EXPECT_GE(static_cast<double>(within3) / total, 0.99);
  EXPECT_LE(worst_z, 5.0);
}

TEST(FitPid, ResidualMatchesPseudoInverse) {
  Rng rng(3);
  const MatrixXd E = random_errors(rng, 500);
  MatrixXd U(2, 500);
  for (int i = 0; i < U.size(); ++i) U.data()[i] = std::tanh(3 * E.data()[i % E.size()]) + rng.uniform(-0.1, 0.1);
  const PidGains g = fit_pid(E, U);
  const Eigen::Matrix<double, 2, 4> K_ref = pinv_gains(E, U);
  EXPECT_NEAR(fit_residual(g.K, E, U), fit_residual(K_ref, E, U), 1e-9);

  // No random gain matrix does better.
  const double best = fit_residual(g.K, E, U);
  for (int i = 0; i < 1000; ++i) {
    const double scale = i < 500 ? 1e-3 : 1.0;
    EXPECT_GE(fit_residual(g.K + random_gains(rng, scale), E, U), best);
  }
}

TEST(FitPid, RankDeficientNamesDirection) {
  Rng rng(4);
  MatrixXd E = random_errors(rng, 50);
  E.row(2) = 2.0 * E.row(0);  // e3 = 2 e1 in every sample
  try {
    fit_pid(E, MatrixXd::Zero(2, 50));
    FAIL() << "expected RankDeficient";
  } catch (const RankDeficient& ex) {
    ASSERT_EQ(ex.directions().size(), 1u);
    const Vector4 d = ex.directions()[0];
    EXPECT_NEAR(std::abs(d.dot(Vector4(2, 0, -1, 0).normalized())), 1.0, 1e-9);
  }
  EXPECT_THROW(fit_pid(MatrixXd::Zero(4, 3), MatrixXd::Zero(2, 3)), InvalidArgument);
}

TEST(PidControl, BiasLinearityAndClamp) {
  Rng rng(6);
  PidGains g;
  g.K = random_gains(rng, 0.2);
  const double ar = 0.0722;
  const ControlCommand zero = pid_control(g, {}, ar);
  EXPECT_DOUBLE_EQ(zero.alpha(), ar);
  EXPECT_EQ(zero.beta(), 0.0);
  const ErrorState e{0.1, -0.2, 0.05, 0.1};
  const Vector2 one = g.K * to_vector(e);
  const Vector2 two = g.K * (2.0 * to_vector(e));
  EXPECT_NEAR((two - 2.0 * one).norm(), 0.0, 1e-15);
  const ControlCommand big = pid_control(g, {100, 100, 100, 100}, ar);
  EXPECT_TRUE(big.alpha() == 0.0 || big.alpha() == 1.0);
  EXPECT_TRUE(big.beta() == -1.0 || big.beta() == 1.0);
  EXPECT_EQ(pid_control(g, e, ar), pid_control(g, e, ar));
}

TEST(PidControl, ComputeBudget) {
  Rng rng(7);
  PidGains g;
  g.K = random_gains(rng);
  double sink = 0.0;
  const double ms = mean_call_ms(100000, [&](int i) { sink += pid_control(g, {0.001 * i, 0.1, 0.0, 0.0}, 0.07).beta(); });
  EXPECT_LE(ms, 0.1);
  EXPECT_TRUE(std::isfinite(sink));
}

TEST(NnControl, ZeroModelGivesClampedBias) {
  MlpModel m = MlpModel::zeros();
  m.biases.back() << 1.7, -0.3;
  const ControlCommand u = nn_control(m, {0.4, -2, 1, 0});
  EXPECT_EQ(u.alpha(), 1.0);
  EXPECT_EQ(u.beta(), -0.3);
  EXPECT_THROW(nn_control(MlpModel::zeros({3, 5, 2}), {}), InvalidArgument);
}

TEST(NnControl, DeterministicAndFast) {
  const MlpModel m = init_model(3);
  std::vector<ControlCommand> first;
  for (int i = 0; i < 1000; ++i) first.push_back(nn_control(m, {0.001 * i, -0.5, 0.2, 0.1}));
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(nn_control(m, {0.001 * i, -0.5, 0.2, 0.1}), first[static_cast<std::size_t>(i)]);
  const double ms = mean_call_ms(10000, [&](int i) { (void)nn_control(m, {0.001 * i, 0, 0, 0}); });
  EXPECT_LE(ms, 5.0);
}

TEST(Serialization, GainsAndWeightsRoundTripExactly) {
  Rng rng(8);
  PidGains g;
  g.K = random_gains(rng);
  const PidGains g2 = pid_gains_from_json(nlohmann::json::parse(to_json(g).dump()));
  EXPECT_EQ(g2.K, g.K);

  MpcWeights w;
  w.Q(1, 1) = 1.0 / 3.0;
  w.R(0, 0) = 0.1 + 0.2;
  w.horizon = 7;
  const MpcWeights w2 = mpc_weights_from_json(nlohmann::json::parse(to_json(w).dump()));
  EXPECT_EQ(w2.Q, w.Q);
  EXPECT_EQ(w2.Q_terminal, w.Q_terminal);
  EXPECT_EQ(w2.R, w.R);
  EXPECT_EQ(w2.horizon, 7);

  EXPECT_THROW(pid_gains_from_json(nlohmann::json{{"K", {{1, 2}}}}), ParseError);
  nlohmann::json bad = to_json(w);
  bad["R"] = {{0, 0}, {0, 1}};
  EXPECT_THROW(mpc_weights_from_json(bad), ParseError);
}
