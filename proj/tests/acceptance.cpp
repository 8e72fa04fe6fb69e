// Acceptance runner: one PASS/FAIL line per headline criterion, exit status
// 1 if any fails. End-to-end criteria drive the workbench binary; the rest
// compare the library against the reference computations in oracles.hpp.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "oracles.hpp"
#include "support.hpp"

using namespace pathfollow;
using namespace pathfollow::oracle;
namespace pt = pathfollow::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = pt::slurp(e.path().string());
  return out;
}

void must(const pt::CommandResult& r, const std::string& what) {
  if (r.code != 0) throw std::runtime_error(what + " failed: " + r.err);
}

/// Workbench outputs shared by the end-to-end criteria.
struct Workspace {
  pt::TempDir dir{"acceptance"};
  std::string policies;
  json rank;
  std::vector<std::vector<std::string>> bench_rows;

  Workspace() {
    must(pt::run_cli(dir, "--out data collect-expert"), "collect-expert");
    must(pt::run_cli(dir, "--out pid fit-pid --data data/expert.csv"), "fit-pid");
    must(pt::run_cli(dir, "--out nn train-nn --data data/expert.csv"), "train-nn");
    policies = "mpc,nn:nn/model.json,pid:pid/pid_gains.json";
    must(pt::run_cli(dir, "--out rank1 rank --n 100 --policies " + policies), "rank");
    rank = json::parse(pt::slurp(dir / "rank1/rank.json"));
    must(pt::run_cli(dir, "--out bench1 benchmark --policies " + policies), "benchmark");
    std::istringstream csv(pt::slurp(dir / "bench1/benchmark.csv"));
    std::string line;
    std::getline(csv, line);
    while (std::getline(csv, line)) {
      std::vector<std::string> row;
      for (auto f : csv::split(line)) row.emplace_back(f);
      bench_rows.push_back(row);
    }
  }

  const json& policy(const std::string& name) const {
    for (const auto& p : rank["policies"])
      if (p["name"] == name) return p;
    throw std::runtime_error("no policy " + name + " in rank.json");
  }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

// --- criteria --------------------------------------------------------------

Verdict ranking() {
  const Workspace& w = workspace();
  const json& mpc = w.policy("mpc");
  const double m = mpc["mean_settling_time"], n = w.policy("nn")["mean_settling_time"],
               p = w.policy("pid")["mean_settling_time"];
  const int first = mpc["place_counts"][0];
  const double gap = std::abs(n - p) / std::min(n, p);
  return {first >= 90 && m < n && m < p && gap <= 0.25,
          "MPC first in " + std::to_string(first) + "/100; mean ST mpc " + fmt(m) + " s, nn " + fmt(n) + " s, pid " +
              fmt(p) + " s; nn/pid gap " + fmt(100 * gap, 2) + "%"};
}

Verdict micro_sim() {
  const json& mpc = workspace().policy("mpc");
  const int timeouts = mpc["timeouts"];
  const double median = mpc["median_settling_time"];
  return {timeouts == 0 && median <= 15.0,
          std::to_string(timeouts) + " MPC timeouts in 100 draws; median ST " + fmt(median) + " s"};
}

Verdict linearization() {
  Rng rng(2024);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Point p = random_point(rng);
    const auto [A, B] = linearize(p.e, p.u, p.ctx);
    const auto [An, Bn] = numeric_jacobians(p);
    worst = std::max({worst, relative_error(A, An), relative_error(B, Bn)});
  }
  bool exact = true;
  for (int i = 0; i < 20; ++i) {
    const Point p = random_point(rng);
    const auto [A, B] = linearize(p.e, p.u, p.ctx);
    const LinearizedModel d = discretize(A, B, 0.1);
    exact = exact && d.A_t == Matrix4(A * 0.1 + Matrix4::Identity()) && d.B_t == Matrix42(B * 0.1);
  }
  return {worst <= 1e-5 && exact, "max relative Jacobian error " + fmt(worst) + " over 100 points; discretization " +
                                      (exact ? "exact" : "NOT exact")};
}

Verdict qp_oracle() {
  Rng rng(1);
  double worst_obj = 0.0, worst_kkt = 0.0;
  bool all_solved = true, all_kkt = true;
  for (int trial = 0; trial < 50; ++trial) {
    const BoxQp qp = random_qp(rng, 1 + trial % 6);
    const QpSolution s = solve_box_qp(qp);
    all_solved = all_solved && s.status == QpStatus::kSolved;
    all_kkt = all_kkt && kkt_ok(qp, s.x, 1e-8);
    worst_kkt = std::max(worst_kkt, s.kkt_residual);
    worst_obj = std::max(worst_obj, std::abs(s.objective - qp.objective(projected_gradient(qp, 1000000))));
  }
  Rng rng2(77);
  double worst_sparse = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    const SparseMpc sp = random_sparse(rng2, 1 + trial % 5);
    const BoxQp qp = condense_mpc(sp.A, sp.B, sp.c, sp.cost, sp.e0, sp.r);
    const QpSolution s = solve_box_qp(qp, 1e-11, 1000000);
    all_solved = all_solved && s.status == QpStatus::kSolved;
    worst_sparse = std::max(worst_sparse, (s.x - sp.solve_admm()).lpNorm<Eigen::Infinity>());
  }
  return {all_solved && all_kkt && worst_obj <= 1e-6 && worst_kkt <= 1e-8 && worst_sparse <= 1e-6,
          "objective gap " + fmt(worst_obj) + ", KKT residual " + fmt(worst_kkt) + ", condensed vs sparse " +
              fmt(worst_sparse)};
}

Verdict pid_fit() {
  Rng rng(3);
  const MatrixXd E = random_errors(rng, 500);
  MatrixXd U(2, 500);
  for (int i = 0; i < U.size(); ++i) U.data()[i] = std::tanh(3 * E.data()[i % E.size()]) + rng.uniform(-0.1, 0.1);
  const PidGains g = fit_pid(E, U);
  const double gap = std::abs(fit_residual(g.K, E, U) - fit_residual(pinv_gains(E, U), E, U));

  Rng rng2(2);
  const double sigma = 0.01;
  int within3 = 0, total = 0;
  double worst_z = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto K0 = random_gains(rng2, 2.0);
    const MatrixXd Et = random_errors(rng2, 300);
    MatrixXd Ut = K0 * Et;
    for (int i = 0; i < Ut.size(); ++i) {
      const double a = rng2.uniform(), b = rng2.uniform();
      Ut.data()[i] += sigma * std::sqrt(-2.0 * std::log(1.0 - a)) * std::cos(2 * kPi * b);
    }
    const PidGains gt = fit_pid(Et, Ut);
    const Eigen::Matrix4d cov = (Et * Et.transpose()).inverse();
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 4; ++j) {
        const double z = std::abs(gt.K(i, j) - K0(i, j)) / (sigma * std::sqrt(cov(j, j)));
        worst_z = std::max(worst_z, z);
        within3 += z <= 3.0;
        ++total;
      }
  }
  const double frac = static_cast<double>(within3) / total;
  return {gap <= 1e-9 && frac >= 0.99 && worst_z <= 5.0,
          "residual vs pseudo-inverse " + fmt(gap) + "; K0 recovery " + fmt(100 * frac, 4) + "% within 3 sigma, max z " +
              fmt(worst_z)};
}

Verdict mlp() {
  Rng rng(4);
  double worst_grad = 0.0, worst_fwd = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    MlpModel m = init_model(rng.next());
    for (auto& b : m.biases)
      for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = rng.uniform(-1, 1);
    VectorXd x(4), t(2);
    for (int i = 0; i < 4; ++i) x[i] = rng.uniform(-1.5, 1.5);
    for (int i = 0; i < 2; ++i) t[i] = rng.uniform(-1, 1);
    worst_grad = std::max(worst_grad, grad_check(m, x, t));
    for (int k = 0; k < 10; ++k) {
      for (int i = 0; i < 4; ++i) x[i] = rng.uniform(-3, 3);
      const VectorXd y = forward(m, x);
      const auto ref = scalar_forward(m, {x[0], x[1], x[2], x[3]});
      worst_fwd = std::max({worst_fwd, std::abs(y[0] - ref[0]), std::abs(y[1] - ref[1])});
    }
  }
  const json rep = json::parse(pt::slurp(workspace().dir / "nn/train_report.json"));
  const double mae_a = rep["val_mae"][0], mae_b = rep["val_mae"][1];
  return {worst_grad <= 1e-5 && worst_fwd <= 1e-12 && mae_a <= 0.05 && mae_b <= 0.05,
          "gradient check " + fmt(worst_grad) + "; held-out MAE throttle " + fmt(mae_a) + ", steering " + fmt(mae_b) +
              "; forward vs scalar " + fmt(worst_fwd)};
}

Verdict dynamics() {
  const VehicleParams p;
  // Straight line: y must not move at all.
  VehicleState q{0.0, 0.0, 0.0, 0.0};
  double y_drift = 0.0;
  for (int k = 0; k < 2000; ++k) {
    q = advance(q, {0.5 + 0.5 * std::sin(0.01 * k), 0.0}, p, 0.1, 10);
    y_drift = std::max(y_drift, std::abs(q.y));
  }
  // Circle radius: distance to the expected centre over a full lap at 1 m/s.
  double worst_radius = 0.0;
  for (double beta : {0.25, 0.5, -0.8, 1.0}) {
    const double radius = p.wheelbase / std::tan(p.steer_gain * std::abs(beta));
    const double cy = beta > 0 ? radius : -radius;
    VehicleState c{0.0, 0.0, 0.0, 1.0};
    const ControlCommand u(holding_throttle(1.0, p), beta);
    const int steps = static_cast<int>(std::ceil(2 * kPi * radius / 0.01)) + 1;
    for (int i = 0; i < steps; ++i) {
      c = step(c, u, p, 0.01);
      worst_radius = std::max(worst_radius, std::abs(std::hypot(c.x, c.y - cy) - radius) / radius);
    }
  }
  // Observed RK4 order.
  const State q0{0.0, 0.0, 0.0, 2.0};
  const State ref = euler_extrapolated(q0, 1.0, 1.0, p, 2.0, 4000);
  std::vector<double> err;
  for (int n : {100, 200, 400}) err.push_back(max_diff(advance({0.0, 0.0, 0.0, 2.0}, {1.0, 1.0}, p, 2.0, n), ref));
  const double order = std::min(std::log2(err[0] / err[1]), std::log2(err[1] / err[2]));
  return {y_drift == 0.0 && worst_radius <= 0.01 && order >= 3.5,
          "straight-line |y| " + fmt(y_drift) + "; circle radius error " + fmt(100 * worst_radius, 2) +
              "%; RK4 order " + fmt(order)};
}

Verdict benchmark() {
  const Workspace& w = workspace();
  // row: policy,path,lateral_mean,lateral_std,lateral_max,heading_mean,heading_std,runs,completed
  std::map<std::string, std::map<std::string, double>> mean;
  bool all_completed = true;
  for (const auto& r : w.bench_rows) {
    mean[r[1]][r[0]] = std::stod(r[2]);
    all_completed = all_completed && r[7] == r[8];
  }
  bool ordered = true, small = true;
  std::string detail;
  for (const auto& [path, m] : mean) {
    ordered = ordered && m.at("mpc") <= m.at("nn") && m.at("mpc") <= m.at("pid");
    small = small && m.at("mpc") < 0.2;
    detail += path.substr(0, 5) + " mpc " + fmt(m.at("mpc")) + " nn " + fmt(m.at("nn")) + " pid " + fmt(m.at("pid")) +
              " m; ";
  }
  return {all_completed && ordered && small && mean.size() == 3,
          detail + (all_completed ? "all runs completed" : "some runs aborted")};
}

/// Times the wrapped policy's act() over a closed-loop run.
class Timed final : public Policy {
 public:
  Timed(std::shared_ptr<Policy> inner, std::shared_ptr<std::vector<double>> ms) : inner_(inner), ms_(ms) {}
  std::string name() const override { return inner_->name(); }
  ControlCommand act(const ErrorState& e, const TrackingContext& ctx) override {
    const auto t0 = std::chrono::steady_clock::now();
    const ControlCommand u = inner_->act(e, ctx);
    ms_->push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    return u;
  }
  void reset() override { inner_->reset(); }
  std::unique_ptr<Policy> clone() const override { return std::make_unique<Timed>(*this); }

 private:
  std::shared_ptr<Policy> inner_;
  std::shared_ptr<std::vector<double>> ms_;
};

double mean_ms(std::shared_ptr<Policy> p) {
  auto ms = std::make_shared<std::vector<double>>();
  Timed timed(std::move(p), ms);
  MicroSimOptions opt;
  opt.keep_log = false;
  for (std::size_t i = 0; i < 10; ++i) run_micro_sim(timed, perturbation_for_draw(0, i), opt);
  double sum = 0.0;
  for (double v : *ms) sum += v;
  return sum / static_cast<double>(ms->size());
}

Verdict budgets() {
  const Workspace& w = workspace();
  const double mpc = mean_ms(std::make_shared<MpcController>(MpcOptions{}));
  const double nn = mean_ms(
      std::make_shared<NnController>(std::make_shared<const MlpModel>(load_model(w.dir / "nn/model.json"))));
  const double pid = mean_ms(std::make_shared<PidController>(pid_gains_from_json(read_json_file(w.dir / "pid/pid_gains.json"))));
  return {mpc <= 10.0 && nn <= 5.0 && pid <= 0.1,
          "mean per call: MPC " + fmt(mpc) + " ms, NN " + fmt(nn) + " ms, PID " + fmt(pid) + " ms"};
}

Verdict determinism() {
  Workspace& w = workspace();
  must(pt::run_cli(w.dir, "--out rank2 rank --n 100 --policies " + w.policies), "rank rerun");
  must(pt::run_cli(w.dir, "--out rank3 --workers 4 rank --n 100 --policies " + w.policies), "rank --workers 4");
  must(pt::run_cli(w.dir, "--out bench2 benchmark --policies " + w.policies), "benchmark rerun");
  must(pt::run_cli(w.dir, "--out bench3 --workers 4 benchmark --policies " + w.policies), "benchmark --workers 4");
  const auto r1 = snapshot(w.dir.path() / "rank1"), b1 = snapshot(w.dir.path() / "bench1");
  const bool rank_same = r1 == snapshot(w.dir.path() / "rank2") && r1 == snapshot(w.dir.path() / "rank3");
  const bool bench_same = b1 == snapshot(w.dir.path() / "bench2") && b1 == snapshot(w.dir.path() / "bench3");
  return {rank_same && bench_same, "rank " + std::string(rank_same ? "identical" : "DIFFERS") + " (" +
                                       std::to_string(r1.size()) + " files), benchmark " +
                                       (bench_same ? "identical" : "DIFFERS") + " (" + std::to_string(b1.size()) +
                                       " files) across reruns and --workers 1/4"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"ranking", ranking},           {"micro-sim", micro_sim}, {"linearization", linearization},
      {"qp-oracle", qp_oracle},       {"pid-fit", pid_fit},     {"mlp", mlp},
      {"dynamics", dynamics},         {"benchmark", benchmark}, {"compute-budget", budgets},
      {"determinism", determinism},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << std::endl;
  return failed ? 1 : 0;
}
