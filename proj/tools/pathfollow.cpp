// pathfollow: command-line front end for the workbench.
//
//   pathfollow [--config FILE] [--out DIR] [--seed N] [--workers K] <command> ...
//
// See README.md for the output layout of each command.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pathfollow/pathfollow.hpp"
#include "pathfollow/teleop_server.hpp"

namespace fs = std::filesystem;
using namespace pathfollow;

namespace {

/// Files written by one command. Unless commit() is called they are removed
/// again, together with any directories created for them.
class Outputs {
 public:
  explicit Outputs(fs::path root) : root_(std::move(root)) {}
  Outputs(const Outputs&) = delete;
  Outputs& operator=(const Outputs&) = delete;
  ~Outputs() {
    if (committed_) return;
    std::error_code ec;
    for (auto it = files_.rbegin(); it != files_.rend(); ++it) fs::remove(*it, ec);
    for (auto it = dirs_.rbegin(); it != dirs_.rend(); ++it)
      if (fs::is_empty(*it, ec)) fs::remove(*it, ec);
  }

  fs::path path(const std::string& rel) const { return root_ / rel; }

  void write(const std::string& rel, const std::string& text) {
    const fs::path file = root_ / rel;
    make_dirs(file.parent_path());
    files_.push_back(file);
    write_text_file(file.string(), text);
  }

  void commit() { committed_ = true; }

 private:
  void make_dirs(const fs::path& dir) {
    if (dir.empty() || fs::exists(dir)) return;
    make_dirs(dir.parent_path());
    fs::create_directory(dir);
    dirs_.push_back(dir);
  }

  fs::path root_;
  std::vector<fs::path> files_;
  std::vector<fs::path> dirs_;
  bool committed_ = false;
};

std::string file_hash(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open '" + file + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return hex64(fnv1a64(buf.str()));
}

struct PolicySpec {
  std::string label;
  std::unique_ptr<Policy> policy;
  nlohmann::json source;  // what the policy was built from
};

// "mpc", "zero", "nn:<model.json>", "pid:<gains.json>", optionally prefixed
// with "<label>=".
PolicySpec make_policy(std::string spec, const WorkbenchConfig& cfg) {
  std::string label;
  if (const auto eq = spec.find('='); eq != std::string::npos) {
    label = spec.substr(0, eq);
    spec = spec.substr(eq + 1);
    if (label.empty()) throw InvalidArgument("policy '" + spec + "': empty label");
  }
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
  PolicySpec out;
  if (kind == "mpc" && arg.empty()) {
    MpcOptions opt;
    opt.weights = cfg.weights;
    out.label = label.empty() ? "mpc" : label;
    out.policy = std::make_unique<MpcController>(opt, out.label);
    out.source = {{"kind", "mpc"}};
  } else if (kind == "zero" && arg.empty()) {
    out.label = label.empty() ? "zero" : label;
    out.policy = std::make_unique<PidController>(PidGains{}, out.label);
    out.source = {{"kind", "zero"}};
  } else if (kind == "nn" && !arg.empty()) {
    out.label = label.empty() ? "nn" : label;
    out.policy = std::make_unique<NnController>(std::make_shared<const MlpModel>(load_model(arg)), out.label);
    out.source = {{"kind", "nn"}, {"file_hash", file_hash(arg)}};
  } else if (kind == "pid" && !arg.empty()) {
    out.label = label.empty() ? "pid" : label;
    out.policy = std::make_unique<PidController>(pid_gains_from_json(read_json_file(arg)), out.label);
    out.source = {{"kind", "pid"}, {"file_hash", file_hash(arg)}};
  } else {
    throw InvalidArgument("unknown policy '" + spec + "' (expected mpc, zero, nn:<model>, pid:<gains>)");
  }
  out.source["label"] = out.label;
  return out;
}

std::vector<PolicySpec> make_policies(const std::string& list, const WorkbenchConfig& cfg) {
  std::vector<PolicySpec> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(make_policy(item, cfg));
  if (out.empty()) throw InvalidArgument("--policies: empty list");
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (out[i].label == out[j].label)
        throw InvalidArgument("--policies: duplicate label '" + out[i].label + "' (use label=spec)");
  return out;
}

std::vector<const Policy*> prototypes(const std::vector<PolicySpec>& specs) {
  std::vector<const Policy*> out;
  for (const auto& s : specs) out.push_back(s.policy.get());
  return out;
}

nlohmann::json sources(const std::vector<PolicySpec>& specs) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : specs) j.push_back(s.source);
  return j;
}

LoopOptions loop_options(const WorkbenchConfig& cfg) {
  LoopOptions loop;
  loop.lookahead = cfg.lookahead;
  return loop;
}

std::vector<int> parse_int_list(const std::string& list, const char* what) {
  std::vector<int> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidArgument(std::string(what) + ": '" + item + "' is not an integer");
    }
  }
  if (out.empty()) throw InvalidArgument(std::string(what) + ": empty list");
  return out;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

// --- commands --------------------------------------------------------------

struct Global {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  unsigned workers = 1;
};

struct ExpertArgs {
  double duration = 120.0;
};

void collect_expert(const WorkbenchConfig& cfg, const ExpertArgs& a) {
  ExpertOptions opt;
  opt.seed = cfg.seed;
  opt.duration = a.duration;
  opt.workers = cfg.workers;
  opt.mpc.weights = cfg.weights;
  opt.loop = loop_options(cfg);
  opt.params = cfg.params;
  const Dataset d = generate_expert_dataset(opt);

  Outputs out(cfg.out);
  out.write("expert.csv", dataset_to_csv(d));
  nlohmann::json meta = to_json(d.metadata);
  meta["provenance"] = provenance(cfg, cfg.seed);
  meta["source"] = "mpc-expert";
  out.write("expert.csv.meta.json", meta.dump(2) + "\n");
  out.commit();
  std::cout << "wrote " << d.size() << " samples to " << out.path("expert.csv").string() << "\n";
}

struct TrainArgs {
  std::vector<std::string> data;
  int epochs = 500;
  double lr = 1e-3;
  int batch = 64;
  double val_split = 0.1;
};

Dataset load_all(const std::vector<std::string>& files) {
  Dataset all;
  for (const auto& f : files) {
    Dataset d = load_dataset(f);
    if (all.samples.empty()) all.metadata = d.metadata;
    all.samples.insert(all.samples.end(), d.samples.begin(), d.samples.end());
  }
  return all;
}

nlohmann::json data_sources(const std::vector<std::string>& files) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& f : files) j.push_back(file_hash(f));
  return j;
}

void train_nn(const WorkbenchConfig& cfg, const TrainArgs& a) {
  const Dataset d = load_all(a.data);
  TrainOptions opt;
  opt.learning_rate = a.lr;
  opt.epochs = a.epochs;
  opt.batch_size = a.batch;
  opt.seed = cfg.seed;
  opt.val_split = a.val_split;
  auto [model, report] = train(init_model(cfg.seed), training_set(d), opt);

  Outputs out(cfg.out);
  nlohmann::json mj = to_json(model);
  mj["provenance"] = provenance(cfg, cfg.seed);
  mj["provenance"]["data"] = data_sources(a.data);
  out.write("model.json", mj.dump(2) + "\n");
  nlohmann::json rj = to_json(report);
  rj["provenance"] = mj["provenance"];
  rj["samples"] = d.size();
  out.write("train_report.json", rj.dump(2) + "\n");
  out.commit();
  std::cout << "trained " << report.epochs << " epochs on " << d.size() << " samples: train mse "
            << csv::format_fixed(report.final_train_mse, 6) << ", val mse " << csv::format_fixed(report.final_val_mse, 6);
  if (report.val_mae.size() == 2)
    std::cout << ", val mae " << csv::format_fixed(report.val_mae[0], 4) << " / " << csv::format_fixed(report.val_mae[1], 4);
  std::cout << "\n";
}

void fit_pid_cmd(const WorkbenchConfig& cfg, const std::vector<std::string>& data) {
  const Dataset d = load_all(data);
  const LoopOptions loop = loop_options(cfg);
  const Vector2 bias(holding_throttle(loop.speed.target, cfg.params), 0.0);
  const Eigen::MatrixXd E = error_matrix(d);
  const Eigen::MatrixXd U = command_matrix(d, bias);
  const PidGains g = fit_pid(E, U);

  Outputs out(cfg.out);
  nlohmann::json j = to_json(g);
  j["residual"] = fit_residual(g.K, E, U);
  j["samples"] = d.size();
  j["provenance"] = provenance(cfg, cfg.seed);
  j["provenance"]["data"] = data_sources(data);
  out.write("pid_gains.json", j.dump(2) + "\n");
  out.commit();
  std::cout << "K =\n" << g.K << "\n";
}

struct RankArgs {
  std::string policies = "mpc";
  int n = 100;
  double cap = 30.0;
};

void rank_cmd(const WorkbenchConfig& cfg, const RankArgs& a) {
  const auto specs = make_policies(a.policies, cfg);
  RankOptions opt;
  opt.draws = a.n;
  opt.seed = cfg.seed;
  opt.workers = cfg.workers;
  opt.sim.cap = a.cap;
  opt.sim.loop = loop_options(cfg);
  opt.sim.params = cfg.params;
  const RankReport r = rank_policies(prototypes(specs), opt);

  Outputs out(cfg.out);
  nlohmann::json j = to_json(r);
  j["provenance"] = provenance(cfg, cfg.seed);
  j["provenance"]["policies"] = sources(specs);
  const std::string table = render_rank_table(r);
  out.write("rank.json", j.dump(2) + "\n");
  out.write("rank.txt", table);
  out.commit();
  std::cout << table;
}

struct BenchArgs {
  std::string policies = "mpc";
  std::string paths = "1,2,3";
  int repeats = 5;
};

void benchmark_cmd(const WorkbenchConfig& cfg, const BenchArgs& a) {
  const auto specs = make_policies(a.policies, cfg);
  BenchmarkPlan plan;
  plan.paths = parse_int_list(a.paths, "--paths");
  plan.repeats = a.repeats;
  plan.seed = cfg.seed;
  plan.workers = cfg.workers;
  plan.run.loop = loop_options(cfg);
  plan.run.params = cfg.params;
  const BenchmarkResult res = run_benchmark(prototypes(specs), plan);

  Outputs out(cfg.out);
  const std::string table = render_benchmark_table(res);
  out.write("benchmark.csv", aggregate_csv(res));
  nlohmann::json j = to_json(res);
  j["provenance"] = provenance(cfg, cfg.seed);
  j["provenance"]["policies"] = sources(specs);
  out.write("benchmark.json", j.dump(2) + "\n");
  out.write("benchmark.txt", table);
  const auto R = static_cast<std::size_t>(plan.repeats);
  for (std::size_t i = 0; i < res.logs.size(); ++i) {
    const RunLog& log = res.logs[i];
    const std::string stem = run_file_stem(log, static_cast<int>(i % R));
    const ReferencePath* path = nullptr;
    for (const auto& p : res.paths)
      if (p.id == log.path) path = &p.path;
    out.write("runs/" + stem + ".csv", run_log_csv(log));
    out.write("svg/" + stem + ".svg", run_svg(log, *path));
  }
  out.commit();
  std::cout << table;
}

struct MicroArgs {
  std::string policy = "mpc";
  double e = -1.5;
  double phi = 0.5236;
  double cap = 30.0;
  bool log = false;
};

void micro_sim_cmd(const WorkbenchConfig& cfg, const MicroArgs& a) {
  PolicySpec spec = make_policy(a.policy, cfg);
  MicroSimOptions opt;
  opt.cap = a.cap;
  opt.loop = loop_options(cfg);
  opt.params = cfg.params;
  opt.keep_log = true;
  const MicroSimResult r = run_micro_sim(*spec.policy, {a.e, a.phi}, opt);
  nlohmann::json j = to_json(r);
  if (a.log) {
    Outputs out(cfg.out);
    out.write("micro_sim.csv", step_log_csv(r.log));
    j["provenance"] = provenance(cfg, cfg.seed);
    out.write("micro_sim.json", j.dump(2) + "\n");
    out.commit();
  }
  std::cout << to_json(r).dump() << "\n";
}

struct TeleopArgs {
  std::string address = "127.0.0.1";
  int port = 8765;
  std::string data_dir = "teleop_data";
  std::string ui_dir;
  double tick_rate = 50.0;
};

void teleop_cmd(const WorkbenchConfig& cfg, const TeleopArgs& a) {
  if (a.port < 0 || a.port > 65535) throw InvalidArgument("--port must be in [0, 65535]");
  TeleopServerConfig sc;
  sc.address = a.address;
  sc.port = static_cast<unsigned short>(a.port);
  sc.tick_rate = a.tick_rate;
  sc.ui_dir = a.ui_dir;
  sc.session.data_dir = a.data_dir;
  sc.session.loop = loop_options(cfg);
  sc.session.params = cfg.params;

  // Block the stop signals before any thread exists; the main thread waits
  // for them while the server runs on its own thread.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  TeleopServer server(sc);
  std::cout << "teleop: listening on ws://" << a.address << ":" << server.port() << "/session" << std::endl;
  std::thread worker([&] { server.run(); });
  int sig = 0;
  sigwait(&stop_signals, &sig);
  server.stop();
  worker.join();
  std::cout << "teleop: stopped" << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Path-following control workbench"};
  app.require_subcommand(1);
  app.fallthrough();

  Global g;
  app.add_option("--config", g.config, "Workbench config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output directory (default from config, else ./out)");
  app.add_option("--seed", g.seed, "Root seed");
  app.add_option("--workers", g.workers, "Worker threads (results do not depend on it)")->check(CLI::PositiveNumber);

  ExpertArgs ea;
  auto* expert = app.add_subcommand("collect-expert", "Roll the MPC expert over the training trajectories");
  expert->add_option("--duration", ea.duration, "Seconds per trajectory")->capture_default_str();

  TrainArgs ta;
  auto* tnn = app.add_subcommand("train-nn", "Train the imitation MLP on dataset CSVs");
  tnn->add_option("--data", ta.data, "Dataset CSV (repeatable)")->required()->check(CLI::ExistingFile);
  tnn->add_option("--epochs", ta.epochs)->capture_default_str();
  tnn->add_option("--lr", ta.lr)->capture_default_str();
  tnn->add_option("--batch", ta.batch)->capture_default_str();
  tnn->add_option("--val-split", ta.val_split)->capture_default_str();

  std::vector<std::string> pid_data;
  auto* fpid = app.add_subcommand("fit-pid", "Least-squares linear feedback from dataset CSVs");
  fpid->add_option("--data", pid_data, "Dataset CSV (repeatable)")->required()->check(CLI::ExistingFile);

  RankArgs ra;
  auto* rank = app.add_subcommand("rank", "Rank policies by settling time over randomized micro-simulations");
  rank->add_option("--policies", ra.policies, "Comma list: mpc, zero, nn:<model>, pid:<gains>, [label=]spec")
      ->capture_default_str();
  rank->add_option("--n", ra.n, "Number of draws")->capture_default_str();
  rank->add_option("--cap", ra.cap, "Micro-sim time cap [s]")->capture_default_str();

  BenchArgs ba;
  auto* bench = app.add_subcommand("benchmark", "Path-following benchmark on the reconstructed paths");
  bench->add_option("--policies", ba.policies)->capture_default_str();
  bench->add_option("--paths", ba.paths, "Comma list of path numbers (1-3)")->capture_default_str();
  bench->add_option("--repeats", ba.repeats)->capture_default_str();

  MicroArgs ma;
  auto* micro = app.add_subcommand("micro-sim", "One micro-simulation from a given perturbation");
  micro->add_option("--policy", ma.policy)->capture_default_str();
  micro->add_option("--e", ma.e, "Lateral offset [m]")->capture_default_str();
  micro->add_option("--phi", ma.phi, "Heading offset [rad]")->capture_default_str();
  micro->add_option("--cap", ma.cap)->capture_default_str();
  micro->add_flag("--log", ma.log, "Write micro_sim.csv/json under --out");

  TeleopArgs tla;
  auto* teleop = app.add_subcommand("teleop", "Serve the teleoperation WebSocket endpoint");
  teleop->add_option("--address", tla.address)->capture_default_str();
  teleop->add_option("--port", tla.port, "0 picks a free port")->capture_default_str();
  teleop->add_option("--data-dir", tla.data_dir)->capture_default_str();
  teleop->add_option("--ui-dir", tla.ui_dir, "Static files served over HTTP");
  teleop->add_option("--tick-rate", tla.tick_rate, "State frames per second")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    WorkbenchConfig cfg = g.config.empty() ? WorkbenchConfig{} : load_workbench_config(g.config);
    if (app.count("--out")) cfg.out = g.out;
    if (app.count("--seed")) cfg.seed = g.seed;
    if (app.count("--workers")) cfg.workers = g.workers;

    if (*expert) collect_expert(cfg, ea);
    else if (*tnn) train_nn(cfg, ta);
    else if (*fpid) fit_pid_cmd(cfg, pid_data);
    else if (*rank) rank_cmd(cfg, ra);
    else if (*bench) benchmark_cmd(cfg, ba);
    else if (*micro) micro_sim_cmd(cfg, ma);
    else if (*teleop) teleop_cmd(cfg, tla);
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.code() << ": " << one_line(e.what()) << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << one_line(e.what()) << "\n";
  }
  return 1;
}
