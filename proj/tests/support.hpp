#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "pathfollow/pathfollow.hpp"

namespace pathfollow::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "pf") {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

#ifdef PATHFOLLOW_CLI
struct CommandResult {
  int code = -1;
  std::string out;
  std::string err;
};

/// Runs the workbench binary with `args` inside `dir`, capturing both streams.
inline CommandResult run_cli(const TempDir& dir, const std::string& args) {
  const std::string out = dir / ".stdout", err = dir / ".stderr";
  const std::string cmd = "cd '" + dir.path().string() + "' && '" + PATHFOLLOW_CLI + "' " + args + " >'" + out +
                          "' 2>'" + err + "'";
  const int status = std::system(cmd.c_str());
  CommandResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  std::filesystem::remove(out);
  std::filesystem::remove(err);
  return r;
}
#endif

/// The default expert dataset, PID fit and trained network, computed once
/// per process.
struct Pipeline {
  Dataset expert;
  PidGains pid;
  std::shared_ptr<const MlpModel> nn;
  TrainReport report;
};

inline const Pipeline& pipeline() {
  static const Pipeline p = [] {
    Pipeline out;
    out.expert = generate_expert_dataset(ExpertOptions{});
    const VehicleParams params{};
    const Vector2 bias(holding_throttle(1.0, params), 0.0);
    out.pid = fit_pid(error_matrix(out.expert), command_matrix(out.expert, bias));
    auto [model, report] = train(init_model(0), training_set(out.expert), TrainOptions{});
    out.nn = std::make_shared<const MlpModel>(std::move(model));
    out.report = std::move(report);
    return out;
  }();
  return p;
}

}  // namespace pathfollow::testing
