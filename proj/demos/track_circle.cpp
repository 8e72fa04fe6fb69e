// Drives the MPC around a 5 m circle and prints the tracking error.
//
//   demo_track_circle [radius]

#include <cstdlib>
#include <iomanip>
#include <iostream>

#include "pathfollow/pathfollow.hpp"

using namespace pathfollow;

int main(int argc, char** argv) {
  const double radius = argc > 1 ? std::atof(argv[1]) : 5.0;
  const NamedPath circle{"circle", build_path({descriptor::Circle{radius, Direction::kCounterClockwise}})};

  MpcController mpc(MpcOptions{});
  const RunLog log = run_path_following(mpc, circle, /*seed=*/0);
  if (log.aborted) {
    std::cerr << "run aborted: " << log.abort_reason << "\n";
    return 1;
  }
  const TrackingStats st = tracking_stats(log, circle.path);

  std::cout << std::fixed << std::setprecision(3);
  std::cout << "lap of " << circle.path.length() << " m in " << log.steps.back().t << " s\n";
  std::cout << "lateral error: mean " << st.lateral_mean << " m, max " << st.lateral_max << " m\n";
  std::cout << "heading error: mean " << st.heading_mean << " rad\n";
  // A few samples of what the controller saw and did.
  for (std::size_t k = 0; k < log.steps.size(); k += log.steps.size() / 5) {
    const StepRecord& r = log.steps[k];
    std::cout << "t=" << r.t << "  e2=" << r.error.cross << "  beta=" << r.command.beta() << "\n";
  }
}
