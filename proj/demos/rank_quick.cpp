// Small ranking run without any trained policies: MPC against a PID fit on
// a short expert dataset, and the do-nothing policy.

#include <iostream>

#include "pathfollow/pathfollow.hpp"

using namespace pathfollow;

int main() {
  ExpertOptions expert;
  expert.duration = 30.0;
  const Dataset data = generate_expert_dataset(expert);

  const Vector2 bias(holding_throttle(1.0, expert.params), 0.0);
  const PidGains gains = fit_pid(error_matrix(data), command_matrix(data, bias));
  std::cout << "fitted K from " << data.size() << " samples:\n" << gains.K << "\n\n";

  const MpcController mpc(MpcOptions{});
  const PidController pid(gains);
  const PidController zero(PidGains{}, "zero");

  RankOptions opt;
  opt.draws = 20;
  const RankReport report = rank_policies({&mpc, &pid, &zero}, opt);
  std::cout << render_rank_table(report);
}
