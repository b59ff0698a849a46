#include "hula/expert.hpp"

#include <cmath>
#include <limits>

#include "hula/errors.hpp"

namespace hula {

namespace {

constexpr double kTolerance = 1e-9;
constexpr int kMaxSweeps = 1'000'000;

struct Backup {
  double reward;
  bool terminal;
  Coord next;
};

Backup deterministic_backup(const GridMap& map, const EnvParams& params, Coord s, Action a) {
  Coord n = move_target(map, s, a);
  switch (map.at(n)) {
    case CellKind::Goal: return {params.step_penalty + params.goal_reward, true, n};
    case CellKind::Trap: return {params.step_penalty + params.trap_reward, true, n};
    default: return {params.step_penalty, false, n};
  }
}

}  // namespace

ExpertPolicy plan_optimal(const GridMap& map, const EnvParams& params) {
  params.validate();
  const auto cells = map.reachable_free_cells();

  bool goal_reachable = false;
  for (Coord c : cells) {
    for (Action a : kMoves) {
      if (map.at(move_target(map, c, a)) == CellKind::Goal) goal_reachable = true;
    }
  }
  if (!goal_reachable)
    throw PlanningError("no goal reachable from the start of map '" + map.name() + "'");

  Eigen::ArrayXXd v = Eigen::ArrayXXd::Zero(map.height(), map.width());
  auto q_value = [&](Coord s, Action a) {
    Backup b = deterministic_backup(map, params, s, a);
    return b.reward + (b.terminal ? 0.0 : params.gamma * v(b.next.y, b.next.x));
  };

  // In-place (Gauss-Seidel) sweeps in row-major order.
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double delta = 0.0;
    for (Coord s : cells) {
      double best = -std::numeric_limits<double>::infinity();
      for (Action a : kMoves) best = std::max(best, q_value(s, a));
      delta = std::max(delta, std::abs(best - v(s.y, s.x)));
      v(s.y, s.x) = best;
    }
    if (delta < kTolerance) break;
    if (sweep + 1 == kMaxSweeps) throw PlanningError("value iteration did not converge");
  }

  ExpertPolicy policy;
  policy.action_of.setConstant(map.height(), map.width(), -1);
  policy.values.setConstant(map.height(), map.width(), std::numeric_limits<double>::quiet_NaN());
  for (Coord s : cells) {
    int best = 0;
    double best_q = q_value(s, kMoves[0]);
    for (int a = 1; a < kNumMoves; ++a) {
      double qa = q_value(s, kMoves[a]);
      if (qa > best_q + kTolerance) {
        best = a;
        best_q = qa;
      }
    }
    policy.action_of(s.y, s.x) = static_cast<std::int8_t>(best);
    policy.values(s.y, s.x) = v(s.y, s.x);
  }
  return policy;
}

Action expert_action(const ExpertPolicy& policy, Coord state) {
  if (!policy.covers(state))
    throw CoverageError("expert policy does not cover cell (" + std::to_string(state.x) + ", " +
                        std::to_string(state.y) + ")");
  return action_from_ordinal(policy.action_of(state.y, state.x));
}

}  // namespace hula
