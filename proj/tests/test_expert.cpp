#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <functional>
#include <limits>

#include "hula/errors.hpp"
#include "hula/expert.hpp"
#include "support.hpp"

using namespace hula;
using hula::test::shared;
using hula::test::shipped;

namespace {

// Brute force, independent of value iteration: every trap-free simple path
// from `from` to a goal, by iterative deepening on the path length. Returns
// all paths of the minimal length as action sequences.
std::vector<std::vector<Action>> shortest_paths(const GridMap& m, Coord from) {
  std::vector<std::vector<Action>> found;
  std::vector<Action> path;
  std::vector<char> on_path(m.num_cells(), 0);
  std::function<void(Coord, int)> dfs = [&](Coord c, int budget) {
    if (m.at(c) == CellKind::Goal) {
      if (budget == 0) found.push_back(path);
      return;
    }
    if (budget == 0) return;
    on_path[m.index(c)] = 1;
    for (Action a : kMoves) {
      const Coord n{c.x + offset(a).x, c.y + offset(a).y};
      if (!m.in_bounds(n) || on_path[m.index(n)]) continue;
      const CellKind k = m.at(n);
      if (k == CellKind::Wall || k == CellKind::Trap) continue;
      path.push_back(a);
      dfs(n, budget - 1);
      path.pop_back();
    }
    on_path[m.index(c)] = 0;
  };
  for (int len = 1; len <= m.num_cells() && found.empty(); ++len) dfs(from, len);
  return found;
}

bool trap_adjacent(const GridMap& m, Coord c) {
  for (Action a : kMoves) {
    const Coord n{c.x + offset(a).x, c.y + offset(a).y};
    if (m.in_bounds(n) && m.at(n) == CellKind::Trap) return true;
  }
  return false;
}

int trap_adjacent_cells(const GridMap& m, Coord from, const std::vector<Action>& path) {
  int n = trap_adjacent(m, from);
  Coord c = from;
  for (Action a : path) {
    c = {c.x + offset(a).x, c.y + offset(a).y};
    if (m.at(c) != CellKind::Goal) n += trap_adjacent(m, c);
  }
  return n;
}

// Breadth-first search restricted to cells with no trap neighbour: is there
// any route at all, of any length, that never touches one?
bool clear_route_exists(const GridMap& m) {
  std::vector<char> seen(m.num_cells(), 0);
  std::vector<Coord> frontier{m.start()};
  seen[m.index(m.start())] = 1;
  while (!frontier.empty()) {
    const Coord c = frontier.back();
    frontier.pop_back();
    for (Action a : kMoves) {
      const Coord n{c.x + offset(a).x, c.y + offset(a).y};
      if (!m.in_bounds(n) || seen[m.index(n)]) continue;
      if (m.at(n) == CellKind::Goal) return true;
      if (m.at(n) != CellKind::Free || trap_adjacent(m, n)) continue;
      seen[m.index(n)] = 1;
      frontier.push_back(n);
    }
  }
  return false;
}

}  // namespace

TEST(PlanOptimal, Corridor) {
  const GridMap m = parse_map("S.G");
  const ExpertPolicy e = plan_optimal(m, EnvParams{});
  EXPECT_EQ(expert_action(e, {0, 0}), Action::Right);
  EXPECT_EQ(expert_action(e, {1, 0}), Action::Right);
}

TEST(PlanOptimal, OrdinalTieBreak) {
  // Goal two moves away both via Up-first and Right-first routes.
  const GridMap m = parse_map(".G\nS.");
  const ExpertPolicy e = plan_optimal(m, EnvParams{});
  EXPECT_EQ(expert_action(e, {0, 1}), Action::Up);
}

TEST(PlanOptimal, UnreachableGoal) {
  EXPECT_THROW(plan_optimal(parse_map("S#G"), EnvParams{}), PlanningError);
  EXPECT_THROW(plan_optimal(parse_map("STG"), EnvParams{}), PlanningError);
}

TEST(ExpertAction, CoverageErrors) {
  const GridMap m = parse_map("S.G\n#..");
  const ExpertPolicy e = plan_optimal(m, EnvParams{});
  EXPECT_THROW(expert_action(e, {2, 0}), CoverageError);  // goal
  EXPECT_THROW(expert_action(e, {0, 1}), CoverageError);  // wall
  EXPECT_THROW(expert_action(e, {9, 9}), CoverageError);  // off map
  EXPECT_FALSE(e.covers({2, 0}));
  EXPECT_TRUE(e.covers({1, 1}));
}

TEST(PlanOptimal, StartMoveMatchesEnumeratedOptimalPath) {
  const GridMap m = shipped("trap_world");
  const auto paths = shortest_paths(m, m.start());
  ASSERT_FALSE(paths.empty());
  // Lexicographically smallest by action ordinal = the ordinal tie-break.
  const auto best = *std::min_element(paths.begin(), paths.end());
  const ExpertPolicy e = plan_optimal(m, EnvParams{});
  EXPECT_EQ(expert_action(e, m.start()), best.front());
}

// The expert stays clear of trap-adjacent cells whenever some route does.
TEST(PlanOptimal, ExpertPathAvoidsTrapNeighboursWhenPossible) {
  const GridMap m = shipped("trap_world");
  const ExpertPolicy e = plan_optimal(m, EnvParams{});
  std::vector<Action> expert_path;
  Coord c = m.start();
  while (m.at(c) != CellKind::Goal) {
    expert_path.push_back(expert_action(e, c));
    c = move_target(m, c, expert_path.back());
    ASSERT_NE(m.at(c), CellKind::Trap);
  }
  const auto paths = shortest_paths(m, m.start());
  EXPECT_EQ(expert_path.size(), paths.front().size());
  const int touched = trap_adjacent_cells(m, m.start(), expert_path);
  if (clear_route_exists(m)) {
    EXPECT_EQ(touched, 0);
  } else {
    for (const auto& p : paths) EXPECT_GT(trap_adjacent_cells(m, m.start(), p), 0);
  }
}

TEST(PlanOptimal, RolloutReturnsEqualValues) {
  for (const char* name : {"trap_world", "shortcut_world", "po_world", "corridor"}) {
    const GridMap m = shipped(name);
    const EnvParams p;
    const ExpertPolicy e = plan_optimal(m, p);
    auto world = shared(m);
    for (Coord c : m.reachable_free_cells()) {
      ASSERT_TRUE(e.covers(c)) << name;
      EnvState s = reset_at(world, c, 1);
      double ret = 0.0, discount = 1.0;
      int steps = 0;
      while (s.running()) {
        const StepResult r = step(s, expert_action(e, s.pos), true, p);
        ret += discount * r.reward;
        discount *= p.gamma;
        ++steps;
      }
      EXPECT_EQ(s.status, Outcome::Goal) << name;
      EXPECT_LE(steps, m.width() * m.height());
      EXPECT_NEAR(ret, e.value(c), 1e-8) << name;
    }
  }
}

TEST(PlanOptimal, Idempotent) {
  const GridMap m = shipped("shortcut_world");
  const ExpertPolicy a = plan_optimal(m, EnvParams{});
  const ExpertPolicy b = plan_optimal(m, EnvParams{});
  EXPECT_TRUE((a.action_of == b.action_of).all());
  EXPECT_TRUE(a.values.isNaN().cwiseEqual(b.values.isNaN()).all());
  EXPECT_TRUE(((a.values == b.values) || a.values.isNaN()).all());
}

TEST(PlanOptimal, ShortcutExpertTakesTheAlley) {
  // Slip-free, the trap-lined alley is the shortest route.
  const GridMap m = shipped("shortcut_world");
  const ExpertPolicy e = plan_optimal(m, EnvParams{});
  EXPECT_EQ(expert_action(e, m.start()), Action::Right);
}

TEST(Experts, ScriptedAndReplay) {
  const GridMap m = parse_map("S.G");
  ScriptedExpert scripted(plan_optimal(m, EnvParams{}));
  ExpertRequest req;
  req.state = {0, 0};
  EXPECT_EQ(scripted.request(req).action, Action::Right);

  ReplayExpert replay({Action::Left, Action::Up});
  EXPECT_EQ(replay.request(req).action, Action::Left);
  EXPECT_EQ(replay.request(req).action, Action::Up);
  EXPECT_THROW(replay.request(req), ExpertUnavailable);
  EXPECT_EQ(replay.used(), 2u);
}
