#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "hula/errors.hpp"
#include "support.hpp"

using namespace hula;
using hula::test::shared;
using hula::test::shipped;

TEST(ParseMap, MinimalCorridor) {
  GridMap m = parse_map("S.G");
  EXPECT_EQ(m.width(), 3);
  EXPECT_EQ(m.height(), 1);
  EXPECT_EQ(m.start(), (Coord{0, 0}));
  EXPECT_EQ(m.at({2, 0}), CellKind::Goal);
  EXPECT_EQ(m.at({0, 0}), CellKind::Free);
  EXPECT_EQ(m.name(), "unnamed");
}

TEST(ParseMap, NameHeaderAndLegend) {
  GridMap m = parse_map("name: tiny\n#T#\n.SG\n");
  EXPECT_EQ(m.name(), "tiny");
  EXPECT_EQ(m.at({1, 0}), CellKind::Trap);
  EXPECT_EQ(m.at({0, 0}), CellKind::Wall);
  EXPECT_EQ(m.start(), (Coord{1, 1}));
  EXPECT_EQ(m.rows(), (std::vector<std::string>{"#T#", ".SG"}));
}

TEST(ParseMap, Errors) {
  EXPECT_THROW(parse_map("S.G\n#"), ParseError);
  EXPECT_THROW(parse_map("S.."), ValidationError);
  EXPECT_THROW(parse_map("..G"), ValidationError);
  EXPECT_THROW(parse_map("S.G\nS.."), ValidationError);
  EXPECT_THROW(parse_map("S?G"), ParseError);
  EXPECT_THROW(parse_map(""), ParseError);
}

TEST(ParseMap, ShippedMapsLoad) {
  for (const char* name : {"trap_world", "shortcut_world", "po_world", "corridor"}) {
    GridMap m = shipped(name);
    EXPECT_EQ(m.name(), name);
    EXPECT_EQ(m.at(m.start()), CellKind::Free);
  }
}

TEST(EnvParams, Validation) {
  EnvParams p;
  EXPECT_NO_THROW(p.validate());
  p.psi = 1.5;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.gamma = 0.0;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.max_steps = 0;
  EXPECT_THROW(p.validate(), ValidationError);
}

TEST(EnvParams, MoveProbabilities) {
  for (SlipMode mode : {SlipMode::Inclusive, SlipMode::Exclusive}) {
    EnvParams p;
    p.slip = mode;
    double total = 0.0;
    for (Action a : kMoves) total += p.move_probability(Action::Right, a);
    EXPECT_NEAR(total, 1.0, 1e-15);
  }
  EnvParams p;
  EXPECT_DOUBLE_EQ(p.move_probability(Action::Up, Action::Up), 0.45 + 0.55 / 4);
  p.slip = SlipMode::Exclusive;
  EXPECT_DOUBLE_EQ(p.move_probability(Action::Up, Action::Up), 0.45);
}

TEST(Step, ForcedMoveAndBoundary) {
  auto map = shared(parse_map("S.G"));
  EnvParams p;
  EnvState s = reset(map, 1);
  StepResult r = step(s, Action::Right, true, p);
  EXPECT_EQ(s.pos, (Coord{1, 0}));
  EXPECT_DOUBLE_EQ(r.reward, p.step_penalty);
  EXPECT_EQ(r.status, Outcome::Running);

  EnvState t = reset(map, 1);
  r = step(t, Action::Left, true, p);
  EXPECT_EQ(t.pos, (Coord{0, 0}));
  EXPECT_DOUBLE_EQ(r.reward, p.step_penalty);
  r = step(t, Action::Up, true, p);
  EXPECT_EQ(t.pos, (Coord{0, 0}));
}

TEST(Step, WallsBlock) {
  auto map = shared(parse_map("S#G\n..."));
  EnvState s = reset(map, 1);
  step(s, Action::Right, true, EnvParams{});
  EXPECT_EQ(s.pos, (Coord{0, 0}));
}

TEST(Step, GoalAndTrapEntry) {
  EnvParams p = test::deterministic();
  auto map = shared(parse_map("TS.G"));
  EnvState s = reset_at(map, {2, 0}, 1);
  StepResult r = step(s, Action::Right, false, p);
  EXPECT_EQ(r.status, Outcome::Goal);
  EXPECT_DOUBLE_EQ(r.reward, p.step_penalty + p.goal_reward);
  EXPECT_TRUE(r.terminal());
  EXPECT_THROW(step(s, Action::Left, false, p), IllegalTransition);

  EnvState t = reset(map, 1);
  r = step(t, Action::Left, true, p);
  EXPECT_EQ(r.status, Outcome::Trap);
  EXPECT_DOUBLE_EQ(r.reward, p.step_penalty + p.trap_reward);
}

TEST(Step, StepLimitTruncates) {
  EnvParams p;
  p.max_steps = 3;
  auto map = shared(parse_map("S...G"));
  EnvState s = reset(map, 1);
  StepResult r;
  for (int i = 0; i < 3; ++i) r = step(s, Action::Left, true, p);
  EXPECT_EQ(r.status, Outcome::StepLimit);
  EXPECT_FALSE(r.terminal());
  EXPECT_TRUE(r.done());
  EXPECT_THROW(step(s, Action::Left, true, p), IllegalTransition);
}

TEST(Step, GoalOnLastAllowedStepIsGoal) {
  EnvParams p;
  p.max_steps = 2;
  auto map = shared(parse_map("S.G"));
  EnvState s = reset(map, 1);
  step(s, Action::Right, true, p);
  EXPECT_EQ(step(s, Action::Right, true, p).status, Outcome::Goal);
}

TEST(Step, ForcedMovesDrawNoRandomNumbers) {
  auto map = shared(parse_map("S...G"));
  EnvState s = reset(map, 42);
  const Rng before = s.rng;
  step(s, Action::Right, true, EnvParams{});
  EXPECT_EQ(s.rng, before);
  step(s, Action::Right, false, EnvParams{});
  EXPECT_NE(s.rng, before);
}

TEST(Step, ForcedIsDeterministic) {
  const GridMap m = shipped("trap_world");
  auto map = shared(m);
  for (Coord c : m.reachable_free_cells()) {
    for (Action a : kMoves) {
      EnvState x = reset_at(map, c, 1);
      EnvState y = reset_at(map, c, 999);
      const StepResult rx = step(x, a, true, EnvParams{});
      const StepResult ry = step(y, a, true, EnvParams{});
      EXPECT_EQ(x.pos, y.pos);
      EXPECT_EQ(rx.reward, ry.reward);
      EXPECT_EQ(rx.status, ry.status);
    }
  }
}

// The slip direction may coincide with the intended one.
TEST(Step, IntendedMoveFrequency) {
  auto map = shared(parse_map(".....\n.....\n..S..\n.....\n....G"));
  for (SlipMode mode : {SlipMode::Inclusive, SlipMode::Exclusive}) {
    EnvParams p;
    p.slip = mode;
    const double expect = p.move_probability(Action::Right, Action::Right);
    const int n = 100000;
    int hits = 0;
    EnvState s = reset(map, 7);
    for (int i = 0; i < n; ++i) {
      s.pos = {2, 2};
      s.steps_taken = 0;
      step(s, Action::Right, false, p);
      hits += s.pos == Coord{3, 2};
    }
    const double se = std::sqrt(expect * (1 - expect) / n);
    EXPECT_NEAR(static_cast<double>(hits) / n, expect, 3 * se);
  }
}

TEST(Step, RewardBoundAndTermination) {
  EnvParams p;
  const double bound = p.step_penalty + std::max({p.goal_reward, p.trap_reward, 0.0});
  for (const char* name : {"trap_world", "shortcut_world", "po_world"}) {
    auto map = shared(shipped(name));
    Rng pick(3);
    for (int ep = 0; ep < 50; ++ep) {
      EnvState s = reset(map, derive_seed(11, ep));
      int n = 0;
      while (s.running()) {
        const StepResult r = step(s, action_from_ordinal(uniform_int(pick, kNumMoves)), false, p);
        EXPECT_LE(r.reward, bound);
        EXPECT_NE(map->at(s.pos), CellKind::Wall);
        ++n;
      }
      EXPECT_LE(n, p.max_steps);
    }
  }
}

TEST(Observe, FullState) {
  GridMap m = parse_map("....\n....\n....\n..S.\nG...");
  const Observation o = observe(m, {2, 3}, ObsMode::Full);
  ASSERT_TRUE(std::holds_alternative<FullStateObs>(o));
  EXPECT_EQ(std::get<FullStateObs>(o).pos, (Coord{2, 3}));
}

TEST(Observe, CornerPatchMarksOffMapCells) {
  GridMap m = parse_map("S..\n.#.\n..G");
  const auto patch = std::get<PatchObs>(observe(m, {0, 0}, ObsMode::Patch));
  for (int dy = -2; dy <= 2; ++dy) {
    for (int dx = -2; dx <= 2; ++dx) {
      const bool off = dx < 0 || dy < 0;
      EXPECT_EQ(patch.at(dx, dy) == PatchCell::OutOfBounds, off) << dx << "," << dy;
    }
  }
  EXPECT_EQ(patch.at(0, 0), PatchCell::Free);
  EXPECT_EQ(patch.at(1, 1), PatchCell::Wall);
  EXPECT_EQ(patch.at(2, 2), PatchCell::Goal);
}

TEST(Observe, AliasedCorridorCellsShareObservation) {
  const GridMap m = shipped("po_world");
  // The two side corridors are translated copies of each other.
  const Observation upper = observe(m, {4, 3}, ObsMode::Patch);
  const Observation lower = observe(m, {4, 9}, ObsMode::Patch);
  EXPECT_EQ(upper, lower);
  EXPECT_EQ(obs_key(upper), obs_key(lower));
  EXPECT_NE(key_at(m, {4, 3}, ObsMode::Full), key_at(m, {4, 9}, ObsMode::Full));
}

TEST(ObsKey, FullStateInjectiveAndRoundTrip) {
  const ObsKey a = obs_key(FullStateObs{{1, 2}});
  const ObsKey b = obs_key(FullStateObs{{2, 1}});
  EXPECT_NE(a, b);
  EXPECT_EQ(a, obs_key(FullStateObs{{1, 2}}));
  EXPECT_EQ(decode_obs_key(a), Observation(FullStateObs{{1, 2}}));
}

TEST(ObsKey, InjectiveOnShippedMaps) {
  for (const char* name : {"trap_world", "shortcut_world", "po_world", "corridor"}) {
    const GridMap m = shipped(name);
    for (ObsMode mode : {ObsMode::Full, ObsMode::Patch}) {
      std::map<ObsKey, Observation> seen;
      for (int i = 0; i < m.num_cells(); ++i) {
        const Coord c = m.coord(i);
        if (m.at(c) == CellKind::Wall) continue;
        const Observation o = observe(m, c, mode);
        const ObsKey k = obs_key(o);
        EXPECT_EQ(decode_obs_key(k), o);
        auto [it, inserted] = seen.emplace(k, o);
        if (!inserted) EXPECT_EQ(it->second, o) << name;
      }
    }
  }
}

TEST(ObsKey, FullAndPatchKeysNeverCollide) {
  const GridMap m = shipped("trap_world");
  std::set<ObsKey> full, patch;
  for (Coord c : m.reachable_free_cells()) {
    full.insert(key_at(m, c, ObsMode::Full));
    patch.insert(key_at(m, c, ObsMode::Patch));
  }
  for (ObsKey k : full) EXPECT_EQ(patch.count(k), 0u);
}

TEST(GridMap, ReachableCellsRowMajor) {
  GridMap m = parse_map("S.#.\n..#G\n####");
  const auto cells = m.reachable_free_cells();
  EXPECT_EQ(cells, (std::vector<Coord>{{0, 0}, {1, 0}, {0, 1}, {1, 1}}));
}
