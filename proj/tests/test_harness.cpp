#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hula/errors.hpp"
#include "hula/harness.hpp"
#include "support.hpp"

using namespace hula;
using hula::test::shared;
using hula::test::shipped;

namespace {

std::vector<SweepPoint> ramp(int n) {
  std::vector<SweepPoint> out;
  for (int i = 1; i <= n; ++i) out.push_back({double(i), double(i), double(i), double(i), 10});
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(RollingMean, Examples) {
  const auto r = rolling_mean(ramp(5), 4);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_DOUBLE_EQ(r[0].mean_return, 2.5);
  EXPECT_DOUBLE_EQ(r[1].mean_return, 3.5);
  EXPECT_DOUBLE_EQ(r[1].mean_expert_calls, 3.5);
  EXPECT_EQ(r[0].episodes, 40);

  const auto same = rolling_mean(ramp(3), 1);
  ASSERT_EQ(same.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(same[i].mean_return, i + 1.0);
  EXPECT_TRUE(rolling_mean(ramp(3), 4).empty());
  EXPECT_THROW(rolling_mean(ramp(3), 0), ValidationError);
}

TEST(Summarize, MeanAndStandardError) {
  std::vector<EpisodeTrace> traces(4);
  const double returns[] = {1.0, 2.0, 3.0, 6.0};
  for (int i = 0; i < 4; ++i) {
    traces[i].total_return = returns[i];
    traces[i].expert_calls = i;
  }
  const SweepPoint p = summarize(0.5, traces);
  EXPECT_DOUBLE_EQ(p.mean_return, 3.0);
  EXPECT_DOUBLE_EQ(p.mean_expert_calls, 1.5);
  EXPECT_NEAR(p.return_stderr, std::sqrt(14.0 / 3.0) / 2.0, 1e-15);
  EXPECT_THROW(summarize(0.0, {}), ValidationError);
}

TEST(Grids, Shapes) {
  const auto g = default_eps_grid(10.0, 5);
  ASSERT_EQ(g.size(), 5u);
  EXPECT_DOUBLE_EQ(g.front(), 1e-3);
  EXPECT_DOUBLE_EQ(g.back(), 10.0);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_NEAR(g[i] / g[i - 1], 10.0, 1e-9);
  const auto c = default_penalty_grid();
  EXPECT_EQ(c.front(), 0.0);
  for (double x : c) EXPECT_LE(x, 0.0);
}

TEST(Curve, RoundTripBitExact) {
  std::vector<SweepPoint> pts = {{0.1 + 0.2, 1.0 / 3.0, -2.5e-7, 1e300, 1000}, {4.0, 0.0, 7.0, 0.0, 1}};
  const Metadata meta = {{"map", "trap_world"}, {"seed", "7"}};
  std::stringstream buf;
  write_curve(buf, pts, meta);
  const auto [back, meta2] = read_curve(buf);
  EXPECT_EQ(meta2, meta);
  ASSERT_EQ(back.size(), pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_EQ(back[i].param_value, pts[i].param_value);
    EXPECT_EQ(back[i].mean_expert_calls, pts[i].mean_expert_calls);
    EXPECT_EQ(back[i].mean_return, pts[i].mean_return);
    EXPECT_EQ(back[i].return_stderr, pts[i].return_stderr);
    EXPECT_EQ(back[i].episodes, pts[i].episodes);
  }
}

TEST(Curve, EmptyCurveIsHeaderOnly) {
  std::stringstream buf;
  write_curve(buf, {}, {{"map", "x"}});
  const std::string text = buf.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  const auto [back, meta] = read_curve(buf);
  EXPECT_TRUE(back.empty());
  std::stringstream junk("param,calls\n");
  EXPECT_THROW(read_curve(junk), ParseError);
}

TEST(VarianceMapFile, RoundTripBitExact) {
  const GridMap m = shipped("trap_world");
  const EnvParams p;
  const Policy pi = Policy::expert(plan_optimal(m, p));
  for (bool mc : {false, true}) {
    const VarianceMap vm = mc ? mc_variance(m, p, pi, 30, 2)
                              : exact_variance_map(m, exact_policy_eval(m, p, pi), pi.id());
    std::stringstream buf;
    write_variance_map(buf, vm, {{"map", m.name()}});
    const auto [back, meta] = read_variance_map(buf);
    EXPECT_EQ(metadata_value(meta, "map"), "trap_world");
    EXPECT_EQ(back.provenance, vm.provenance);
    EXPECT_EQ(back.policy_id, vm.policy_id);
    EXPECT_TRUE((back.domain == vm.domain).all());
    for (Coord c : vm.cells()) {
      EXPECT_EQ(back.at(c), vm.at(c));
      if (mc) EXPECT_EQ(back.stderr_values(c.y, c.x), vm.stderr_values(c.y, c.x));
    }
  }
}

TEST(Trace, RoundTripBitExact) {
  const auto map = shared(shipped("trap_world"));
  QTable q, m;
  ScriptedExpert expert(plan_optimal(*map, EnvParams{}));
  const EpisodeTrace t = run_episode(map, EnvParams{}, q, m, ObsMode::Patch, 0.0, 12, expert, "ep-3");
  std::stringstream buf;
  write_trace(buf, t, {{"map", "trap_world"}});
  const EpisodeTrace back = read_trace(buf);
  EXPECT_EQ(back.episode_id, "ep-3");
  EXPECT_EQ(back.total_return, t.total_return);
  EXPECT_EQ(back.expert_calls, t.expert_calls);
  EXPECT_EQ(back.outcome, t.outcome);
  ASSERT_EQ(back.steps.size(), t.steps.size());
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    EXPECT_EQ(back.steps[i].state, t.steps[i].state);
    EXPECT_EQ(back.steps[i].key, t.steps[i].key);
    EXPECT_EQ(back.steps[i].action, t.steps[i].action);
    EXPECT_EQ(back.steps[i].source, t.steps[i].source);
    EXPECT_EQ(back.steps[i].reward, t.steps[i].reward);
    EXPECT_EQ(back.steps[i].variance, t.steps[i].variance);
  }
}

TEST(Export, FilesAreByteIdenticalAcrossRuns) {
  const auto dir = std::filesystem::temp_directory_path() / "hula_harness_test";
  std::filesystem::create_directories(dir);
  const std::string a = (dir / "a.csv").string(), b = (dir / "b.csv").string();
  write_curve(a, ramp(6), {{"k", "v"}});
  write_curve(b, ramp(6), {{"k", "v"}});
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_FALSE(slurp(a).empty());
  std::filesystem::remove_all(dir);
  EXPECT_THROW(read_curve((dir / "missing.csv").string()), IoError);
}

TEST(SweepThreshold, ExtremesOfTheGrid) {
  const GridMap m = shipped("trap_world");
  const EnvParams p;
  TrainConfig cfg;
  cfg.max_episodes = 1500;
  const TrainResult t = train(m, p, cfg, ObsMode::Full);
  const ExpertPolicy expert = plan_optimal(m, p);
  const double top = max_table_variance(t.q, t.m);
  ASSERT_GT(top, 0.0);
  const auto pts = sweep_threshold(t.q, t.m, m, p, ObsMode::Full, expert, {0.0, top * 1.01}, 50, 4);
  ASSERT_EQ(pts.size(), 2u);
  // Ordered by calls: the never-firing threshold first.
  EXPECT_EQ(pts[0].param_value, top * 1.01);
  EXPECT_EQ(pts[0].mean_expert_calls, 0.0);
  // At zero the expert drives every step of a slip-free optimal path.
  int path = 0;
  for (Coord c = m.start(); m.at(c) != CellKind::Goal; ++path) c = move_target(m, c, expert_action(expert, c));
  EXPECT_EQ(pts[1].mean_expert_calls, path);
  EXPECT_EQ(pts[1].return_stderr, 0.0);
  EXPECT_THROW(sweep_threshold(t.q, t.m, m, p, ObsMode::Full, expert, {}, 5, 4), ValidationError);
}

TEST(SweepPenalty, ExtremesAndTrainingCalls) {
  const GridMap m = shipped("trap_world");
  const EnvParams p;
  PenaltyConfig pcfg;
  pcfg.train.max_episodes = 2000;
  pcfg.train.alpha_mode = AlphaMode::VisitDecay;
  pcfg.train.alpha_decay_power = 0.7;
  const ExpertPolicy expert = plan_optimal(m, p);
  const PenaltySweep s = sweep_penalty(m, p, {0.0, -1000.0}, pcfg, expert, ObsMode::Full, 50, 4);
  ASSERT_EQ(s.points.size(), 2u);
  EXPECT_EQ(s.points[0].param_value, -1000.0);
  EXPECT_EQ(s.points[0].mean_expert_calls, 0.0);
  EXPECT_GT(s.points[1].mean_expert_calls, 0.0);
  ASSERT_EQ(s.training_calls.size(), 2u);
  EXPECT_GT(s.training_calls[0], s.training_calls[1]);
  EXPECT_EQ(s.total_training_calls, s.training_calls[0] + s.training_calls[1]);
}

TEST(Config, ParsesSectionsAndComments) {
  const auto kv = parse_config("top = 1\n# comment\n[run]\nmap = trap_world\n; full-line comment\n\n[env]\npsi=0.3\n");
  EXPECT_EQ(kv.at("top"), "1");
  EXPECT_EQ(kv.at("run.map"), "trap_world");
  EXPECT_EQ(kv.at("env.psi"), "0.3");
  EXPECT_EQ(kv.size(), 3u);
  EXPECT_THROW(parse_config("[run\n"), ParseError);
  EXPECT_THROW(parse_config("[run]\njust words\n"), ParseError);
}
