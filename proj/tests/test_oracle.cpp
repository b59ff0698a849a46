#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "hula/errors.hpp"
#include "hula/oracle.hpp"
#include "support.hpp"

using namespace hula;
using hula::test::shipped;

namespace {

// Start surrounded by traps with the goal to its right: one move, two outcomes.
GridMap bernoulli_map() { return parse_map("#T#\nTSG\n#T#"); }

EnvParams bernoulli_params() {
  EnvParams p;
  p.psi = 0.4;
  p.step_penalty = 0.0;
  p.trap_reward = 0.0;
  p.goal_reward = 10.0;
  return p;
}

Policy always(Action a, const GridMap& m) {
  std::unordered_map<ObsKey, Action> table;
  for (Coord c : m.reachable_free_cells()) table[key_at(m, c, ObsMode::Full)] = a;
  return Policy::from_actions(std::move(table), ObsMode::Full, "always");
}

VarianceMap grid(const Eigen::ArrayXXd& values) {
  VarianceMap vm;
  vm.values = values;
  vm.domain = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(values.rows(), values.cols(), true);
  return vm;
}

double median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST(ExactEval, BernoulliClosedForm) {
  const GridMap m = bernoulli_map();
  const PolicyEvaluation ev = exact_policy_eval(m, bernoulli_params(), always(Action::Right, m));
  ASSERT_EQ(ev.states.size(), 1);
  // Goal with probability 0.4 + 0.6 / 4; any other direction is a trap.
  const double p = 0.55;
  EXPECT_NEAR(ev.q(0, ordinal(Action::Right)), 10 * p, 1e-12);
  EXPECT_NEAR(ev.m(0, ordinal(Action::Right)), 100 * p, 1e-12);
  EXPECT_NEAR(ev.variance()(0), 24.75, 1e-12);
  const VarianceMap vm = exact_variance_map(m, ev, "always");
  EXPECT_EQ(vm.domain_size(), 1);
  EXPECT_NEAR(vm.at({1, 1}), 24.75, 1e-12);
  EXPECT_EQ(vm.provenance, Provenance::ExactDp);
}

TEST(MonteCarlo, BernoulliWithinThreeStandardErrors) {
  const GridMap m = bernoulli_map();
  const VarianceMap vm = mc_variance(m, bernoulli_params(), always(Action::Right, m), 20000, 5);
  EXPECT_EQ(vm.provenance, Provenance::MonteCarlo);
  EXPECT_EQ(vm.rollouts, 20000);
  const double se = vm.stderr_values(1, 1);
  EXPECT_GT(se, 0.0);
  EXPECT_NEAR(vm.at({1, 1}), 24.75, 3 * se);
}

TEST(MonteCarlo, Reproducible) {
  const GridMap m = shipped("corridor");
  const Policy pi = always(Action::Right, m);
  const VarianceMap a = mc_variance(m, EnvParams{}, pi, 200, 11);
  const VarianceMap b = mc_variance(m, EnvParams{}, pi, 200, 11);
  EXPECT_TRUE((a.values == b.values).all());
  EXPECT_THROW(mc_variance(m, EnvParams{}, pi, 1, 11), DomainError);
}

TEST(ExactEval, NoSlipMeansExactlyZeroVariance) {
  for (const char* name : {"trap_world", "shortcut_world", "po_world"}) {
    const GridMap m = shipped(name);
    const EnvParams p = test::deterministic();
    const Policy pi = Policy::expert(plan_optimal(m, p));
    const PolicyEvaluation ev = exact_policy_eval(m, p, pi);
    EXPECT_EQ(ev.variance().maxCoeff(), 0.0) << name;
    EXPECT_EQ(ev.variance().minCoeff(), 0.0) << name;
    const VarianceMap mc = mc_variance(m, p, pi, 20, 3);
    for (Coord c : mc.cells()) EXPECT_EQ(mc.at(c), 0.0) << name;
  }
}

// Independent cross-check: the policy's state values solve two linear systems,
//   (I - g P) V = rbar   and   (I - g^2 P) W = E[r^2] + 2 g E[r V'].
TEST(ExactEval, AgreesWithDirectLinearSolve) {
  const GridMap m = shipped("trap_world");
  const EnvParams p;
  const Policy pi = Policy::expert(plan_optimal(m, p));
  const PolicyEvaluation ev = exact_policy_eval(m, p, pi);
  ASSERT_FALSE(ev.finite_horizon);
  const StateSpace& S = ev.states;
  const TransitionKernel kernel(m, S, p);
  const int n = S.size();

  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd rbar = Eigen::VectorXd::Zero(n), r2 = Eigen::VectorXd::Zero(n);
  for (int s = 0; s < n; ++s) {
    for (const Branch& b : kernel.branches(s, ordinal(ev.policy_action[s]))) {
      if (b.next >= 0) P(s, b.next) += b.prob;
      rbar(s) += b.prob * b.reward;
      r2(s) += b.prob * b.reward * b.reward;
    }
  }
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  const Eigen::VectorXd V = (I - p.gamma * P).partialPivLu().solve(rbar);
  Eigen::VectorXd cross = Eigen::VectorXd::Zero(n);
  for (int s = 0; s < n; ++s) {
    for (const Branch& b : kernel.branches(s, ordinal(ev.policy_action[s])))
      if (b.next >= 0) cross(s) += b.prob * b.reward * V(b.next);
  }
  const Eigen::VectorXd W = (I - p.gamma * p.gamma * P).partialPivLu().solve(r2 + 2 * p.gamma * cross);

  for (int s = 0; s < n; ++s) {
    const int a = ordinal(ev.policy_action[s]);
    EXPECT_NEAR(ev.q(s, a), V(s), 1e-8);
    EXPECT_NEAR(ev.m(s, a), W(s), 1e-7);
    EXPECT_NEAR(ev.var(s, a), W(s) - V(s) * V(s), 1e-6);
  }
}

TEST(ExactEval, FiniteHorizonWhenCapIsShort) {
  const GridMap m = shipped("corridor");
  EnvParams p;
  p.max_steps = 2;  // the goal is four moves away
  const PolicyEvaluation ev = exact_policy_eval(m, p, always(Action::Right, m));
  EXPECT_TRUE(ev.finite_horizon);
  const int start = ev.states.index(m.start());
  EXPECT_LT(ev.q(start, ordinal(Action::Right)), 0.0);
}

TEST(ExactEval, CoverageErrorForPartialPolicy) {
  const GridMap m = shipped("corridor");
  const Policy partial = Policy::from_actions({{key_at(m, m.start(), ObsMode::Full), Action::Right}},
                                              ObsMode::Full);
  EXPECT_THROW(exact_policy_eval(m, EnvParams{}, partial), CoverageError);
}

TEST(MonteCarlo, ErrorShrinksWithRollouts) {
  const GridMap m = shipped("trap_world");
  const EnvParams p;
  const Policy pi = Policy::expert(plan_optimal(m, p));
  const VarianceMap truth = exact_variance_map(m, exact_policy_eval(m, p, pi), pi.id());
  std::vector<double> gaps;
  for (int k : {100, 1000, 10000}) {
    const VarianceMap mc = mc_variance(m, p, pi, k, 21);
    std::vector<double> d;
    for (Coord c : truth.cells()) d.push_back(std::abs(mc.at(c) - truth.at(c)));
    gaps.push_back(median(d));
  }
  EXPECT_GT(gaps[0], gaps[1]);
  EXPECT_GT(gaps[1], gaps[2]);
}

TEST(LearnedMap, AliasedCellsShareValue) {
  const GridMap m = shipped("po_world");
  QTable q, mm;
  for (Coord c : m.reachable_free_cells()) {
    const ObsKey k = key_at(m, c, ObsMode::Patch);
    q.set(k, 0, 1.0);
    mm.set(k, 0, 1.0 + static_cast<double>(k % 7));
  }
  const VarianceMap vm = learned_variance_map(m, q, mm, ObsMode::Patch);
  EXPECT_EQ(vm.provenance, Provenance::Learned);
  EXPECT_EQ(vm.at({4, 3}), vm.at({4, 9}));
  EXPECT_FALSE(vm.in_domain({0, 0}));
}

TEST(TopN, RowMajorTieBreak) {
  Eigen::ArrayXXd v(2, 3);
  v << 1, 5, 5,
       5, 0, 2;
  const auto top = top_n(grid(v), 2);
  EXPECT_EQ(top, (std::vector<Coord>{{1, 0}, {2, 0}}));
}

TEST(TopN, AccuracyProperties) {
  Eigen::ArrayXXd a(3, 3), b(3, 3);
  a << 9, 8, 7,
       1, 2, 3,
       0, 0, 0;
  b << 0, 0, 0,
       1, 2, 3,
       9, 8, 7;
  const VarianceMap A = grid(a), B = grid(b);
  EXPECT_DOUBLE_EQ(topn_accuracy(A, A, 3), 1.0);
  EXPECT_DOUBLE_EQ(topn_accuracy(A, B, 3), 0.0);
  EXPECT_DOUBLE_EQ(topn_accuracy(A, B, 6), topn_accuracy(B, A, 6));
  // Any strictly increasing transform keeps the ranking.
  const VarianceMap C = grid(a.exp() * 3.0 + 1.0);
  for (int n = 1; n <= 9; ++n) EXPECT_DOUBLE_EQ(topn_accuracy(A, C, n), 1.0);
  EXPECT_DOUBLE_EQ(topn_accuracy(A, B, 9), 1.0);
}

TEST(TopN, DomainErrors) {
  Eigen::ArrayXXd v = Eigen::ArrayXXd::Ones(2, 2);
  VarianceMap A = grid(v);
  EXPECT_THROW(top_n(A, 5), DomainError);
  EXPECT_THROW(topn_accuracy(A, A, 0), DomainError);
  VarianceMap B = A;
  B.domain(0, 0) = false;
  EXPECT_THROW(topn_accuracy(A, B, 1), DomainError);
}
