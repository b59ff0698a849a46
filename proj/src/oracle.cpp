#include "hula/oracle.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "hula/errors.hpp"
#include "hula/learner.hpp"
#include "hula/parallel.hpp"

namespace hula {

StateSpace::StateSpace(const GridMap& map)
    : cells_(map.reachable_free_cells()), index_(Eigen::ArrayXXi::Constant(map.height(), map.width(), -1)) {
  for (int i = 0; i < size(); ++i) index_(cells_[i].y, cells_[i].x) = i;
}

TransitionKernel::TransitionKernel(const GridMap& map, const StateSpace& states, const EnvParams& params)
    : table_(static_cast<std::size_t>(states.size()) * kNumMoves) {
  for (int s = 0; s < states.size(); ++s) {
    for (Action intended : kMoves) {
      auto& out = table_[s * kNumMoves + ordinal(intended)];
      for (Action actual : kMoves) {
        const double p = params.move_probability(intended, actual);
        if (p == 0.0) continue;
        const Coord n = move_target(map, states.cell(s), actual);
        Branch b;
        b.prob = p;
        b.reward = params.step_penalty;
        switch (map.at(n)) {
          case CellKind::Goal: b.reward += params.goal_reward; break;
          case CellKind::Trap: b.reward += params.trap_reward; break;
          default: b.next = states.index(n); break;
        }
        auto same = std::find_if(out.begin(), out.end(), [&](const Branch& o) {
          return o.next == b.next && o.reward == b.reward;
        });
        if (same != out.end()) {
          same->prob += p;
        } else {
          out.push_back(b);
        }
      }
    }
  }
}

// ---------------------------------------------------------------- policies

Policy Policy::greedy(const QTable& q, ObsMode mode, std::string id) {
  // Copy: the policy must outlive the caller's table.
  return Policy(mode, [q](ObsKey k) -> std::optional<Action> { return greedy_action(q, k); },
                std::move(id));
}

Policy Policy::from_actions(std::unordered_map<ObsKey, Action> actions, ObsMode mode, std::string id) {
  return Policy(
      mode,
      [actions = std::move(actions)](ObsKey k) -> std::optional<Action> {
        auto it = actions.find(k);
        if (it == actions.end()) return std::nullopt;
        return it->second;
      },
      std::move(id));
}

Policy Policy::expert(const ExpertPolicy& expert, std::string id) {
  return Policy(
      ObsMode::Full,
      [expert](ObsKey k) -> std::optional<Action> {
        const auto obs = decode_obs_key(k);
        const auto* full = std::get_if<FullStateObs>(&obs);
        if (!full || !expert.covers(full->pos)) return std::nullopt;
        return expert_action(expert, full->pos);
      },
      std::move(id));
}

Action Policy::at(const GridMap& map, Coord c) const {
  auto a = lookup_(key_at(map, c, mode_));
  if (!a)
    throw CoverageError("policy '" + id_ + "' has no action at (" + std::to_string(c.x) + ", " +
                        std::to_string(c.y) + ")");
  return *a;
}

// ---------------------------------------------------------------- exact evaluation

Eigen::VectorXd PolicyEvaluation::variance() const {
  Eigen::VectorXd v(states.size());
  for (int s = 0; s < states.size(); ++s) {
    const int a = ordinal(policy_action[s]);
    v(s) = var(s, a);
  }
  return v;
}

namespace {

constexpr double kEvalTolerance = 1e-10;
constexpr int kMaxEvalIterations = 10'000'000;

struct Tables {
  Eigen::MatrixXd q, m, var;
  explicit Tables(int n)
      : q(Eigen::MatrixXd::Zero(n, kNumMoves)),
        m(Eigen::MatrixXd::Zero(n, kNumMoves)),
        var(Eigen::MatrixXd::Zero(n, kNumMoves)) {}
  void swap(Tables& o) {
    q.swap(o.q);
    m.swap(o.m);
    var.swap(o.var);
  }
  double distance(const Tables& o) const {
    return std::max({(q - o.q).cwiseAbs().maxCoeff(), (m - o.m).cwiseAbs().maxCoeff(),
                     (var - o.var).cwiseAbs().maxCoeff()});
  }
};

// One Jacobi backup of all three recursions; no bootstrap on the last step of
// a finite horizon.
void backup(const TransitionKernel& kernel, const std::vector<int>& pi, double gamma, bool bootstrap,
            const Tables& in, Tables& out) {
  const auto n = static_cast<int>(pi.size());
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < kNumMoves; ++a) {
      const auto& branches = kernel.branches(s, a);
      double qs = 0.0;
      double ms = 0.0;
      double inner = 0.0;
      for (const Branch& b : branches) {
        double q_next = 0.0;
        double m_next = 0.0;
        if (bootstrap && b.next >= 0) {
          q_next = in.q(b.next, pi[b.next]);
          m_next = in.m(b.next, pi[b.next]);
          inner += b.prob * in.var(b.next, pi[b.next]);
        }
        qs += b.prob * (b.reward + gamma * q_next);
        ms += b.prob * (b.reward * b.reward + 2.0 * gamma * b.reward * q_next + gamma * gamma * m_next);
      }
      double spread = 0.0;
      for (const Branch& b : branches) {
        const double q_next = bootstrap && b.next >= 0 ? in.q(b.next, pi[b.next]) : 0.0;
        const double d = b.reward + gamma * q_next - qs;
        spread += b.prob * d * d;
      }
      out.q(s, a) = qs;
      out.m(s, a) = ms;
      out.var(s, a) = spread + gamma * gamma * inner;
    }
  }
}

}  // namespace

PolicyEvaluation exact_policy_eval(const GridMap& map, const EnvParams& params, const Policy& policy) {
  params.validate();
  PolicyEvaluation ev{StateSpace(map), {}, {}, {}, {}, false};
  const StateSpace& states = ev.states;
  const int n = states.size();
  ev.policy_action.reserve(n);
  std::vector<int> pi(n);
  for (int s = 0; s < n; ++s) {
    ev.policy_action.push_back(policy.at(map, states.cell(s)));
    pi[s] = ordinal(ev.policy_action.back());
  }

  const TransitionKernel kernel(map, states, params);
  Tables cur(n);
  Tables next(n);

  const bool finite = params.gamma >= 1.0 || params.max_steps < 10.0 / (1.0 - params.gamma);
  ev.finite_horizon = finite;
  if (finite) {
    // cur holds the h-step-to-go values; h = 1 has no bootstrap.
    for (int h = 1; h <= params.max_steps; ++h) {
      backup(kernel, pi, params.gamma, h > 1, cur, next);
      cur.swap(next);
    }
  } else {
    for (int it = 0;; ++it) {
      backup(kernel, pi, params.gamma, true, cur, next);
      const double delta = next.distance(cur);
      cur.swap(next);
      if (delta < kEvalTolerance) break;
      if (it + 1 == kMaxEvalIterations) throw DomainError("policy evaluation did not converge");
    }
  }
  ev.q = std::move(cur.q);
  ev.m = std::move(cur.m);
  ev.var = std::move(cur.var);
  return ev;
}

// ---------------------------------------------------------------- variance maps

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::ExactDp: return "exact_dp";
    case Provenance::MonteCarlo: return "monte_carlo";
    case Provenance::Learned: return "learned";
  }
  return "?";
}

std::vector<Coord> VarianceMap::cells() const {
  std::vector<Coord> out;
  for (int y = 0; y < height(); ++y) {
    for (int x = 0; x < width(); ++x) {
      if (domain(y, x)) out.push_back({x, y});
    }
  }
  return out;
}

namespace {

VarianceMap empty_map(const GridMap& map, const StateSpace& states) {
  VarianceMap vm;
  vm.values = Eigen::ArrayXXd::Zero(map.height(), map.width());
  vm.stderr_values = Eigen::ArrayXXd::Zero(map.height(), map.width());
  vm.domain.setConstant(map.height(), map.width(), false);
  for (Coord c : states.cells()) vm.domain(c.y, c.x) = true;
  return vm;
}

}  // namespace

VarianceMap exact_variance_map(const GridMap& map, const PolicyEvaluation& eval, std::string policy_id) {
  VarianceMap vm = empty_map(map, eval.states);
  const Eigen::VectorXd v = eval.variance();
  for (int s = 0; s < eval.states.size(); ++s) {
    const Coord c = eval.states.cell(s);
    vm.values(c.y, c.x) = v(s);
  }
  vm.policy_id = std::move(policy_id);
  vm.provenance = Provenance::ExactDp;
  return vm;
}

VarianceMap learned_variance_map(const GridMap& map, const QTable& q, const QTable& m, ObsMode mode) {
  const StateSpace states(map);
  VarianceMap vm = empty_map(map, states);
  for (Coord c : states.cells()) vm.values(c.y, c.x) = greedy_variance(q, m, key_at(map, c, mode));
  vm.policy_id = "greedy";
  vm.provenance = Provenance::Learned;
  return vm;
}

VarianceMap mc_variance(const GridMap& map, const EnvParams& params, const Policy& policy, int rollouts,
                        std::uint64_t seed) {
  if (rollouts < 2) throw DomainError("mc_variance needs at least 2 rollouts per state");
  params.validate();
  const StateSpace states(map);
  VarianceMap vm = empty_map(map, states);
  vm.policy_id = policy.id();
  vm.provenance = Provenance::MonteCarlo;
  vm.rollouts = rollouts;

  auto world = std::make_shared<const GridMap>(map);
  // Each state writes only its own cell.
  parallel_for(states.size(), [&](int s) {
    const Coord start = states.cell(s);
    std::vector<double> returns(static_cast<std::size_t>(rollouts));
    for (int k = 0; k < rollouts; ++k) {
      EnvState env = reset_at(world, start, derive_seed(seed, static_cast<std::uint64_t>(s),
                                                        static_cast<std::uint64_t>(k)));
      double ret = 0.0;
      double discount = 1.0;
      while (env.running()) {
        const StepResult r = step(env, policy.at(map, env.pos), false, params);
        ret += discount * r.reward;
        discount *= params.gamma;
      }
      returns[k] = ret;
    }
    // Welford: identical returns leave m2 at exactly zero.
    double mean = 0.0;
    double m2 = 0.0;
    for (int k = 0; k < rollouts; ++k) {
      const double d = returns[k] - mean;
      mean += d / (k + 1);
      m2 += d * (returns[k] - mean);
    }
    const double n = rollouts;
    double m4 = 0.0;
    for (double r : returns) {
      const double d2 = (r - mean) * (r - mean);
      m4 += d2 * d2;
    }
    const double sample_var = m2 / (n - 1.0);
    m2 /= n;
    m4 /= n;
    // Large-sample variance of the sample variance: (mu4 - (n-3)/(n-1) sigma^4) / n.
    const double var_of_var = std::max(0.0, (m4 - (n - 3.0) / (n - 1.0) * m2 * m2) / n);
    vm.values(start.y, start.x) = sample_var;
    vm.stderr_values(start.y, start.x) = std::sqrt(var_of_var);
  });
  return vm;
}

std::vector<Coord> top_n(const VarianceMap& map, int n) {
  std::vector<Coord> cells = map.cells();
  if (n < 0 || n > static_cast<int>(cells.size()))
    throw DomainError("N = " + std::to_string(n) + " exceeds the variance-map domain size " +
                      std::to_string(cells.size()));
  // cells() is row-major, so a stable sort on value alone gives row-major tie-breaking.
  std::stable_sort(cells.begin(), cells.end(), [&](Coord a, Coord b) { return map.at(a) > map.at(b); });
  cells.resize(static_cast<std::size_t>(n));
  return cells;
}

double topn_accuracy(const VarianceMap& estimated, const VarianceMap& truth, int n) {
  if (estimated.width() != truth.width() || estimated.height() != truth.height() ||
      (estimated.domain != truth.domain).any())
    throw DomainError("variance maps do not share a domain");
  if (n <= 0) throw DomainError("N must be positive");
  auto a = top_n(estimated, n);
  auto b = top_n(truth, n);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<Coord> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  return static_cast<double>(common.size()) / n;
}

}  // namespace hula
