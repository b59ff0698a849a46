#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hula/env.hpp"
#include "hula/value_table.hpp"

namespace hula {

struct Transition {
  ObsKey key = 0;
  int action = 0;
  double reward = 0.0;
  ObsKey next_key = 0;
  bool next_done = false;  // true terminal (goal or trap): no bootstrap
};

enum class MUpdateMode : std::uint8_t {
  Corrected,     // r^2 + 2 g r Q' + g^2 M'   (expansion of E[(r + g R')^2])
  PaperLiteral,  // r^2 + 2 g Q'   + g^2 M'   (reward factor dropped from the cross term)
};
std::string_view m_update_mode_name(MUpdateMode m);
std::optional<MUpdateMode> parse_m_update_mode(std::string_view s);

/// Q(k,a) <- (1-alpha) Q(k,a) + alpha (r + gamma max_a' Q(k',a')).
template <typename Scalar>
void q_update(ValueTable<Scalar>& q, const Transition& t, Scalar alpha, Scalar gamma) {
  Scalar target = static_cast<Scalar>(t.reward);
  if (!t.next_done) target += gamma * q.row(t.next_key).maxCoeff();
  q.apply_update(t.key, t.action, (Scalar(1) - alpha) * q(t.key, t.action) + alpha * target);
}

/// Sample target of the second-moment recursion; a' is the greedy successor
/// action of the current Q.
template <typename Scalar>
Scalar m_target(const ValueTable<Scalar>& m, const ValueTable<Scalar>& q, const Transition& t,
                Scalar gamma, MUpdateMode mode) {
  const Scalar r = static_cast<Scalar>(t.reward);
  if (t.next_done) return r * r;
  const int next_a = greedy_index(q, t.next_key);
  const Scalar q_next = q(t.next_key, next_a);
  const Scalar m_next = m(t.next_key, next_a);
  const Scalar cross = mode == MUpdateMode::Corrected ? Scalar(2) * gamma * r * q_next
                                                      : Scalar(2) * gamma * q_next;
  return r * r + cross + gamma * gamma * m_next;
}

template <typename Scalar>
void m_update(ValueTable<Scalar>& m, const ValueTable<Scalar>& q, const Transition& t, Scalar alpha,
              Scalar gamma, MUpdateMode mode) {
  const Scalar target = m_target(m, q, t, gamma, mode);
  m.apply_update(t.key, t.action, (Scalar(1) - alpha) * m(t.key, t.action) + alpha * target);
}

/// M - Q^2 clamped at zero.
template <typename Scalar>
Scalar variance(const ValueTable<Scalar>& q, const ValueTable<Scalar>& m, ObsKey key, int action) {
  const Scalar mean = q(key, action);
  return std::max(Scalar(0), m(key, action) - mean * mean);
}

template <typename Scalar>
Scalar variance(const ValueTable<Scalar>& q, const ValueTable<Scalar>& m, ObsKey key, Action action) {
  return variance(q, m, key, ordinal(action));
}

/// Variance at the action the greedy agent would take.
template <typename Scalar>
Scalar greedy_variance(const ValueTable<Scalar>& q, const ValueTable<Scalar>& m, ObsKey key) {
  return variance(q, m, key, greedy_index(q, key));
}

// ---------------------------------------------------------------- training

enum class AlphaMode : std::uint8_t { Constant, VisitDecay };
std::string_view alpha_mode_name(AlphaMode m);
std::optional<AlphaMode> parse_alpha_mode(std::string_view s);

struct TrainConfig {
  AlphaMode alpha_mode = AlphaMode::Constant;
  double alpha = 0.1;
  /// Visit-decay schedule alpha = (1 + visits)^-power; power 1 is the harmonic 1/(1 + visits).
  double alpha_decay_power = 1.0;
  double explore_eps_start = 1.0;
  double explore_eps_end = 0.05;
  double explore_fraction = 0.5;
  int episodes_per_iter = 10;
  int max_episodes = 20000;
  int convergence_window = 200;
  double convergence_tol = 0.01;
  MUpdateMode m_update_mode = MUpdateMode::Corrected;
  std::uint64_t seed = 1;

  void validate() const;
  /// Exploration rate after `episode` completed episodes: linear anneal over
  /// explore_fraction of the budget, then held at explore_eps_end.
  double epsilon_at(int episode) const;
  /// Learning rate for an update of a pair already updated `visits` times.
  double alpha_for(std::uint64_t visits) const {
    if (alpha_mode == AlphaMode::Constant) return alpha;
    const double n = 1.0 + static_cast<double>(visits);
    return alpha_decay_power == 1.0 ? 1.0 / n : std::pow(n, -alpha_decay_power);
  }
  std::string canonical() const;
};

struct TrainingLog {
  std::vector<double> episode_returns;  // discounted
  std::vector<double> epsilons;
  std::vector<Outcome> outcomes;
  std::uint64_t steps = 0;
  std::uint64_t expert_calls = 0;  // stays 0: training never consults an expert
  std::uint64_t training_expert_calls = 0;  // penalty baseline only
  bool converged = false;
  int episodes() const { return static_cast<int>(episode_returns.size()); }
};

/// Stops once the rolling mean return moves by less than the tolerance at
/// three consecutive checks. Checks start when exploration reaches its floor.
class ConvergenceMonitor {
 public:
  explicit ConvergenceMonitor(const TrainConfig& cfg) : cfg_(cfg) {}
  bool check(const std::vector<double>& returns, int episodes_done);

 private:
  const TrainConfig& cfg_;
  bool has_previous_ = false;
  double previous_ = 0.0;
  int stable_checks_ = 0;
};

struct TrainResult {
  QTable q;
  QTable m;
  TrainingLog log;
};

/// Expert-free training: collect episodes_per_iter episodes with
/// epsilon-greedy exploration of the current Q, then apply q_update followed
/// by m_update to every transition in collection order.
TrainResult train(const GridMap& map, const EnvParams& params, const TrainConfig& cfg, ObsMode mode);

/// Greedy rollout without an expert (the autonomous agent).
struct GreedyEpisode {
  std::vector<Coord> states;
  std::vector<Action> actions;
  std::vector<double> rewards;
  double total_return = 0.0;
  Outcome outcome = Outcome::Running;
};
GreedyEpisode run_greedy_episode(std::shared_ptr<const GridMap> map, const EnvParams& params,
                                 const QTable& q, ObsMode mode, std::uint64_t seed);

// ---------------------------------------------------------------- table files

struct TableFile {
  std::string map_name;
  ObsMode obs_mode = ObsMode::Full;
  MUpdateMode m_update_mode = MUpdateMode::Corrected;
  EnvParams params;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  QTable q;
  QTable m;
};

/// Structured-text table format (version 1):
///
///   # hula-table v1
///   map: <name>
///   observation: full|patch
///   m_update: corrected|paper_literal
///   gamma / psi / step_penalty / trap_reward / goal_reward / max_steps / slip
///   config_hash: <16 hex digits>
///   seed: <integer>
///   actions: <n>
///   rows: <count>
///   obs_key action q m visits
///   <one line per (key, action), keys ascending>
///
/// Reals use the shortest round-trip decimal form, so load(save(t)) == t bit for bit.
void save_tables(std::ostream& out, const TableFile& t);
TableFile load_tables(std::istream& in);
void save_tables(const std::string& path, const TableFile& t);
TableFile load_tables(const std::string& path);

std::uint64_t config_hash(const EnvParams& params, const TrainConfig& cfg, std::string_view map_name,
                          ObsMode mode);

}  // namespace hula
