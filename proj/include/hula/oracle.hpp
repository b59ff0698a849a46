#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hula/env.hpp"
#include "hula/expert.hpp"
#include "hula/value_table.hpp"

namespace hula {

/// Reachable free cells of a map with a dense index.
class StateSpace {
 public:
  explicit StateSpace(const GridMap& map);

  int size() const { return static_cast<int>(cells_.size()); }
  Coord cell(int i) const { return cells_[i]; }
  const std::vector<Coord>& cells() const { return cells_; }
  /// -1 for cells outside the space.
  int index(Coord c) const { return index_(c.y, c.x); }
  int width() const { return static_cast<int>(index_.cols()); }
  int height() const { return static_cast<int>(index_.rows()); }

 private:
  std::vector<Coord> cells_;
  Eigen::ArrayXXi index_;
};

/// One possible result of a (state, action) pair.
struct Branch {
  int next = -1;  // state index; -1 when the move ends the episode
  double prob = 0.0;
  double reward = 0.0;
};

/// Exact slippery transition kernel over a StateSpace.
class TransitionKernel {
 public:
  TransitionKernel(const GridMap& map, const StateSpace& states, const EnvParams& params);
  const std::vector<Branch>& branches(int s, int a) const { return table_[s * kNumMoves + a]; }

 private:
  std::vector<std::vector<Branch>> table_;
};

/// Deterministic policy over observation keys.
class Policy {
 public:
  using Lookup = std::function<std::optional<Action>(ObsKey)>;

  Policy(ObsMode mode, Lookup lookup, std::string id)
      : mode_(mode), lookup_(std::move(lookup)), id_(std::move(id)) {}

  static Policy greedy(const QTable& q, ObsMode mode, std::string id = "greedy");
  static Policy from_actions(std::unordered_map<ObsKey, Action> actions, ObsMode mode,
                             std::string id = "tabular");
  static Policy expert(const ExpertPolicy& expert, std::string id = "expert");

  ObsMode mode() const { return mode_; }
  const std::string& id() const { return id_; }
  std::optional<Action> operator()(ObsKey key) const { return lookup_(key); }
  /// Throws CoverageError when the policy has no action for the cell's observation.
  Action at(const GridMap& map, Coord c) const;

 private:
  ObsMode mode_;
  Lookup lookup_;
  std::string id_;
};

struct PolicyEvaluation {
  StateSpace states;
  Eigen::MatrixXd q;  // (state, action): expected discounted return
  Eigen::MatrixXd m;  // (state, action): expected squared discounted return
  /// (state, action): return variance from the law of total variance, so a
  /// deterministic kernel gives exactly 0 instead of the rounding left by M - Q^2.
  Eigen::MatrixXd var;
  std::vector<Action> policy_action;
  bool finite_horizon = false;

  /// Return variance at the policy's own action.
  Eigen::VectorXd variance() const;
};

/// Fixed point of the exact expectations of the Q and second-moment recursions
/// under `policy`. Uses finite-horizon backward induction over max_steps when
/// max_steps < 10/(1-gamma), otherwise iterates to a max change below 1e-10.
PolicyEvaluation exact_policy_eval(const GridMap& map, const EnvParams& params, const Policy& policy);

enum class Provenance { ExactDp, MonteCarlo, Learned };
std::string_view provenance_name(Provenance p);

/// Per-state variance over the reachable free cells of a map.
struct VarianceMap {
  Eigen::ArrayXXd values;                                  // (height, width)
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> domain;  // (height, width)
  Eigen::ArrayXXd stderr_values;  // Monte-Carlo only: standard error of each value
  std::string policy_id;
  Provenance provenance = Provenance::Learned;
  int rollouts = 0;  // K for Monte-Carlo maps

  int width() const { return static_cast<int>(values.cols()); }
  int height() const { return static_cast<int>(values.rows()); }
  bool in_domain(Coord c) const { return domain(c.y, c.x); }
  double at(Coord c) const { return values(c.y, c.x); }
  int domain_size() const { return static_cast<int>(domain.count()); }
  std::vector<Coord> cells() const;  // row-major
};

VarianceMap exact_variance_map(const GridMap& map, const PolicyEvaluation& eval, std::string policy_id);

/// Variance of the learned tables at each state's greedy action. Aliased
/// states share one value.
VarianceMap learned_variance_map(const GridMap& map, const QTable& q, const QTable& m, ObsMode mode);

/// Unbiased sample variance of discounted returns from K rollouts per state
/// under the fixed policy, without an expert.
VarianceMap mc_variance(const GridMap& map, const EnvParams& params, const Policy& policy, int rollouts,
                        std::uint64_t seed);

/// Row-major cells of the N largest values (ties go to the earlier cell).
std::vector<Coord> top_n(const VarianceMap& map, int n);

/// |topN(estimated) & topN(truth)| / N.
double topn_accuracy(const VarianceMap& estimated, const VarianceMap& truth, int n);

}  // namespace hula
