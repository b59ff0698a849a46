#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "hula/env.hpp"
#include "hula/errors.hpp"

namespace hula {

/// Optimal slip-free policy over full states. Uncovered cells hold action -1
/// and value NaN.
struct ExpertPolicy {
  Eigen::Array<std::int8_t, Eigen::Dynamic, Eigen::Dynamic> action_of;  // (height, width)
  Eigen::ArrayXXd values;                                              // (height, width)

  bool covers(Coord c) const {
    return c.x >= 0 && c.y >= 0 && c.y < action_of.rows() && c.x < action_of.cols() &&
           action_of(c.y, c.x) >= 0;
  }
  double value(Coord c) const { return values(c.y, c.x); }
};

/// Value iteration on the deterministic-motion MDP (expert moves never slip),
/// run to a max value change below 1e-9; greedy extraction breaks ties by
/// action ordinal. Throws PlanningError when no goal is reachable from the
/// start without crossing a trap.
ExpertPolicy plan_optimal(const GridMap& map, const EnvParams& params);

/// Throws CoverageError for cells the policy does not cover (walls, goals,
/// traps, unreachable cells).
Action expert_action(const ExpertPolicy& policy, Coord state);

struct ExpertRequest {
  std::string episode_id;
  Coord state;
  Observation observation;
  double variance = 0.0;
  int step_index = 0;
};

struct ExpertReply {
  Action action = Action::Up;
};

/// Source of expert actions at deployment. Implementations may throw
/// ExpertUnavailable, which pauses (not aborts) the episode.
class Expert {
 public:
  virtual ~Expert() = default;
  virtual ExpertReply request(const ExpertRequest& req) = 0;
};

class ScriptedExpert final : public Expert {
 public:
  explicit ScriptedExpert(ExpertPolicy policy) : policy_(std::move(policy)) {}
  ExpertReply request(const ExpertRequest& req) override {
    return {expert_action(policy_, req.state)};
  }
  const ExpertPolicy& policy() const { return policy_; }

 private:
  ExpertPolicy policy_;
};

/// Answers requests from a fixed action list, in order; throws
/// ExpertUnavailable once the list is used up.
class ReplayExpert final : public Expert {
 public:
  explicit ReplayExpert(std::vector<Action> actions) : actions_(std::move(actions)) {}
  ExpertReply request(const ExpertRequest&) override {
    if (next_ >= actions_.size()) throw ExpertUnavailable("replay expert has no actions left");
    return {actions_[next_++]};
  }
  std::size_t used() const { return next_; }

 private:
  std::vector<Action> actions_;
  std::size_t next_ = 0;
};

}  // namespace hula
