#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hula/env.hpp"
#include "hula/expert.hpp"
#include "hula/learner.hpp"

namespace hula {

enum class ActionSource : std::uint8_t { Agent, Expert };
std::string_view source_name(ActionSource s);

struct TraceStep {
  Coord state;
  ObsKey key = 0;
  Action action = Action::Up;
  ActionSource source = ActionSource::Agent;
  double reward = 0.0;
  double variance = 0.0;  // estimate that drove the decision (0 for the penalty agent)
};

struct EpisodeTrace {
  std::string episode_id;
  std::vector<TraceStep> steps;
  double total_return = 0.0;  // discounted
  std::uint64_t expert_calls = 0;
  Outcome outcome = Outcome::Running;

  /// Call count matches the expert-sourced steps and the return matches the
  /// rewards (recomputed in the same summation order).
  bool self_consistent(double gamma) const;
};

inline constexpr double kNeverCall = std::numeric_limits<double>::infinity();

struct DeployConfig {
  double epsilon_threshold = kNeverCall;
  int episodes = 1000;
  std::uint64_t seed = 1;
};

/// Threshold rule without consulting the expert: source is Expert when the
/// variance at the greedy action reaches eps.
struct Decision {
  Action action = Action::Up;  // greedy action; replaced by the expert's when source == Expert
  ActionSource source = ActionSource::Agent;
  double variance = 0.0;
};
Decision hula_decide(const QTable& q, const QTable& m, ObsKey key, double eps);

std::pair<Action, ActionSource> hula_act(const QTable& q, const QTable& m, ObsKey key, Coord state,
                                         double eps, Expert& expert);

/// Steps one HULA deployment episode. Pauses in AwaitingExpert whenever the
/// threshold fires; the expert's action is then applied slip-free through
/// submit_expert. Drives both offline runs and service sessions, so both
/// produce the same trace for the same seed and expert answers.
class EpisodeRunner {
 public:
  enum class Status { Running, AwaitingExpert, Finished };

  EpisodeRunner(std::shared_ptr<const GridMap> map, EnvParams params, const QTable& q, const QTable& m,
                ObsMode mode, double eps, std::uint64_t seed, std::string episode_id = "0");

  Status status() const { return status_; }
  const EnvState& env() const { return env_; }
  const EpisodeTrace& trace() const { return trace_; }
  const std::optional<ExpertRequest>& pending() const { return pending_; }
  double epsilon() const { return eps_; }

  /// One decision. Agent moves are applied immediately; an expert call only
  /// records the pending request. Throws Conflict unless Running.
  Status advance();
  /// Applies the answer to the pending request. Throws Conflict unless AwaitingExpert.
  Status submit_expert(Action action);
  /// Runs to the end, asking `expert` at each call. An ExpertUnavailable from
  /// the expert propagates and leaves the runner paused (resumable).
  Status run(Expert& expert);

 private:
  void apply(Action action, ActionSource source, double variance);

  std::shared_ptr<const GridMap> map_;
  EnvParams params_;
  const QTable& q_;
  const QTable& m_;
  ObsMode mode_;
  double eps_;
  EnvState env_;
  EpisodeTrace trace_;
  double discount_ = 1.0;
  Status status_ = Status::Running;
  std::optional<ExpertRequest> pending_;
};

EpisodeTrace run_episode(std::shared_ptr<const GridMap> map, const EnvParams& params, const QTable& q,
                         const QTable& m, ObsMode mode, double eps, std::uint64_t seed, Expert& expert,
                         std::string episode_id = "0");

/// Episode i of a deployment uses seed derive_seed(cfg.seed, i), so every
/// configuration evaluated with the same cfg.seed sees the same seed set.
std::vector<EpisodeTrace> deploy(std::shared_ptr<const GridMap> map, const EnvParams& params,
                                 const QTable& q, const QTable& m, ObsMode mode, const DeployConfig& cfg,
                                 Expert& expert);

std::uint64_t episode_seed(std::uint64_t master, int episode);

// ---------------------------------------------------------------- penalty baseline

inline constexpr int kCallExpert = kNumMoves;  // ordinal 4, after every movement action
inline constexpr int kNumPenaltyActions = kNumMoves + 1;

struct PenaltyConfig {
  double call_penalty = -1.0;  // c <= 0, assessed at training time only
  TrainConfig train;
  void validate() const;
};

struct PenaltyResult {
  QTable q;  // five columns; column 4 is CallExpert
  TrainingLog log;
};

/// Q-learning over {Up, Down, Left, Right, CallExpert}. CallExpert executes the
/// expert's action slip-free and earns r + c.
PenaltyResult penalty_train(const GridMap& map, const EnvParams& params, const PenaltyConfig& cfg,
                            const ExpertPolicy& expert, ObsMode mode);

/// Greedy over five actions; CallExpert resolves to the expert's action.
std::pair<Action, ActionSource> penalty_act(const QTable& q5, ObsKey key, Coord state, Expert& expert);

EpisodeTrace run_penalty_episode(std::shared_ptr<const GridMap> map, const EnvParams& params,
                                 const QTable& q5, ObsMode mode, std::uint64_t seed, Expert& expert);

std::vector<EpisodeTrace> deploy_penalty(std::shared_ptr<const GridMap> map, const EnvParams& params,
                                         const QTable& q5, ObsMode mode, int episodes, std::uint64_t seed,
                                         Expert& expert);

}  // namespace hula
