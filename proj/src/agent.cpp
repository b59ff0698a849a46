#include "hula/agent.hpp"

#include <cmath>

#include "hula/errors.hpp"

namespace hula {

std::string_view source_name(ActionSource s) { return s == ActionSource::Agent ? "agent" : "expert"; }

bool EpisodeTrace::self_consistent(double gamma) const {
  std::uint64_t calls = 0;
  double ret = 0.0;
  double discount = 1.0;
  for (const TraceStep& s : steps) {
    if (s.source == ActionSource::Expert) ++calls;
    ret += discount * s.reward;
    discount *= gamma;
  }
  return calls == expert_calls && ret == total_return;
}

Decision hula_decide(const QTable& q, const QTable& m, ObsKey key, double eps) {
  const int a = greedy_index(q, key);
  Decision d;
  d.action = action_from_ordinal(a);
  d.variance = variance(q, m, key, a);
  d.source = d.variance >= eps ? ActionSource::Expert : ActionSource::Agent;
  return d;
}

std::pair<Action, ActionSource> hula_act(const QTable& q, const QTable& m, ObsKey key, Coord state,
                                         double eps, Expert& expert) {
  const Decision d = hula_decide(q, m, key, eps);
  if (d.source == ActionSource::Agent) return {d.action, ActionSource::Agent};
  ExpertRequest req;
  req.state = state;
  req.observation = FullStateObs{state};
  req.variance = d.variance;
  return {expert.request(req).action, ActionSource::Expert};
}

// ---------------------------------------------------------------- runner

EpisodeRunner::EpisodeRunner(std::shared_ptr<const GridMap> map, EnvParams params, const QTable& q,
                             const QTable& m, ObsMode mode, double eps, std::uint64_t seed,
                             std::string episode_id)
    : map_(std::move(map)), params_(params), q_(q), m_(m), mode_(mode), eps_(eps), env_(reset(map_, seed)) {
  params_.validate();
  if (!(eps_ >= 0.0)) throw ValidationError("variance threshold must be >= 0");
  trace_.episode_id = std::move(episode_id);
}

void EpisodeRunner::apply(Action action, ActionSource source, double variance) {
  TraceStep ts;
  ts.state = env_.pos;
  ts.key = key_at(*map_, env_.pos, mode_);
  ts.action = action;
  ts.source = source;
  ts.variance = variance;
  const StepResult r = step(env_, action, source == ActionSource::Expert, params_);
  ts.reward = r.reward;
  trace_.steps.push_back(ts);
  trace_.total_return += discount_ * r.reward;
  discount_ *= params_.gamma;
  if (source == ActionSource::Expert) ++trace_.expert_calls;
  if (r.done()) {
    trace_.outcome = r.status;
    status_ = Status::Finished;
  } else {
    status_ = Status::Running;
  }
}

EpisodeRunner::Status EpisodeRunner::advance() {
  if (status_ != Status::Running)
    throw Conflict(status_ == Status::Finished ? "episode already finished"
                                               : "episode is waiting for an expert action");
  const ObsKey key = key_at(*map_, env_.pos, mode_);
  const Decision d = hula_decide(q_, m_, key, eps_);
  if (d.source == ActionSource::Agent) {
    apply(d.action, ActionSource::Agent, d.variance);
    return status_;
  }
  ExpertRequest req;
  req.episode_id = trace_.episode_id;
  req.state = env_.pos;
  req.observation = observe(*map_, env_.pos, mode_);
  req.variance = d.variance;
  req.step_index = static_cast<int>(trace_.steps.size());
  pending_ = std::move(req);
  status_ = Status::AwaitingExpert;
  return status_;
}

EpisodeRunner::Status EpisodeRunner::submit_expert(Action action) {
  if (status_ != Status::AwaitingExpert || !pending_) throw Conflict("no expert request is pending");
  const double v = pending_->variance;
  pending_.reset();
  apply(action, ActionSource::Expert, v);
  return status_;
}

EpisodeRunner::Status EpisodeRunner::run(Expert& expert) {
  while (status_ != Status::Finished) {
    if (status_ == Status::Running) advance();
    if (status_ == Status::AwaitingExpert) submit_expert(expert.request(*pending_).action);
  }
  return status_;
}

EpisodeTrace run_episode(std::shared_ptr<const GridMap> map, const EnvParams& params, const QTable& q,
                         const QTable& m, ObsMode mode, double eps, std::uint64_t seed, Expert& expert,
                         std::string episode_id) {
  EpisodeRunner runner(std::move(map), params, q, m, mode, eps, seed, std::move(episode_id));
  runner.run(expert);
  return runner.trace();
}

std::uint64_t episode_seed(std::uint64_t master, int episode) {
  return derive_seed(master, 0x5eed, static_cast<std::uint64_t>(episode));
}

std::vector<EpisodeTrace> deploy(std::shared_ptr<const GridMap> map, const EnvParams& params,
                                 const QTable& q, const QTable& m, ObsMode mode, const DeployConfig& cfg,
                                 Expert& expert) {
  if (cfg.episodes < 1) throw ValidationError("episodes must be >= 1");
  std::vector<EpisodeTrace> out;
  out.reserve(static_cast<std::size_t>(cfg.episodes));
  for (int i = 0; i < cfg.episodes; ++i) {
    out.push_back(run_episode(map, params, q, m, mode, cfg.epsilon_threshold, episode_seed(cfg.seed, i), expert));
    out.back().episode_id = std::to_string(i);
  }
  return out;
}

// ---------------------------------------------------------------- penalty baseline

void PenaltyConfig::validate() const {
  if (!(call_penalty <= 0.0)) throw ValidationError("call penalty c must be <= 0");
  train.validate();
}

PenaltyResult penalty_train(const GridMap& map, const EnvParams& params, const PenaltyConfig& pcfg,
                            const ExpertPolicy& expert, ObsMode mode) {
  params.validate();
  pcfg.validate();
  const TrainConfig& cfg = pcfg.train;
  auto world = std::make_shared<const GridMap>(map);
  PenaltyResult res{QTable(kNumPenaltyActions), {}};
  auto& log = res.log;
  Rng explore(derive_seed(cfg.seed, 0));
  ConvergenceMonitor monitor(cfg);
  std::vector<Transition> batch;

  int episode = 0;
  while (episode < cfg.max_episodes) {
    batch.clear();
    const int n = std::min(cfg.episodes_per_iter, cfg.max_episodes - episode);
    for (int i = 0; i < n; ++i, ++episode) {
      const double eps = cfg.epsilon_at(episode);
      EnvState s = reset(world, derive_seed(cfg.seed, 1, static_cast<std::uint64_t>(episode)));
      ObsKey key = key_at(map, s.pos, mode);
      double ret = 0.0;
      double discount = 1.0;
      while (s.running()) {
        const int a = uniform01(explore) < eps ? uniform_int(explore, kNumPenaltyActions)
                                               : greedy_index(res.q, key);
        StepResult r;
        if (a == kCallExpert) {
          ++log.training_expert_calls;
          r = step(s, expert_action(expert, s.pos), true, params);
          r.reward += pcfg.call_penalty;
        } else {
          r = step(s, action_from_ordinal(a), false, params);
        }
        const ObsKey next = key_at(map, s.pos, mode);
        batch.push_back({key, a, r.reward, next, r.terminal()});
        ret += discount * r.reward;
        discount *= params.gamma;
        key = next;
      }
      log.episode_returns.push_back(ret);
      log.epsilons.push_back(eps);
      log.outcomes.push_back(s.status);
    }
    log.steps += batch.size();
    for (const Transition& t : batch) {
      q_update(res.q, t, cfg.alpha_for(res.q.visits(t.key, t.action)), params.gamma);
    }
    if (monitor.check(log.episode_returns, episode)) {
      log.converged = true;
      break;
    }
  }
  return res;
}

std::pair<Action, ActionSource> penalty_act(const QTable& q5, ObsKey key, Coord state, Expert& expert) {
  const int a = greedy_index(q5, key);
  if (a != kCallExpert) return {action_from_ordinal(a), ActionSource::Agent};
  ExpertRequest req;
  req.state = state;
  req.observation = FullStateObs{state};
  return {expert.request(req).action, ActionSource::Expert};
}

EpisodeTrace run_penalty_episode(std::shared_ptr<const GridMap> map, const EnvParams& params,
                                 const QTable& q5, ObsMode mode, std::uint64_t seed, Expert& expert) {
  EpisodeTrace trace;
  EnvState env = reset(map, seed);
  double discount = 1.0;
  while (env.running()) {
    TraceStep ts;
    ts.state = env.pos;
    ts.key = key_at(*map, env.pos, mode);
    auto [action, source] = penalty_act(q5, ts.key, env.pos, expert);
    ts.action = action;
    ts.source = source;
    // No call penalty at deployment.
    const StepResult r = step(env, action, source == ActionSource::Expert, params);
    ts.reward = r.reward;
    trace.steps.push_back(ts);
    trace.total_return += discount * r.reward;
    discount *= params.gamma;
    if (source == ActionSource::Expert) ++trace.expert_calls;
  }
  trace.outcome = env.status;
  return trace;
}

std::vector<EpisodeTrace> deploy_penalty(std::shared_ptr<const GridMap> map, const EnvParams& params,
                                         const QTable& q5, ObsMode mode, int episodes, std::uint64_t seed,
                                         Expert& expert) {
  std::vector<EpisodeTrace> out;
  out.reserve(static_cast<std::size_t>(episodes));
  for (int i = 0; i < episodes; ++i) {
    out.push_back(run_penalty_episode(map, params, q5, mode, episode_seed(seed, i), expert));
    out.back().episode_id = std::to_string(i);
  }
  return out;
}

}  // namespace hula
