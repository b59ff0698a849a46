#include "hula/learner.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "hula/errors.hpp"
#include "hula/text.hpp"

namespace hula {

std::string_view m_update_mode_name(MUpdateMode m) {
  return m == MUpdateMode::Corrected ? "corrected" : "paper_literal";
}

std::optional<MUpdateMode> parse_m_update_mode(std::string_view s) {
  if (s == "corrected") return MUpdateMode::Corrected;
  if (s == "paper_literal") return MUpdateMode::PaperLiteral;
  return std::nullopt;
}

std::string_view alpha_mode_name(AlphaMode m) {
  return m == AlphaMode::Constant ? "constant" : "visit_decay";
}

std::optional<AlphaMode> parse_alpha_mode(std::string_view s) {
  if (s == "constant") return AlphaMode::Constant;
  if (s == "visit_decay") return AlphaMode::VisitDecay;
  return std::nullopt;
}

void TrainConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in (0, 1]");
  if (!(alpha_decay_power > 0.5 && alpha_decay_power <= 1.0))
    throw ValidationError("alpha_decay_power must lie in (0.5, 1]");
  if (!prob(explore_eps_start) || !prob(explore_eps_end) || !prob(explore_fraction))
    throw ValidationError("exploration settings must be probabilities");
  if (episodes_per_iter < 1) throw ValidationError("episodes_per_iter must be >= 1");
  if (max_episodes < 1) throw ValidationError("max_episodes must be >= 1");
  if (convergence_window < 1) throw ValidationError("convergence_window must be >= 1");
}

double TrainConfig::epsilon_at(int episode) const {
  const double anneal = explore_fraction * max_episodes;
  if (anneal <= 0.0) return explore_eps_end;
  const double frac = std::min(1.0, episode / anneal);
  return explore_eps_start + (explore_eps_end - explore_eps_start) * frac;
}

std::string TrainConfig::canonical() const {
  std::ostringstream s;
  s << "alpha_mode=" << alpha_mode_name(alpha_mode) << ";alpha=" << format_real(alpha)
    << ";alpha_decay_power=" << format_real(alpha_decay_power)
    << ";eps_start=" << format_real(explore_eps_start) << ";eps_end=" << format_real(explore_eps_end)
    << ";explore_fraction=" << format_real(explore_fraction) << ";H=" << episodes_per_iter
    << ";max_episodes=" << max_episodes << ";window=" << convergence_window
    << ";tol=" << format_real(convergence_tol) << ";m_update=" << m_update_mode_name(m_update_mode)
    << ";seed=" << seed;
  return s.str();
}

bool ConvergenceMonitor::check(const std::vector<double>& returns, int episodes_done) {
  if (cfg_.epsilon_at(episodes_done) != cfg_.explore_eps_end) return false;
  const auto window = static_cast<std::size_t>(cfg_.convergence_window);
  if (returns.size() < window) return false;
  const double mean =
      std::accumulate(returns.end() - static_cast<std::ptrdiff_t>(window), returns.end(), 0.0) /
      static_cast<double>(window);
  if (has_previous_ && std::abs(mean - previous_) < cfg_.convergence_tol) {
    ++stable_checks_;
  } else {
    stable_checks_ = 0;
  }
  has_previous_ = true;
  previous_ = mean;
  return stable_checks_ >= 3;
}

TrainResult train(const GridMap& map, const EnvParams& params, const TrainConfig& cfg, ObsMode mode) {
  params.validate();
  cfg.validate();
  auto world = std::make_shared<const GridMap>(map);
  TrainResult res{QTable(kNumMoves), QTable(kNumMoves), {}};
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
        const int a = uniform01(explore) < eps ? uniform_int(explore, kNumMoves) : greedy_index(res.q, key);
        const StepResult r = step(s, action_from_ordinal(a), false, params);
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
      m_update(res.m, res.q, t, cfg.alpha_for(res.m.visits(t.key, t.action)), params.gamma,
               cfg.m_update_mode);
    }
    if (monitor.check(log.episode_returns, episode)) {
      log.converged = true;
      break;
    }
  }
  return res;
}

GreedyEpisode run_greedy_episode(std::shared_ptr<const GridMap> map, const EnvParams& params,
                                 const QTable& q, ObsMode mode, std::uint64_t seed) {
  GreedyEpisode ep;
  EnvState s = reset(map, seed);
  double discount = 1.0;
  while (s.running()) {
    const Action a = greedy_action(q, key_at(*map, s.pos, mode));
    ep.states.push_back(s.pos);
    ep.actions.push_back(a);
    const StepResult r = step(s, a, false, params);
    ep.rewards.push_back(r.reward);
    ep.total_return += discount * r.reward;
    discount *= params.gamma;
  }
  ep.outcome = s.status;
  return ep;
}

// ---------------------------------------------------------------- table files

std::uint64_t config_hash(const EnvParams& p, const TrainConfig& cfg, std::string_view map_name,
                          ObsMode mode) {
  std::ostringstream s;
  s << "map=" << map_name << ";obs=" << obs_mode_name(mode) << ";psi=" << format_real(p.psi)
    << ";step=" << format_real(p.step_penalty) << ";trap=" << format_real(p.trap_reward)
    << ";goal=" << format_real(p.goal_reward) << ";gamma=" << format_real(p.gamma)
    << ";max_steps=" << p.max_steps << ";slip=" << (p.slip == SlipMode::Inclusive ? "inclusive" : "exclusive")
    << ";" << cfg.canonical();
  return fnv1a(s.str());
}

namespace {
constexpr std::string_view kTableMagic = "# hula-table v1";
}

void save_tables(std::ostream& out, const TableFile& t) {
  if (t.q.num_actions() != t.m.num_actions())
    throw ValidationError("Q and M tables disagree on the action count");
  out << kTableMagic << '\n';
  out << "map: " << t.map_name << '\n';
  out << "observation: " << obs_mode_name(t.obs_mode) << '\n';
  out << "m_update: " << m_update_mode_name(t.m_update_mode) << '\n';
  out << "gamma: " << format_real(t.params.gamma) << '\n';
  out << "psi: " << format_real(t.params.psi) << '\n';
  out << "step_penalty: " << format_real(t.params.step_penalty) << '\n';
  out << "trap_reward: " << format_real(t.params.trap_reward) << '\n';
  out << "goal_reward: " << format_real(t.params.goal_reward) << '\n';
  out << "max_steps: " << t.params.max_steps << '\n';
  out << "slip: " << (t.params.slip == SlipMode::Inclusive ? "inclusive" : "exclusive") << '\n';
  out << "config_hash: " << hex64(t.config_hash) << '\n';
  out << "seed: " << t.seed << '\n';
  out << "actions: " << t.q.num_actions() << '\n';

  std::vector<ObsKey> keys = t.q.sorted_keys();
  for (ObsKey k : t.m.keys()) {
    if (!t.q.contains(k)) keys.push_back(k);
  }
  std::sort(keys.begin(), keys.end());
  out << "rows: " << keys.size() * static_cast<std::size_t>(t.q.num_actions()) << '\n';
  out << "obs_key action q m visits\n";
  for (ObsKey k : keys) {
    for (int a = 0; a < t.q.num_actions(); ++a) {
      out << k << ' ' << a << ' ' << format_real(t.q(k, a)) << ' ' << format_real(t.m(k, a)) << ' '
          << t.q.visits(k, a) << '\n';
    }
  }
  if (!out) throw IoError("failed writing table file");
}

TableFile load_tables(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != kTableMagic)
    throw ParseError("not a hula table file (missing '" + std::string(kTableMagic) + "')");

  std::map<std::string, std::string, std::less<>> header;
  while (std::getline(in, line)) {
    std::string_view l = trim(line);
    if (l == "obs_key action q m visits") break;
    auto colon = l.find(':');
    if (colon == std::string_view::npos) throw ParseError("malformed table header line: " + line);
    header[std::string(trim(l.substr(0, colon)))] = std::string(trim(l.substr(colon + 1)));
  }
  auto field = [&](std::string_view name) -> const std::string& {
    auto it = header.find(name);
    if (it == header.end()) throw ParseError("table header lacks '" + std::string(name) + "'");
    return it->second;
  };

  TableFile t;
  t.map_name = field("map");
  auto mode = parse_obs_mode(field("observation"));
  auto mmode = parse_m_update_mode(field("m_update"));
  if (!mode || !mmode) throw ParseError("bad observation or m_update mode in table header");
  t.obs_mode = *mode;
  t.m_update_mode = *mmode;
  t.params.gamma = parse_real(field("gamma"));
  t.params.psi = parse_real(field("psi"));
  t.params.step_penalty = parse_real(field("step_penalty"));
  t.params.trap_reward = parse_real(field("trap_reward"));
  t.params.goal_reward = parse_real(field("goal_reward"));
  t.params.max_steps = parse_integer<int>(field("max_steps"));
  t.params.slip = field("slip") == "exclusive" ? SlipMode::Exclusive : SlipMode::Inclusive;
  t.config_hash = parse_integer<std::uint64_t>(field("config_hash"), 16);
  t.seed = parse_integer<std::uint64_t>(field("seed"));
  const int actions = parse_integer<int>(field("actions"));
  const auto rows = parse_integer<std::size_t>(field("rows"));
  t.q = QTable(actions);
  t.m = QTable(actions);

  for (std::size_t i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) throw ParseError("table file truncated");
    std::istringstream row(line);
    std::string key, action, qv, mv, visits;
    if (!(row >> key >> action >> qv >> mv >> visits)) throw ParseError("malformed table row: " + line);
    const auto k = parse_integer<ObsKey>(key);
    const int a = parse_integer<int>(action);
    if (a < 0 || a >= actions) throw ParseError("action ordinal out of range: " + line);
    const auto n = parse_integer<std::uint64_t>(visits);
    t.q.set(k, a, parse_real(qv));
    t.m.set(k, a, parse_real(mv));
    t.q.set_visits(k, a, n);
    t.m.set_visits(k, a, n);
  }
  return t;
}

void save_tables(const std::string& path, const TableFile& t) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write table file " + path);
  save_tables(out, t);
}

TableFile load_tables(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open table file " + path);
  return load_tables(in);
}

}  // namespace hula
