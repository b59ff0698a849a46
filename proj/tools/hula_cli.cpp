// hula: train, evaluate and sweep variance-thresholded agents; serve sessions.

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hula/errors.hpp"
#include "hula/harness.hpp"
#include "hula/service.hpp"
#include "hula/text.hpp"

#ifndef HULA_MAPS_DIR
#define HULA_MAPS_DIR "maps"
#endif

namespace fs = std::filesystem;
using namespace hula;

namespace {

// Config keys ("section.key") and the flag that overrides each.
struct Key {
  const char* name;
  const char* flag;
  const char* help;
};

constexpr Key kKeys[] = {
    {"run.map", "--map", "map file, or a map name looked up in the maps directory"},
    {"run.observation", "--obs", "full | patch"},
    {"run.table", "--table", "table file"},
    {"run.out", "--out", "output file"},
    {"run.seed", "--seed", "evaluation / rollout seed"},
    {"run.episodes", "--episodes", "episodes per evaluation point"},
    {"run.epsilon", "--eps", "variance threshold (inf = never call)"},
    {"env.psi", "--psi", "probability the intended move is taken"},
    {"env.step_penalty", "--step-penalty", "reward per step"},
    {"env.trap_reward", "--trap-reward", "reward on entering a trap"},
    {"env.goal_reward", "--goal-reward", "reward on entering the goal"},
    {"env.gamma", "--gamma", "discount"},
    {"env.max_steps", "--max-steps", "episode step cap"},
    {"env.slip", "--slip", "inclusive | exclusive"},
    {"train.alpha_mode", "--alpha-mode", "constant | visit_decay"},
    {"train.alpha", "--alpha", "constant learning rate"},
    {"train.alpha_decay_power", "--alpha-decay-power", "visit_decay exponent in (0.5, 1]"},
    {"train.explore_eps_start", "--explore-start", "initial exploration rate"},
    {"train.explore_eps_end", "--explore-end", "final exploration rate"},
    {"train.explore_fraction", "--explore-fraction", "share of the budget spent annealing"},
    {"train.episodes_per_iter", "--episodes-per-iter", "episodes collected per update batch"},
    {"train.max_episodes", "--max-episodes", "training budget"},
    {"train.convergence_window", "--convergence-window", "rolling window of the stop test"},
    {"train.convergence_tol", "--convergence-tol", "stop tolerance (0 disables)"},
    {"train.m_update_mode", "--m-update", "corrected | paper_literal"},
    {"train.seed", "--train-seed", "training seed"},
    {"sweep.eps_grid", "--eps-grid", "comma-separated thresholds (default: 20 geometric values)"},
    {"sweep.c_grid", "--c-grid", "comma-separated call penalties"},
    {"sweep.window", "--window", "rolling-mean window of the smoothed curve"},
    {"variance.kind", "--kind", "learned | mc | exact"},
    {"variance.rollouts", "--rollouts", "Monte-Carlo rollouts per state"},
    {"topn.estimated", "--estimated", "estimated variance map file"},
    {"topn.truth", "--truth", "ground-truth variance map file"},
    {"topn.n", "--n", "comma-separated N values"},
    {"serve.host", "--host", "bind address"},
    {"serve.port", "--port", "port"},
    {"serve.maps", "--maps", "maps directory"},
    {"serve.tables", "--tables", "table directory"},
};

class Settings {
 public:
  void load_file(const std::string& path) {
    for (auto& [k, v] : load_config(path)) {
      if (!known(k)) throw ValidationError("unknown config key '" + k + "' in " + path);
      values_[k] = v;
    }
  }
  void set(const std::string& key, const std::string& v) { values_[key] = v; }

  std::optional<std::string> get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }
  std::string str(const std::string& key, const std::string& def) const { return get(key).value_or(def); }
  std::string required(const std::string& key) const {
    auto v = get(key);
    if (!v) throw ValidationError("missing setting " + flag_of(key) + " (config key " + key + ")");
    return *v;
  }
  double real(const std::string& key, double def) const {
    auto v = get(key);
    return v ? parse_real(*v) : def;
  }
  template <typename Int>
  Int integer(const std::string& key, Int def) const {
    auto v = get(key);
    return v ? parse_integer<Int>(*v) : def;
  }
  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    auto v = get(key);
    if (!v) return out;
    std::string_view rest = *v;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      out.push_back(parse_real(trim(rest.substr(0, comma))));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    return out;
  }

 private:
  static bool known(const std::string& key) {
    for (const Key& k : kKeys) {
      if (key == k.name) return true;
    }
    return false;
  }
  static std::string flag_of(const std::string& key) {
    for (const Key& k : kKeys) {
      if (key == k.name) return k.flag;
    }
    return key;
  }
  std::map<std::string, std::string> values_;
};

// Command-line values are collected here, then layered over the config file.
struct Overrides {
  std::string config;
  std::map<std::string, std::string> flags;
};

void add_keys(CLI::App* cmd, Overrides& ov, std::initializer_list<std::string_view> sections) {
  cmd->add_option("--config", ov.config, "key = value config file with [sections]");
  for (const Key& k : kKeys) {
    const std::string_view name = k.name;
    const auto section = name.substr(0, name.find('.'));
    if (std::find(sections.begin(), sections.end(), section) == sections.end()) continue;
    auto* slot = &ov.flags[k.name];
    cmd->add_option(k.flag, *slot, k.help);
  }
}

Settings settings_for(CLI::App* cmd, const Overrides& ov) {
  Settings s;
  if (!ov.config.empty()) s.load_file(ov.config);
  for (const Key& k : kKeys) {
    auto it = ov.flags.find(k.name);
    if (it == ov.flags.end()) continue;
    const std::string flag = std::string(k.flag).substr(2);
    if (cmd->count("--" + flag) > 0) s.set(k.name, it->second);
  }
  return s;
}

fs::path out_dir() {
  const char* env = std::getenv("HULA_OUT_DIR");
  return env && *env ? fs::path(env) : fs::path(".");
}

std::string output_path(const Settings& s, const std::string& fallback_name) {
  if (auto p = s.get("run.out")) return *p;
  const fs::path dir = out_dir();
  fs::create_directories(dir);
  return (dir / fallback_name).string();
}

GridMap resolve_map(const std::string& arg) {
  if (fs::is_regular_file(arg)) return load_map(arg);
  const fs::path named = fs::path(HULA_MAPS_DIR) / (arg + ".map");
  if (fs::is_regular_file(named)) return load_map(named.string());
  throw NotFound("no map file or shipped map named '" + arg + "'");
}

EnvParams env_params(const Settings& s) {
  EnvParams p;
  p.psi = s.real("env.psi", p.psi);
  p.step_penalty = s.real("env.step_penalty", p.step_penalty);
  p.trap_reward = s.real("env.trap_reward", p.trap_reward);
  p.goal_reward = s.real("env.goal_reward", p.goal_reward);
  p.gamma = s.real("env.gamma", p.gamma);
  p.max_steps = s.integer<int>("env.max_steps", p.max_steps);
  const std::string slip = s.str("env.slip", "inclusive");
  if (slip != "inclusive" && slip != "exclusive") throw ValidationError("slip must be inclusive or exclusive");
  p.slip = slip == "inclusive" ? SlipMode::Inclusive : SlipMode::Exclusive;
  p.validate();
  return p;
}

TrainConfig train_config(const Settings& s) {
  TrainConfig c;
  if (auto v = s.get("train.alpha_mode")) {
    auto m = parse_alpha_mode(*v);
    if (!m) throw ValidationError("alpha_mode must be constant or visit_decay");
    c.alpha_mode = *m;
  }
  c.alpha = s.real("train.alpha", c.alpha);
  c.alpha_decay_power = s.real("train.alpha_decay_power", c.alpha_decay_power);
  c.explore_eps_start = s.real("train.explore_eps_start", c.explore_eps_start);
  c.explore_eps_end = s.real("train.explore_eps_end", c.explore_eps_end);
  c.explore_fraction = s.real("train.explore_fraction", c.explore_fraction);
  c.episodes_per_iter = s.integer<int>("train.episodes_per_iter", c.episodes_per_iter);
  c.max_episodes = s.integer<int>("train.max_episodes", c.max_episodes);
  c.convergence_window = s.integer<int>("train.convergence_window", c.convergence_window);
  c.convergence_tol = s.real("train.convergence_tol", c.convergence_tol);
  if (auto v = s.get("train.m_update_mode")) {
    auto m = parse_m_update_mode(*v);
    if (!m) throw ValidationError("m_update_mode must be corrected or paper_literal");
    c.m_update_mode = *m;
  }
  c.seed = s.integer<std::uint64_t>("train.seed", c.seed);
  c.validate();
  return c;
}

ObsMode obs_mode(const Settings& s) {
  auto m = parse_obs_mode(s.str("run.observation", "full"));
  if (!m) throw ValidationError("observation must be full or patch");
  return *m;
}

// Table plus the map it was trained on.
std::pair<TableFile, GridMap> table_and_map(const Settings& s) {
  TableFile t = load_tables(s.required("run.table"));
  GridMap map = resolve_map(s.str("run.map", t.map_name));
  if (map.name() != t.map_name)
    throw ValidationError("table was trained on '" + t.map_name + "' but the map is '" + map.name() + "'");
  return {std::move(t), std::move(map)};
}

Metadata table_metadata(const TableFile& t) {
  return {{"map", t.map_name},
          {"observation", std::string(obs_mode_name(t.obs_mode))},
          {"m_update", std::string(m_update_mode_name(t.m_update_mode))},
          {"config_hash", hex64(t.config_hash)},
          {"train_seed", std::to_string(t.seed)}};
}

std::string eps_text(double eps) { return std::isinf(eps) ? "inf" : format_real(eps); }

// ---------------------------------------------------------------- commands

int cmd_train(const Settings& s) {
  const GridMap map = resolve_map(s.required("run.map"));
  const EnvParams params = env_params(s);
  const TrainConfig cfg = train_config(s);
  const ObsMode mode = obs_mode(s);
  const TrainResult r = train(map, params, cfg, mode);

  TableFile t{map.name(), mode, cfg.m_update_mode, params, config_hash(params, cfg, map.name(), mode),
              cfg.seed, r.q, r.m};
  const std::string path = output_path(s, map.name() + "_" + std::string(obs_mode_name(mode)) + ".table");
  save_tables(path, t);
  std::cout << "table: " << path << "\n"
            << "episodes: " << r.log.episodes() << (r.log.converged ? " (converged)" : "") << "\n"
            << "steps: " << r.log.steps << "\n"
            << "keys: " << r.q.size() << "\n"
            << "expert_calls: " << r.log.expert_calls << "\n"
            << "config_hash: " << hex64(t.config_hash) << "\n";
  return 0;
}

int cmd_eval(const Settings& s) {
  auto [t, map] = table_and_map(s);
  DeployConfig dc;
  dc.epsilon_threshold = s.real("run.epsilon", kNeverCall);
  dc.episodes = s.integer<int>("run.episodes", dc.episodes);
  dc.seed = s.integer<std::uint64_t>("run.seed", dc.seed);
  ScriptedExpert expert(plan_optimal(map, t.params));
  const auto world = std::make_shared<const GridMap>(map);
  const auto traces = deploy(world, t.params, t.q, t.m, t.obs_mode, dc, expert);
  const SweepPoint p = summarize(dc.epsilon_threshold, traces);
  std::cout << "epsilon: " << eps_text(dc.epsilon_threshold) << "\n"
            << "episodes: " << p.episodes << "\n"
            << "mean_return: " << format_real(p.mean_return) << "\n"
            << "return_stderr: " << format_real(p.return_stderr) << "\n"
            << "mean_expert_calls: " << format_real(p.mean_expert_calls) << "\n";
  if (auto out = s.get("run.out")) {
    Metadata meta = table_metadata(t);
    meta.push_back({"epsilon", eps_text(dc.epsilon_threshold)});
    meta.push_back({"seed", std::to_string(dc.seed)});
    write_trace(*out, traces.front(), meta);
    std::cout << "trace: " << *out << "\n";
  }
  return 0;
}

int cmd_sweep_threshold(const Settings& s) {
  auto [t, map] = table_and_map(s);
  const int episodes = s.integer<int>("run.episodes", 1000);
  const auto seed = s.integer<std::uint64_t>("run.seed", 1);
  std::vector<double> grid = s.reals("sweep.eps_grid");
  if (grid.empty()) {
    grid = default_eps_grid(max_table_variance(t.q, t.m));
    grid.push_back(kNeverCall);
  }
  const ExpertPolicy expert = plan_optimal(map, t.params);
  const auto points = sweep_threshold(t.q, t.m, map, t.params, t.obs_mode, expert, grid, episodes, seed);

  Metadata meta = table_metadata(t);
  meta.push_back({"sweep", "threshold"});
  meta.push_back({"seed", std::to_string(seed)});
  meta.push_back({"episodes", std::to_string(episodes)});
  const std::string path = output_path(s, t.map_name + "_threshold.csv");
  write_curve(path, points, meta);
  if (auto w = s.get("sweep.window")) {
    const int window = parse_integer<int>(*w);
    meta.push_back({"rolling_window", *w});
    write_curve(fs::path(path).replace_extension(".rolling.csv").string(), rolling_mean(points, window), meta);
  }
  for (const auto& p : points) {
    std::cout << eps_text(p.param_value) << "\t" << format_real(p.mean_expert_calls) << "\t"
              << format_real(p.mean_return) << "\t" << format_real(p.return_stderr) << "\n";
  }
  std::cout << "curve: " << path << "\n";
  return 0;
}

int cmd_sweep_penalty(const Settings& s) {
  const GridMap map = resolve_map(s.required("run.map"));
  const EnvParams params = env_params(s);
  const ObsMode mode = obs_mode(s);
  PenaltyConfig pcfg;
  pcfg.train = train_config(s);
  std::vector<double> grid = s.reals("sweep.c_grid");
  if (grid.empty()) grid = default_penalty_grid();
  const int episodes = s.integer<int>("run.episodes", 1000);
  const auto seed = s.integer<std::uint64_t>("run.seed", 1);
  const ExpertPolicy expert = plan_optimal(map, params);
  const PenaltySweep sweep = sweep_penalty(map, params, grid, pcfg, expert, mode, episodes, seed);

  Metadata meta = {{"map", map.name()},
                   {"observation", std::string(obs_mode_name(mode))},
                   {"sweep", "penalty"},
                   {"config_hash", hex64(config_hash(params, pcfg.train, map.name(), mode))},
                   {"train_seed", std::to_string(pcfg.train.seed)},
                   {"seed", std::to_string(seed)},
                   {"episodes", std::to_string(episodes)}};
  for (std::size_t i = 0; i < grid.size(); ++i)
    meta.push_back({"training_calls[" + format_real(grid[i]) + "]", std::to_string(sweep.training_calls[i])});
  meta.push_back({"total_training_calls", std::to_string(sweep.total_training_calls)});
  const std::string path = output_path(s, map.name() + "_penalty.csv");
  write_curve(path, sweep.points, meta);
  for (const auto& p : sweep.points) {
    std::cout << format_real(p.param_value) << "\t" << format_real(p.mean_expert_calls) << "\t"
              << format_real(p.mean_return) << "\t" << format_real(p.return_stderr) << "\n";
  }
  std::cout << "total_training_calls: " << sweep.total_training_calls << "\n"
            << "curve: " << path << "\n";
  return 0;
}

int cmd_variance_map(const Settings& s) {
  auto [t, map] = table_and_map(s);
  const std::string kind = s.str("variance.kind", "learned");
  const Policy greedy = Policy::greedy(t.q, t.obs_mode, "greedy");
  VarianceMap vm;
  Metadata meta = table_metadata(t);
  if (kind == "learned") {
    vm = learned_variance_map(map, t.q, t.m, t.obs_mode);
  } else if (kind == "exact") {
    vm = exact_variance_map(map, exact_policy_eval(map, t.params, greedy), "greedy");
  } else if (kind == "mc") {
    const int k = s.integer<int>("variance.rollouts", 10000);
    const auto seed = s.integer<std::uint64_t>("run.seed", 1);
    vm = mc_variance(map, t.params, greedy, k, seed);
    meta.push_back({"seed", std::to_string(seed)});
  } else {
    throw ValidationError("kind must be learned, mc or exact");
  }
  const std::string path = output_path(s, t.map_name + "_" + kind + ".var");
  write_variance_map(path, vm, meta);
  std::cout << "variance map: " << path << "\n";
  return 0;
}

int cmd_topn(const Settings& s) {
  const auto est = read_variance_map(s.required("topn.estimated")).first;
  const auto truth = read_variance_map(s.required("topn.truth")).first;
  std::vector<double> ns = s.reals("topn.n");
  if (ns.empty()) ns = {5, 10};
  for (double n : ns) {
    std::cout << "top" << static_cast<int>(n) << ": "
              << format_real(topn_accuracy(est, truth, static_cast<int>(n))) << "\n";
  }
  return 0;
}

HttpService* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

int cmd_serve(const Settings& s) {
  SessionManager sessions(SessionManager::load_maps(s.str("serve.maps", HULA_MAPS_DIR)),
                          s.str("serve.tables", out_dir().string()));
  HttpService http(sessions);
  const std::string host = s.str("serve.host", "127.0.0.1");
  const int port = s.integer<int>("serve.port", 8080);
  g_service = &http;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "serving on http://" << host << ":" << port << std::endl;
  http.listen(host, port);
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variance-thresholded expert calls for tabular gridworld agents"};
  app.require_subcommand(1);

  struct Command {
    const char* name;
    const char* help;
    std::initializer_list<std::string_view> sections;
    int (*run)(const Settings&);
  };
  const Command commands[] = {
      {"train", "train Q and second-moment tables without an expert", {"run", "env", "train"}, cmd_train},
      {"eval", "deploy a table at one threshold", {"run"}, cmd_eval},
      {"sweep-threshold", "expert calls vs return over thresholds", {"run", "sweep"}, cmd_sweep_threshold},
      {"sweep-penalty", "train and evaluate the call-penalty baseline", {"run", "env", "train", "sweep"},
       cmd_sweep_penalty},
      {"variance-map", "learned, Monte-Carlo or exact variance map", {"run", "variance"}, cmd_variance_map},
      {"topn", "top-N overlap of two variance maps", {"topn"}, cmd_topn},
      {"serve", "HTTP session service for a remote expert", {"serve"}, cmd_serve},
  };

  std::vector<Overrides> overrides(std::size(commands));
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(commands); ++i) {
    subs.push_back(app.add_subcommand(commands[i].name, commands[i].help));
    add_keys(subs.back(), overrides[i], commands[i].sections);
  }
  CLI11_PARSE(app, argc, argv);

  try {
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (subs[i]->parsed()) return commands[i].run(settings_for(subs[i], overrides[i]));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
