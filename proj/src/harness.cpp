#include "hula/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hula/errors.hpp"
#include "hula/parallel.hpp"
#include "hula/text.hpp"

namespace hula {

std::string metadata_value(const Metadata& meta, const std::string& key) {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  return {};
}

SweepPoint summarize(double param_value, const std::vector<EpisodeTrace>& traces) {
  if (traces.empty()) throw ValidationError("cannot summarize an empty set of episodes");
  const double n = static_cast<double>(traces.size());
  double calls = 0.0;
  // Welford, so a set of identical returns has exactly zero spread.
  double mean = 0.0;
  double ss = 0.0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    calls += static_cast<double>(traces[i].expert_calls);
    const double d = traces[i].total_return - mean;
    mean += d / static_cast<double>(i + 1);
    ss += d * (traces[i].total_return - mean);
  }
  calls /= n;
  const double sd = traces.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return {param_value, calls, mean, sd / std::sqrt(n), static_cast<int>(traces.size())};
}

std::vector<double> default_eps_grid(double max_variance, int n) {
  constexpr double lo = 1e-3;
  if (n < 1) throw ValidationError("grid size must be >= 1");
  if (n == 1 || !(max_variance > lo)) return {lo};
  std::vector<double> grid(static_cast<std::size_t>(n));
  const double ratio = std::log(max_variance / lo) / (n - 1);
  for (int i = 0; i < n; ++i) grid[i] = lo * std::exp(ratio * i);
  grid.back() = max_variance;
  return grid;
}

std::vector<double> default_penalty_grid() { return {0.0, -0.1, -0.3, -1.0, -3.0, -10.0, -30.0, -100.0}; }

double max_table_variance(const QTable& q, const QTable& m) {
  double best = 0.0;
  for (ObsKey k : q.keys()) best = std::max(best, greedy_variance(q, m, k));
  return best;
}

namespace {

void sort_by_calls(std::vector<SweepPoint>& points) {
  std::stable_sort(points.begin(), points.end(), [](const SweepPoint& a, const SweepPoint& b) {
    return a.mean_expert_calls < b.mean_expert_calls;
  });
}

}  // namespace

std::vector<SweepPoint> sweep_threshold(const QTable& q, const QTable& m, const GridMap& map,
                                        const EnvParams& params, ObsMode mode, const ExpertPolicy& expert,
                                        const std::vector<double>& eps_grid, int episodes, std::uint64_t seed) {
  if (eps_grid.empty()) throw ValidationError("threshold grid is empty");
  auto world = std::make_shared<const GridMap>(map);
  std::vector<SweepPoint> points(eps_grid.size());
  parallel_for(static_cast<int>(eps_grid.size()), [&](int i) {
    ScriptedExpert scripted(expert);
    DeployConfig cfg{eps_grid[i], episodes, seed};
    points[i] = summarize(eps_grid[i], deploy(world, params, q, m, mode, cfg, scripted));
  });
  sort_by_calls(points);
  return points;
}

PenaltySweep sweep_penalty(const GridMap& map, const EnvParams& params, const std::vector<double>& c_grid,
                           const PenaltyConfig& pcfg, const ExpertPolicy& expert, ObsMode mode, int episodes,
                           std::uint64_t seed) {
  if (c_grid.empty()) throw ValidationError("penalty grid is empty");
  auto world = std::make_shared<const GridMap>(map);
  PenaltySweep out;
  out.points.resize(c_grid.size());
  out.training_calls.resize(c_grid.size());
  parallel_for(static_cast<int>(c_grid.size()), [&](int i) {
    PenaltyConfig cfg = pcfg;
    cfg.call_penalty = c_grid[i];
    cfg.train.seed = derive_seed(pcfg.train.seed, static_cast<std::uint64_t>(i));
    PenaltyResult trained = penalty_train(map, params, cfg, expert, mode);
    ScriptedExpert scripted(expert);
    out.points[i] = summarize(c_grid[i], deploy_penalty(world, params, trained.q, mode, episodes, seed, scripted));
    out.training_calls[i] = trained.log.training_expert_calls;
  });
  for (auto n : out.training_calls) out.total_training_calls += n;
  sort_by_calls(out.points);
  return out;
}

std::vector<SweepPoint> rolling_mean(const std::vector<SweepPoint>& points, int window) {
  if (window < 1) throw ValidationError("rolling window must be >= 1");
  std::vector<SweepPoint> out;
  if (window > static_cast<int>(points.size())) return out;
  for (std::size_t i = 0; i + window <= points.size(); ++i) {
    SweepPoint p{};
    for (int j = 0; j < window; ++j) {
      const SweepPoint& s = points[i + j];
      p.param_value += s.param_value;
      p.mean_expert_calls += s.mean_expert_calls;
      p.mean_return += s.mean_return;
      p.return_stderr += s.return_stderr;
      p.episodes += s.episodes;
    }
    p.param_value /= window;
    p.mean_expert_calls /= window;
    p.mean_return /= window;
    p.return_stderr /= window;
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------- export

namespace {

void write_header(std::ostream& out, const Metadata& meta) {
  for (const auto& [k, v] : meta) out << "# " << k << ": " << v << '\n';
}

// Consumes leading `# key: value` lines; returns the first non-header line.
std::string read_header(std::istream& in, Metadata& meta) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("# ", 0) != 0) return line;
    std::string_view body = std::string_view(line).substr(2);
    auto colon = body.find(": ");
    if (colon == std::string_view::npos) throw ParseError("malformed header line: " + line);
    meta.emplace_back(std::string(body.substr(0, colon)), std::string(body.substr(colon + 2)));
  }
  return {};
}

template <typename Fn>
void with_output_file(const std::string& path, Fn&& fn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  fn(out);
  out.flush();
  if (!out) throw IoError("failed writing " + path);
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

constexpr std::string_view kCurveColumns = "param,calls,return,stderr,episodes";

}  // namespace

void write_curve(std::ostream& out, const std::vector<SweepPoint>& points, const Metadata& meta) {
  write_header(out, meta);
  out << kCurveColumns << '\n';
  for (const auto& p : points) {
    out << format_real(p.param_value) << ',' << format_real(p.mean_expert_calls) << ','
        << format_real(p.mean_return) << ',' << format_real(p.return_stderr) << ',' << p.episodes << '\n';
  }
}

void write_curve(const std::string& path, const std::vector<SweepPoint>& points, const Metadata& meta) {
  with_output_file(path, [&](std::ostream& out) { write_curve(out, points, meta); });
}

std::pair<std::vector<SweepPoint>, Metadata> read_curve(std::istream& in) {
  Metadata meta;
  std::string line = read_header(in, meta);
  if (line != kCurveColumns) throw ParseError("curve file lacks the column header");
  std::vector<SweepPoint> points;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream row(line);
    for (std::string c; std::getline(row, c, ',');) cols.push_back(c);
    if (cols.size() != 5) throw ParseError("curve row needs 5 columns: " + line);
    points.push_back({parse_real(cols[0]), parse_real(cols[1]), parse_real(cols[2]), parse_real(cols[3]),
                      parse_integer<int>(cols[4])});
  }
  return {std::move(points), std::move(meta)};
}

std::pair<std::vector<SweepPoint>, Metadata> read_curve(const std::string& path) {
  auto in = open_input(path);
  return read_curve(in);
}

namespace {

void write_grid(std::ostream& out, const VarianceMap& vm, const Eigen::ArrayXXd& grid) {
  for (int y = 0; y < vm.height(); ++y) {
    for (int x = 0; x < vm.width(); ++x) {
      if (x) out << ' ';
      if (vm.domain(y, x)) {
        out << format_real(grid(y, x));
      } else {
        out << '#';
      }
    }
    out << '\n';
  }
}

}  // namespace

void write_variance_map(std::ostream& out, const VarianceMap& vm, const Metadata& meta) {
  write_header(out, meta);
  out << "provenance: " << provenance_name(vm.provenance) << '\n';
  out << "policy: " << vm.policy_id << '\n';
  out << "rollouts: " << vm.rollouts << '\n';
  out << "size: " << vm.width() << ' ' << vm.height() << '\n';
  out << "variance:\n";
  write_grid(out, vm, vm.values);
  if (vm.provenance == Provenance::MonteCarlo) {
    out << "stderr:\n";
    write_grid(out, vm, vm.stderr_values);
  }
}

void write_variance_map(const std::string& path, const VarianceMap& vm, const Metadata& meta) {
  with_output_file(path, [&](std::ostream& out) { write_variance_map(out, vm, meta); });
}

std::pair<VarianceMap, Metadata> read_variance_map(std::istream& in) {
  Metadata meta;
  std::string line = read_header(in, meta);
  auto field = [&](std::string_view name) {
    if (line.rfind(std::string(name) + ": ", 0) != 0)
      throw ParseError("variance map expects '" + std::string(name) + "', got: " + line);
    std::string v = line.substr(name.size() + 2);
    std::getline(in, line);
    return v;
  };
  VarianceMap vm;
  const std::string prov = field("provenance");
  if (prov == "exact_dp") {
    vm.provenance = Provenance::ExactDp;
  } else if (prov == "monte_carlo") {
    vm.provenance = Provenance::MonteCarlo;
  } else if (prov == "learned") {
    vm.provenance = Provenance::Learned;
  } else {
    throw ParseError("unknown provenance: " + prov);
  }
  vm.policy_id = field("policy");
  vm.rollouts = parse_integer<int>(field("rollouts"));
  std::istringstream size(field("size"));
  int w = 0;
  int h = 0;
  if (!(size >> w >> h) || w <= 0 || h <= 0) throw ParseError("bad variance map size");
  vm.values = Eigen::ArrayXXd::Zero(h, w);
  vm.stderr_values = Eigen::ArrayXXd::Zero(h, w);
  vm.domain.setConstant(h, w, false);

  auto read_grid = [&](Eigen::ArrayXXd& grid, bool set_domain) {
    for (int y = 0; y < h; ++y) {
      if (!std::getline(in, line)) throw ParseError("variance map truncated");
      std::istringstream row(line);
      std::string cell;
      for (int x = 0; x < w; ++x) {
        if (!(row >> cell)) throw ParseError("variance map row too short: " + line);
        if (cell == "#") continue;
        grid(y, x) = parse_real(cell);
        if (set_domain) vm.domain(y, x) = true;
      }
    }
  };
  if (line != "variance:") throw ParseError("variance map lacks its grid");
  read_grid(vm.values, true);
  if (vm.provenance == Provenance::MonteCarlo) {
    if (!std::getline(in, line) || line != "stderr:") throw ParseError("Monte-Carlo map lacks its stderr grid");
    read_grid(vm.stderr_values, false);
  }
  return {std::move(vm), std::move(meta)};
}

std::pair<VarianceMap, Metadata> read_variance_map(const std::string& path) {
  auto in = open_input(path);
  return read_variance_map(in);
}

nlohmann::json step_to_json(const TraceStep& s) {
  return {{"x", s.state.x},
          {"y", s.state.y},
          {"obs_key", std::to_string(s.key)},
          {"action", action_name(s.action)},
          {"source", source_name(s.source)},
          {"reward", s.reward},
          {"variance", s.variance}};
}

nlohmann::json trace_summary_json(const EpisodeTrace& t) {
  return {{"episode_id", t.episode_id},
          {"steps", t.steps.size()},
          {"total_return", t.total_return},
          {"expert_calls", t.expert_calls},
          {"outcome", outcome_name(t.outcome)}};
}

void write_trace(std::ostream& out, const EpisodeTrace& trace, const Metadata& meta) {
  nlohmann::json header = {{"record", "header"}, {"version", 1}};
  for (const auto& [k, v] : meta) header[k] = v;
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    nlohmann::json rec = step_to_json(trace.steps[i]);
    rec["record"] = "step";
    rec["index"] = i;
    out << rec.dump() << '\n';
  }
  nlohmann::json summary = trace_summary_json(trace);
  summary["record"] = "summary";
  out << summary.dump() << '\n';
}

void write_trace(const std::string& path, const EpisodeTrace& trace, const Metadata& meta) {
  with_output_file(path, [&](std::ostream& out) { write_trace(out, trace, meta); });
}

EpisodeTrace read_trace(std::istream& in) {
  EpisodeTrace t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    const std::string kind = rec.at("record");
    if (kind == "step") {
      TraceStep s;
      s.state = {rec.at("x").get<int>(), rec.at("y").get<int>()};
      s.key = parse_integer<ObsKey>(rec.at("obs_key").get<std::string>());
      auto a = parse_action(rec.at("action").get<std::string>());
      if (!a) throw ParseError("bad action in trace: " + line);
      s.action = *a;
      s.source = rec.at("source") == "expert" ? ActionSource::Expert : ActionSource::Agent;
      s.reward = rec.at("reward").get<double>();
      s.variance = rec.at("variance").get<double>();
      t.steps.push_back(s);
    } else if (kind == "summary") {
      t.episode_id = rec.at("episode_id").get<std::string>();
      t.total_return = rec.at("total_return").get<double>();
      t.expert_calls = rec.at("expert_calls").get<std::uint64_t>();
      const std::string o = rec.at("outcome");
      t.outcome = o == "Goal" ? Outcome::Goal : o == "Trap" ? Outcome::Trap
                : o == "StepLimit" ? Outcome::StepLimit : Outcome::Running;
    }
  }
  return t;
}

// ---------------------------------------------------------------- config files

std::map<std::string, std::string> parse_config(std::string_view text) {
  std::map<std::string, std::string> out;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("config line " + std::to_string(lineno) + ": unterminated section");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    out[section.empty() ? key : section + "." + key] = value;
  }
  return out;
}

std::map<std::string, std::string> load_config(const std::string& path) {
  auto in = open_input(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace hula
