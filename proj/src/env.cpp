#include "hula/env.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <sstream>

#include "hula/errors.hpp"

namespace hula {

std::string_view action_name(Action a) {
  switch (a) {
    case Action::Up: return "Up";
    case Action::Down: return "Down";
    case Action::Left: return "Left";
    case Action::Right: return "Right";
  }
  return "?";
}

std::optional<Action> parse_action(std::string_view name) {
  for (Action a : kMoves) {
    if (action_name(a) == name) return a;
  }
  return std::nullopt;
}

std::string_view outcome_name(Outcome o) {
  switch (o) {
    case Outcome::Running: return "Running";
    case Outcome::Goal: return "Goal";
    case Outcome::Trap: return "Trap";
    case Outcome::StepLimit: return "StepLimit";
  }
  return "?";
}

std::string_view obs_mode_name(ObsMode m) { return m == ObsMode::Full ? "full" : "patch"; }

std::optional<ObsMode> parse_obs_mode(std::string_view s) {
  if (s == "full") return ObsMode::Full;
  if (s == "patch") return ObsMode::Patch;
  return std::nullopt;
}

// ---------------------------------------------------------------- GridMap

GridMap::GridMap(std::string name, int width, int height, std::vector<CellKind> cells, Coord start)
    : name_(std::move(name)), width_(width), height_(height), cells_(std::move(cells)), start_(start) {
  if (width_ <= 0 || height_ <= 0) throw ValidationError("map must have positive dimensions");
  if (static_cast<int>(cells_.size()) != width_ * height_)
    throw ValidationError("cell count does not match dimensions");
  if (!in_bounds(start_) || at(start_) != CellKind::Free)
    throw ValidationError("start must be a free cell inside the map");
  if (std::none_of(cells_.begin(), cells_.end(), [](CellKind k) { return k == CellKind::Goal; }))
    throw ValidationError("map '" + name_ + "' has no goal cell");
}

std::vector<Coord> GridMap::reachable_free_cells() const {
  std::vector<char> seen(cells_.size(), 0);
  std::deque<Coord> frontier{start_};
  seen[index(start_)] = 1;
  while (!frontier.empty()) {
    Coord c = frontier.front();
    frontier.pop_front();
    for (Action a : kMoves) {
      Coord n = move_target(*this, c, a);
      if (seen[index(n)] || at(n) != CellKind::Free) continue;
      seen[index(n)] = 1;
      frontier.push_back(n);
    }
  }
  std::vector<Coord> out;
  for (int i = 0; i < num_cells(); ++i) {
    if (seen[i]) out.push_back(coord(i));
  }
  return out;
}

std::vector<std::string> GridMap::rows() const {
  std::vector<std::string> out(height_, std::string(width_, '.'));
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      char ch = '.';
      switch (at({x, y})) {
        case CellKind::Free: ch = '.'; break;
        case CellKind::Wall: ch = '#'; break;
        case CellKind::Trap: ch = 'T'; break;
        case CellKind::Goal: ch = 'G'; break;
      }
      if (Coord{x, y} == start_) ch = 'S';
      out[y][x] = ch;
    }
  }
  return out;
}

GridMap parse_map(std::string_view text) {
  std::string name = "unnamed";
  std::vector<std::string> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first && line.rfind("name:", 0) == 0) {
      name = line.substr(5);
      name.erase(0, name.find_first_not_of(" \t"));
      name.erase(name.find_last_not_of(" \t") + 1);
      first = false;
      continue;
    }
    first = false;
    rows.push_back(line);
  }
  while (!rows.empty() && rows.back().empty()) rows.pop_back();
  if (rows.empty()) throw ParseError("map has no grid rows");

  const int width = static_cast<int>(rows.front().size());
  const int height = static_cast<int>(rows.size());
  if (width == 0) throw ParseError("map rows are empty");

  std::vector<CellKind> cells;
  cells.reserve(static_cast<std::size_t>(width) * height);
  std::optional<Coord> start;
  int starts = 0;
  for (int y = 0; y < height; ++y) {
    if (static_cast<int>(rows[y].size()) != width)
      throw ParseError("ragged map: row " + std::to_string(y) + " has length " +
                       std::to_string(rows[y].size()) + ", expected " + std::to_string(width));
    for (int x = 0; x < width; ++x) {
      switch (rows[y][x]) {
        case '.': cells.push_back(CellKind::Free); break;
        case '#': cells.push_back(CellKind::Wall); break;
        case 'T': cells.push_back(CellKind::Trap); break;
        case 'G': cells.push_back(CellKind::Goal); break;
        case 'S':
          cells.push_back(CellKind::Free);
          start = Coord{x, y};
          ++starts;
          break;
        default:
          throw ParseError(std::string("unknown map symbol '") + rows[y][x] + "' at row " +
                           std::to_string(y));
      }
    }
  }
  if (std::none_of(cells.begin(), cells.end(), [](CellKind k) { return k == CellKind::Goal; }))
    throw ValidationError("map '" + name + "' has no goal cell");
  if (starts != 1)
    throw ValidationError("map '" + name + "' must have exactly one start, found " +
                          std::to_string(starts));
  return GridMap(name, width, height, std::move(cells), *start);
}

GridMap load_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open map file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_map(buf.str());
}

// ---------------------------------------------------------------- dynamics

void EnvParams::validate() const {
  if (!(psi >= 0.0 && psi <= 1.0)) throw ValidationError("psi must lie in [0, 1]");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma must lie in (0, 1]");
  if (max_steps < 1) throw ValidationError("max_steps must be >= 1");
}

double EnvParams::move_probability(Action intended, Action actual) const {
  if (slip == SlipMode::Inclusive) {
    return (intended == actual ? psi : 0.0) + (1.0 - psi) / kNumMoves;
  }
  return intended == actual ? psi : (1.0 - psi) / (kNumMoves - 1);
}

EnvState reset(std::shared_ptr<const GridMap> map, std::uint64_t seed) {
  Coord start = map->start();
  return reset_at(std::move(map), start, seed);
}

EnvState reset_at(std::shared_ptr<const GridMap> map, Coord pos, std::uint64_t seed) {
  if (!map->in_bounds(pos) || map->at(pos) != CellKind::Free)
    throw ValidationError("episode must start on a free cell");
  EnvState s{std::move(map), pos, 0, Outcome::Running, Rng(seed)};
  return s;
}

Coord move_target(const GridMap& map, Coord from, Action a) {
  Coord d = offset(a);
  Coord to{from.x + d.x, from.y + d.y};
  if (!map.in_bounds(to) || map.at(to) == CellKind::Wall) return from;
  return to;
}

namespace {

Action sample_direction(Action intended, const EnvParams& params, Rng& rng) {
  if (uniform01(rng) < params.psi) return intended;
  if (params.slip == SlipMode::Inclusive) return action_from_ordinal(uniform_int(rng, kNumMoves));
  int k = uniform_int(rng, kNumMoves - 1);
  if (k >= ordinal(intended)) ++k;
  return action_from_ordinal(k);
}

}  // namespace

StepResult step(EnvState& state, Action action, bool forced, const EnvParams& params) {
  if (!state.running()) throw IllegalTransition("step on a finished episode");
  const GridMap& map = *state.map;
  Action actual = forced ? action : sample_direction(action, params, state.rng);
  state.pos = move_target(map, state.pos, actual);
  ++state.steps_taken;

  StepResult r;
  r.reward = params.step_penalty;
  switch (map.at(state.pos)) {
    case CellKind::Trap:
      r.reward += params.trap_reward;
      r.status = Outcome::Trap;
      break;
    case CellKind::Goal:
      r.reward += params.goal_reward;
      r.status = Outcome::Goal;
      break;
    default:
      r.status = state.steps_taken >= params.max_steps ? Outcome::StepLimit : Outcome::Running;
      break;
  }
  state.status = r.status;
  return r;
}

// ---------------------------------------------------------------- observations

Observation observe(const GridMap& map, Coord pos, ObsMode mode) {
  if (mode == ObsMode::Full) return FullStateObs{pos};
  PatchObs p;
  for (int dy = -kPatchRadius; dy <= kPatchRadius; ++dy) {
    for (int dx = -kPatchRadius; dx <= kPatchRadius; ++dx) {
      Coord c{pos.x + dx, pos.y + dy};
      PatchCell v = PatchCell::OutOfBounds;
      if (map.in_bounds(c)) v = static_cast<PatchCell>(map.at(c));
      p.cells[(dy + kPatchRadius) * kPatchSide + (dx + kPatchRadius)] = v;
    }
  }
  return p;
}

namespace {
constexpr ObsKey kFullTag = ObsKey{1} << 63;
}

ObsKey obs_key(const Observation& obs) {
  if (const auto* f = std::get_if<FullStateObs>(&obs)) {
    return kFullTag | (static_cast<ObsKey>(static_cast<std::uint32_t>(f->pos.y)) << 31) |
           static_cast<std::uint32_t>(f->pos.x);
  }
  const auto& p = std::get<PatchObs>(obs);
  ObsKey k = 0;
  for (PatchCell c : p.cells) k = k * 5 + static_cast<ObsKey>(c);
  return k;
}

Observation decode_obs_key(ObsKey key) {
  if (key & kFullTag) {
    return FullStateObs{{static_cast<int>(key & 0x7fffffffULL), static_cast<int>((key & ~kFullTag) >> 31)}};
  }
  PatchObs p;
  for (int i = kPatchSide * kPatchSide - 1; i >= 0; --i) {
    p.cells[i] = static_cast<PatchCell>(key % 5);
    key /= 5;
  }
  return p;
}

}  // namespace hula
