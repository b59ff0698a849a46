#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hula/rng.hpp"

namespace hula {

/// Movement actions. The ordinal order is part of the contract: every
/// argmax in the library breaks ties towards the lowest ordinal.
enum class Action : std::uint8_t { Up = 0, Down = 1, Left = 2, Right = 3 };

inline constexpr int kNumMoves = 4;
inline constexpr std::array<Action, kNumMoves> kMoves{Action::Up, Action::Down, Action::Left,
                                                      Action::Right};

constexpr int ordinal(Action a) { return static_cast<int>(a); }
constexpr Action action_from_ordinal(int i) { return static_cast<Action>(i); }

std::string_view action_name(Action a);
std::optional<Action> parse_action(std::string_view name);

struct Coord {
  int x = 0;
  int y = 0;
  friend constexpr auto operator<=>(const Coord&, const Coord&) = default;
};

/// Grid offset for an action; y grows downwards (row order of the map file).
constexpr Coord offset(Action a) {
  switch (a) {
    case Action::Up: return {0, -1};
    case Action::Down: return {0, 1};
    case Action::Left: return {-1, 0};
    case Action::Right: return {1, 0};
  }
  return {0, 0};
}

enum class CellKind : std::uint8_t { Free, Wall, Trap, Goal };

class GridMap {
 public:
  GridMap(std::string name, int width, int height, std::vector<CellKind> cells, Coord start);

  const std::string& name() const { return name_; }
  int width() const { return width_; }
  int height() const { return height_; }
  Coord start() const { return start_; }

  bool in_bounds(Coord c) const { return c.x >= 0 && c.y >= 0 && c.x < width_ && c.y < height_; }
  CellKind at(Coord c) const { return cells_[index(c)]; }
  int index(Coord c) const { return c.y * width_ + c.x; }
  Coord coord(int index) const { return {index % width_, index / width_}; }
  int num_cells() const { return width_ * height_; }

  /// Free cells reachable from the start through any sequence of moves,
  /// in row-major order.
  std::vector<Coord> reachable_free_cells() const;

  /// Grid rows in the map-file legend ('S' marks the start).
  std::vector<std::string> rows() const;

 private:
  std::string name_;
  int width_;
  int height_;
  std::vector<CellKind> cells_;
  Coord start_;
};

/// Parses the ASCII map format: an optional `name: <id>` header followed by
/// equal-length rows over the legend `.` free, `#` wall, `T` trap, `G` goal,
/// `S` start (a free cell).
GridMap parse_map(std::string_view text);
GridMap load_map(const std::string& path);

enum class SlipMode : std::uint8_t {
  Inclusive,  // slip direction uniform over all four moves
  Exclusive,  // slip direction uniform over the three other moves
};

struct EnvParams {
  double psi = 0.45;
  double step_penalty = -0.1;
  double trap_reward = -10.0;
  double goal_reward = 10.0;
  double gamma = 0.95;
  int max_steps = 200;
  SlipMode slip = SlipMode::Inclusive;

  void validate() const;
  /// Probability that a non-forced move ends up going in direction `actual`.
  double move_probability(Action intended, Action actual) const;
};

enum class Outcome : std::uint8_t { Running, Goal, Trap, StepLimit };
std::string_view outcome_name(Outcome o);

struct EnvState {
  std::shared_ptr<const GridMap> map;
  Coord pos;
  int steps_taken = 0;
  Outcome status = Outcome::Running;
  Rng rng;

  bool running() const { return status == Outcome::Running; }
};

EnvState reset(std::shared_ptr<const GridMap> map, std::uint64_t seed);
EnvState reset_at(std::shared_ptr<const GridMap> map, Coord pos, std::uint64_t seed);

struct StepResult {
  double reward = 0.0;
  Outcome status = Outcome::Running;
  /// Episode ended in a Goal or Trap cell (truncation by the step cap is not terminal).
  bool terminal() const { return status == Outcome::Goal || status == Outcome::Trap; }
  bool done() const { return status != Outcome::Running; }
};

/// Deterministic part of the dynamics: where a move from `from` lands.
/// Walls and the map boundary leave the agent in place.
Coord move_target(const GridMap& map, Coord from, Action a);

/// Advances the episode. A forced move (expert action) never slips and draws
/// no random numbers.
StepResult step(EnvState& state, Action action, bool forced, const EnvParams& params);

// ---------------------------------------------------------------- observations

enum class ObsMode : std::uint8_t { Full, Patch };
std::string_view obs_mode_name(ObsMode m);
std::optional<ObsMode> parse_obs_mode(std::string_view s);

enum class PatchCell : std::uint8_t { Free, Wall, Trap, Goal, OutOfBounds };

inline constexpr int kPatchRadius = 2;
inline constexpr int kPatchSide = 2 * kPatchRadius + 1;

struct FullStateObs {
  Coord pos;
  friend bool operator==(const FullStateObs&, const FullStateObs&) = default;
};

struct PatchObs {
  std::array<PatchCell, kPatchSide * kPatchSide> cells{};  // row-major
  PatchCell at(int dx, int dy) const {
    return cells[(dy + kPatchRadius) * kPatchSide + (dx + kPatchRadius)];
  }
  friend bool operator==(const PatchObs&, const PatchObs&) = default;
};

using Observation = std::variant<FullStateObs, PatchObs>;

Observation observe(const GridMap& map, Coord pos, ObsMode mode);
inline Observation observe(const EnvState& s, ObsMode mode) { return observe(*s.map, s.pos, mode); }

using ObsKey = std::uint64_t;

/// Canonical encoding. Full-state keys carry the top bit; patch keys are the
/// base-5 number spelled by the 25 patch cells (< 5^25 < 2^59).
ObsKey obs_key(const Observation& obs);
Observation decode_obs_key(ObsKey key);

inline ObsKey key_at(const GridMap& map, Coord pos, ObsMode mode) {
  return obs_key(observe(map, pos, mode));
}

}  // namespace hula
