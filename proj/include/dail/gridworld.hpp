#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dail/errors.hpp"
#include "dail/rng.hpp"

namespace dail {

inline constexpr int kNumGoals = 10;
inline constexpr int kNumActions = 3;
inline constexpr int kNumOrientations = 4;

enum class Action : int { TurnLeft = 0, TurnRight = 1, Forward = 2 };

inline constexpr std::array<Action, kNumActions> kAllActions{Action::TurnLeft, Action::TurnRight,
                                                             Action::Forward};

inline int to_index(Action a) { return static_cast<int>(a); }

inline Action action_from_index(int i) {
  if (i < 0 || i >= kNumActions) throw IndexError("action index " + std::to_string(i));
  return static_cast<Action>(i);
}

enum class Orientation : int { N = 0, E = 1, S = 2, W = 3 };

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct EnvConfig {
  int width = 9;
  int height = 9;
  std::vector<Cell> goal_cells;
  Cell start_cell{4, 4};
  int max_step = 12;

  bool contains(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; }
  std::size_t observation_size() const {
    return static_cast<std::size_t>(width) * height * kNumOrientations;
  }
};

// 9x9 open room, agent starts in the centre. The goal layout is a project choice; the
// toy map's exact geometry is not published, so this list is ours. Farthest goal
// (0,8) is 10 moves from the start, inside the 12-step horizon.
inline EnvConfig default_env_config() {
  EnvConfig cfg;
  cfg.goal_cells = {{1, 1}, {4, 1}, {7, 1}, {1, 4}, {7, 4},
                    {1, 7}, {4, 7}, {7, 7}, {8, 0}, {0, 8}};
  return cfg;
}

struct EpisodeState {
  Cell agent_pos;
  Orientation orientation = Orientation::N;
  int step_count = 0;
  int goal_index = 0;
  int instruction_id = 0;
  bool done = false;
  friend bool operator==(const EpisodeState&, const EpisodeState&) = default;
};

struct StepResult {
  EpisodeState state;
  double reward = 0.0;
  bool done = false;
};

/// Hidden instruction -> goal table F. Values are drawn i.i.d. uniform over the goals.
struct InstructionMapping {
  std::vector<int> table;
  std::uint64_t seed = 0;

  int num_instructions() const { return static_cast<int>(table.size()); }
  bool contains(int id) const { return id >= 0 && id < num_instructions(); }
  int goal_of(int id) const {
    if (!contains(id)) throw UnknownInstruction("unknown instruction id " + std::to_string(id));
    return table[static_cast<std::size_t>(id)];
  }
};

inline InstructionMapping make_mapping(int num_instructions, std::uint64_t seed) {
  if (num_instructions < 1) throw InvalidArgument("num_instructions must be >= 1");
  InstructionMapping m;
  m.seed = seed;
  m.table.resize(static_cast<std::size_t>(num_instructions));
  Rng rng = make_rng(seed, 0x6d6170);  // "map"
  for (auto& g : m.table) g = static_cast<int>(uniform_below(rng, kNumGoals));
  return m;
}

namespace detail {

inline Cell forward_cell(Cell c, Orientation o) {
  switch (o) {
    case Orientation::N: return {c.x, c.y - 1};
    case Orientation::E: return {c.x + 1, c.y};
    case Orientation::S: return {c.x, c.y + 1};
    case Orientation::W: return {c.x - 1, c.y};
  }
  return c;
}

inline Orientation rotate(Orientation o, int delta) {
  return static_cast<Orientation>((static_cast<int>(o) + delta + kNumOrientations) % kNumOrientations);
}

}  // namespace detail

class GridWorld {
 public:
  explicit GridWorld(EnvConfig config) : config_(std::move(config)) { validate(config_); }

  const EnvConfig& config() const { return config_; }

  static void validate(const EnvConfig& cfg) {
    if (cfg.width < 1 || cfg.height < 1) throw InvalidArgument("grid dimensions must be positive");
    if (cfg.max_step < 1) throw InvalidArgument("max_step must be >= 1");
    if (!cfg.contains(cfg.start_cell)) throw InvalidArgument("start_cell outside grid");
    if (static_cast<int>(cfg.goal_cells.size()) != kNumGoals)
      throw InvalidArgument("expected exactly " + std::to_string(kNumGoals) + " goal cells");
    for (std::size_t i = 0; i < cfg.goal_cells.size(); ++i) {
      const Cell g = cfg.goal_cells[i];
      if (!cfg.contains(g)) throw InvalidArgument("goal " + std::to_string(i) + " outside grid");
      if (g == cfg.start_cell) throw InvalidArgument("goal " + std::to_string(i) + " equals start_cell");
      for (std::size_t j = 0; j < i; ++j)
        if (cfg.goal_cells[j] == g) throw InvalidArgument("duplicate goal cell " + std::to_string(i));
    }
    for (std::size_t i = 0; i < cfg.goal_cells.size(); ++i) {
      const int d = bfs_distance(cfg, cfg.start_cell, Orientation::N, cfg.goal_cells[i]);
      if (d < 0 || d > cfg.max_step - 1)
        throw InvalidArgument("goal " + std::to_string(i) + " not reachable within max_step - 1");
    }
  }

  /// Minimal number of actions (turns count) from (pos, orientation) to stand on `goal`;
  /// -1 when unreachable.
  static int bfs_distance(const EnvConfig& cfg, Cell pos, Orientation o, Cell goal) {
    if (pos == goal) return 0;
    const auto key = [&](Cell c, Orientation r) {
      return (static_cast<std::size_t>(c.y) * cfg.width + c.x) * kNumOrientations +
             static_cast<std::size_t>(r);
    };
    std::vector<int> dist(cfg.observation_size(), -1);
    std::deque<std::pair<Cell, Orientation>> queue;
    dist[key(pos, o)] = 0;
    queue.emplace_back(pos, o);
    while (!queue.empty()) {
      auto [c, r] = queue.front();
      queue.pop_front();
      const int d = dist[key(c, r)];
      for (Action a : kAllActions) {
        auto [nc, nr] = transition(cfg, c, r, a);
        if (dist[key(nc, nr)] >= 0) continue;
        if (nc == goal) return d + 1;
        dist[key(nc, nr)] = d + 1;
        queue.emplace_back(nc, nr);
      }
    }
    return -1;
  }

  static std::pair<Cell, Orientation> transition(const EnvConfig& cfg, Cell c, Orientation o, Action a) {
    switch (a) {
      case Action::TurnLeft: return {c, detail::rotate(o, -1)};
      case Action::TurnRight: return {c, detail::rotate(o, +1)};
      case Action::Forward: {
        const Cell n = detail::forward_cell(c, o);
        return {cfg.contains(n) ? n : c, o};
      }
    }
    return {c, o};
  }

  EpisodeState reset(const InstructionMapping& mapping, int instruction_id) const {
    EpisodeState s;
    s.goal_index = mapping.goal_of(instruction_id);
    s.instruction_id = instruction_id;
    s.agent_pos = config_.start_cell;
    s.orientation = Orientation::N;
    return s;
  }

  StepResult step(const EpisodeState& state, Action action) const {
    if (state.done) throw EpisodeFinished("step called on a finished episode");
    StepResult out{state, 0.0, false};
    auto [pos, o] = transition(config_, state.agent_pos, state.orientation, action);
    out.state.agent_pos = pos;
    out.state.orientation = o;
    out.state.step_count += 1;
    const bool success = pos == goal_cell(state);
    if (success)
      out.reward = 1.0 - 0.9 * static_cast<double>(out.state.step_count) / config_.max_step;
    out.done = success || out.state.step_count == config_.max_step;
    out.state.done = out.done;
    return out;
  }

  Cell goal_cell(const EpisodeState& state) const {
    return config_.goal_cells.at(static_cast<std::size_t>(state.goal_index));
  }

  /// First action of a shortest path to the goal; ties go to TurnLeft, then TurnRight.
  Action expert_action(const EpisodeState& state) const {
    if (state.done) throw EpisodeFinished("expert_action on a finished episode");
    const Cell goal = goal_cell(state);
    int best = std::numeric_limits<int>::max();
    std::optional<Action> choice;
    for (Action a : kAllActions) {
      auto [nc, nr] = transition(config_, state.agent_pos, state.orientation, a);
      const int d = bfs_distance(config_, nc, nr, goal);
      if (d >= 0 && d + 1 < best) {
        best = d + 1;
        choice = a;
      }
    }
    if (!choice || best > config_.max_step - state.step_count)
      throw NoPath("goal unreachable within the remaining steps");
    return *choice;
  }

  std::size_t observation_index(const EpisodeState& s) const {
    return (static_cast<std::size_t>(s.agent_pos.y) * config_.width + s.agent_pos.x) * kNumOrientations +
           static_cast<std::size_t>(s.orientation);
  }

  std::vector<double> observe(const EpisodeState& s) const {
    std::vector<double> v(config_.observation_size(), 0.0);
    v[observation_index(s)] = 1.0;
    return v;
  }

 private:
  EnvConfig config_;
};

// JSON: {"width":9,"height":9,"goal_cells":[[x,y],...],"start_cell":[x,y],"max_step":12}

inline nlohmann::ordered_json to_json(const EnvConfig& cfg) {
  nlohmann::ordered_json j;
  j["width"] = cfg.width;
  j["height"] = cfg.height;
  auto goals = nlohmann::ordered_json::array();
  for (const Cell& c : cfg.goal_cells) goals.push_back({c.x, c.y});
  j["goal_cells"] = goals;
  j["start_cell"] = {cfg.start_cell.x, cfg.start_cell.y};
  j["max_step"] = cfg.max_step;
  return j;
}

namespace detail {

inline Cell cell_from_json(const nlohmann::ordered_json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
    throw SchemaError(what + " must be an [x, y] integer pair");
  return {j[0].get<int>(), j[1].get<int>()};
}

}  // namespace detail

/// Missing keys fall back to the default config; unknown keys are rejected.
inline EnvConfig env_config_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw SchemaError("env config must be a JSON object");
  EnvConfig cfg = default_env_config();
  for (const auto& [key, value] : j.items()) {
    if (key == "width" || key == "height" || key == "max_step") {
      if (!value.is_number_integer()) throw SchemaError("env." + key + " must be an integer");
      (key == "width" ? cfg.width : key == "height" ? cfg.height : cfg.max_step) = value.get<int>();
    } else if (key == "start_cell") {
      cfg.start_cell = detail::cell_from_json(value, "env.start_cell");
    } else if (key == "goal_cells") {
      if (!value.is_array()) throw SchemaError("env.goal_cells must be an array");
      cfg.goal_cells.clear();
      for (const auto& c : value) cfg.goal_cells.push_back(detail::cell_from_json(c, "env.goal_cells[]"));
    } else {
      throw SchemaError("unknown env config key '" + key + "'");
    }
  }
  GridWorld::validate(cfg);
  return cfg;
}

inline EnvConfig load_env_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open env config " + path);
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("env config " + path + ": " + e.what());
  }
  return env_config_from_json(j);
}

}  // namespace dail
