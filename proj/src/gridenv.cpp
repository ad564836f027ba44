#include "srmt/gridenv.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

namespace srmt::env {

Cell action_offset(Action a) {
  switch (a) {
    case Action::Stay: return {0, 0};
    case Action::Up: return {-1, 0};
    case Action::Down: return {1, 0};
    case Action::Left: return {0, -1};
    case Action::Right: return {0, 1};
  }
  throw ContractError("invalid action");
}

std::string to_string(Mode mode) { return mode == Mode::Classical ? "classical" : "lifelong"; }

Mode mode_from_string(const std::string& name) {
  if (name == "classical") return Mode::Classical;
  if (name == "lifelong") return Mode::Lifelong;
  throw ConfigError("unknown mode '" + name + "' (expected classical or lifelong)");
}

std::vector<int> EnvState::active_agents() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < agents.size(); ++i)
    if (agents[i].active) out.push_back(static_cast<int>(i));
  return out;
}

int EnvState::total_goals_reached() const {
  int total = 0;
  for (const auto& a : agents) total += a.goals_reached;
  return total;
}

// ---------------------------------------------------------------------------

std::vector<Cell> resolve_collisions(const GridMap& map, std::span<const Cell> positions,
                                     std::span<const Cell> targets) {
  if (positions.size() != targets.size()) throw ContractError("resolve_collisions: one target per agent required");
  const std::size_t n = positions.size();
  std::vector<Cell> out(targets.begin(), targets.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (manhattan(positions[i], targets[i]) > 1)
      throw ContractError("resolve_collisions: target is not the current cell or a neighbour");
    if (map.blocked(out[i])) out[i] = positions[i];
  }

  std::unordered_map<std::size_t, int> occupant;
  for (std::size_t i = 0; i < n; ++i) occupant.emplace(map.index(positions[i]), static_cast<int>(i));

  std::unordered_map<std::size_t, int> demand;
  for (bool changed = true; changed;) {
    changed = false;
    demand.clear();
    for (std::size_t i = 0; i < n; ++i) ++demand[map.index(out[i])];
    for (std::size_t i = 0; i < n; ++i)
      if (out[i] != positions[i] && demand[map.index(out[i])] > 1) {
        out[i] = positions[i];
        changed = true;
      }
    for (std::size_t i = 0; i < n; ++i) {
      if (out[i] == positions[i]) continue;
      auto it = occupant.find(map.index(out[i]));
      if (it == occupant.end()) continue;
      const auto j = static_cast<std::size_t>(it->second);
      if (out[j] == positions[i]) {
        out[i] = positions[i];
        out[j] = positions[j];
        changed = true;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void observe_into(const EnvState& state, int agent, std::span<double> out) {
  const auto& self = state.agents.at(static_cast<std::size_t>(agent));
  if (!self.active) throw ContractError("observe: agent " + std::to_string(agent) + " is inactive");
  const int m = state.obs_size;
  const int r = m / 2;
  const std::size_t plane = static_cast<std::size_t>(m) * m;
  if (out.size() != 3 * plane) throw DimensionError("observe: output buffer has wrong size");
  std::fill(out.begin(), out.end(), 0.0);
  const GridMap& map = *state.map;
  const Cell origin{self.position.row - r, self.position.col - r};
  auto inside = [&](Cell c) {
    return c.row >= origin.row && c.row < origin.row + m && c.col >= origin.col && c.col < origin.col + m;
  };
  auto at = [&](int channel, Cell c) -> double& {
    return out[static_cast<std::size_t>(channel) * plane + static_cast<std::size_t>(c.row - origin.row) * m +
               static_cast<std::size_t>(c.col - origin.col)];
  };

  for (int dr = 0; dr < m; ++dr)
    for (int dc = 0; dc < m; ++dc)
      if (map.blocked({origin.row + dr, origin.col + dc})) out[static_cast<std::size_t>(dr) * m + dc] = -1.0;
  for (Cell c : self.planned_path)
    if (inside(c)) at(0, c) = 1.0;

  for (std::size_t j = 0; j < state.agents.size(); ++j) {
    if (static_cast<int>(j) == agent || !state.agents[j].active) continue;
    const auto& other = state.agents[j];
    if (inside(other.position)) at(1, other.position) = 1.0;
    if (inside(other.goal)) at(2, other.goal) = 1.0;
  }

  const int dy = self.goal.row - self.position.row;
  const int dx = self.goal.col - self.position.col;
  const int reach = std::max(std::abs(dy), std::abs(dx));
  if (reach > r) {
    const double s = static_cast<double>(r) / reach;
    const int py = static_cast<int>(std::lround(dy * s));
    const int px = static_cast<int>(std::lround(dx * s));
    out[2 * plane + static_cast<std::size_t>(r + py) * m + static_cast<std::size_t>(r + px)] = 1.0;
  }
}

Observation observe(const EnvState& state, int agent) {
  Observation obs(nk::Shape{3, state.obs_size, state.obs_size});
  observe_into(state, agent, obs.data());
  return obs;
}

// ---------------------------------------------------------------------------

std::vector<Observation> Environment::reset(std::shared_ptr<const GridMap> map, std::vector<Cell> starts,
                                            std::vector<Cell> goals, const EnvConfig& config, std::uint64_t seed) {
  if (!map) throw ConfigError("reset: no map");
  map->validate();
  if (config.obs_size < 1 || config.obs_size % 2 == 0) throw ConfigError("observation size must be odd and positive");
  if (config.episode_length < 1) throw ConfigError("episode length must be positive");
  if (starts.empty()) throw ConfigError("reset: no agents");
  if (starts.size() != goals.size()) throw ConfigError("reset: starts and goals differ in count");
  for (std::size_t i = 0; i < starts.size(); ++i) {
    if (map->blocked(starts[i]))
      throw ConfigError("start of agent " + std::to_string(i) + " is not a free cell");
    if (map->blocked(goals[i])) throw ConfigError("goal of agent " + std::to_string(i) + " is not a free cell");
    if (starts[i] == goals[i]) throw ConfigError("agent " + std::to_string(i) + " starts on its goal");
    for (std::size_t j = 0; j < i; ++j)
      if (starts[i] == starts[j])
        throw ConfigError("agents " + std::to_string(j) + " and " + std::to_string(i) + " share a start cell");
  }

  state_ = EnvState{};
  state_.map = std::move(map);
  state_.episode_length = config.episode_length;
  state_.mode = config.mode;
  state_.obs_size = config.obs_size;
  state_.rng.seed(seed);
  free_cells_ = state_.map->free_cells();
  distances_.bind(state_.map);
  for (std::size_t i = 0; i < starts.size(); ++i) {
    AgentState a;
    a.position = starts[i];
    a.goal = goals[i];
    replan(a);
    state_.agents.push_back(std::move(a));
  }
  return observations();
}

Cell Environment::sample_goal(Cell exclude) {
  if (free_cells_.size() < 2) return exclude;
  std::uniform_int_distribution<std::size_t> pick(0, free_cells_.size() - 2);
  std::size_t k = pick(state_.rng);
  const auto skip = static_cast<std::size_t>(
      std::lower_bound(free_cells_.begin(), free_cells_.end(), exclude) - free_cells_.begin());
  if (k >= skip) ++k;
  return free_cells_[k];
}

void Environment::replan(AgentState& agent) {
  pathing::replan_if_needed(*state_.map, agent.position, agent.goal, agent.planned_path);
}

StepResult Environment::step(std::span<const Action> joint_action) {
  if (state_.done || state_.step >= state_.episode_length) throw ContractError("step() after the episode ended");
  const auto active = state_.active_agents();
  if (joint_action.size() != active.size())
    throw ContractError("expected " + std::to_string(active.size()) + " actions, got " +
                        std::to_string(joint_action.size()));

  std::vector<Cell> positions, targets;
  for (std::size_t k = 0; k < active.size(); ++k) {
    const Cell pos = state_.agents[static_cast<std::size_t>(active[k])].position;
    positions.push_back(pos);
    targets.push_back(pos + action_offset(joint_action[k]));
  }
  const auto final_cells = resolve_collisions(*state_.map, positions, targets);

  StepResult result;
  state_.step += 1;
  for (std::size_t k = 0; k < active.size(); ++k) {
    auto& agent = state_.agents[static_cast<std::size_t>(active[k])];
    Transition t;
    t.agent = active[k];
    t.old_position = positions[k];
    t.new_position = final_cells[k];
    t.goal = agent.goal;
    t.action = static_cast<int>(joint_action[k]);
    t.moved = t.new_position != t.old_position;
    t.path_unreachable = agent.planned_path.empty();
    t.followed_path = agent.planned_path.size() >= 2 && agent.planned_path[1] == t.new_position;
    t.distance_before = distances_.distance(t.old_position, t.goal);
    t.distance_after = distances_.distance(t.new_position, t.goal);
    t.arrived = t.new_position == agent.goal;
    agent.position = t.new_position;
    if (t.arrived) {
      agent.goals_reached += 1;
      if (state_.mode == Mode::Classical) {
        agent.active = false;
        agent.arrival_step = state_.step;
        agent.planned_path.clear();
      } else {
        agent.goal = sample_goal(agent.position);
      }
    }
    if (agent.active) replan(agent);
    result.transitions.push_back(t);
  }

  result.timeout = state_.step >= state_.episode_length;
  const bool all_arrived = state_.mode == Mode::Classical && state_.active_agents().empty();
  result.episode_done = result.timeout || all_arrived;
  state_.done = result.episode_done;
  for (const auto& t : result.transitions)
    result.done.push_back(result.episode_done || (state_.mode == Mode::Classical && t.arrived));
  return result;
}

std::vector<Observation> Environment::observations() const {
  std::vector<Observation> out;
  for (int i : state_.active_agents()) out.push_back(observe(state_, i));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json cell_json(Cell c) { return nlohmann::json::array({c.row, c.col}); }
Cell cell_from(const nlohmann::json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

}  // namespace

nlohmann::json Environment::to_json() const {
  nlohmann::json doc;
  doc["step"] = state_.step;
  doc["episode_length"] = state_.episode_length;
  doc["mode"] = to_string(state_.mode);
  doc["obs_size"] = state_.obs_size;
  doc["done"] = state_.done;
  std::ostringstream rng;
  rng << state_.rng;
  doc["rng"] = rng.str();
  auto& agents = doc["agents"] = nlohmann::json::array();
  for (const auto& a : state_.agents) {
    nlohmann::json aj{{"position", cell_json(a.position)},
                      {"goal", cell_json(a.goal)},
                      {"active", a.active},
                      {"goals_reached", a.goals_reached}};
    if (a.arrival_step) aj["arrival_step"] = *a.arrival_step;
    agents.push_back(std::move(aj));
  }
  return doc;
}

void Environment::restore(const nlohmann::json& doc, std::shared_ptr<const GridMap> map) {
  state_ = EnvState{};
  state_.map = std::move(map);
  state_.step = doc.at("step").get<int>();
  state_.episode_length = doc.at("episode_length").get<int>();
  state_.mode = mode_from_string(doc.at("mode").get<std::string>());
  state_.obs_size = doc.at("obs_size").get<int>();
  state_.done = doc.at("done").get<bool>();
  std::istringstream rng(doc.at("rng").get<std::string>());
  rng >> state_.rng;
  free_cells_ = state_.map->free_cells();
  distances_.bind(state_.map);
  for (const auto& aj : doc.at("agents")) {
    AgentState a;
    a.position = cell_from(aj.at("position"));
    a.goal = cell_from(aj.at("goal"));
    a.active = aj.at("active").get<bool>();
    a.goals_reached = aj.at("goals_reached").get<int>();
    if (aj.contains("arrival_step")) a.arrival_step = aj["arrival_step"].get<int>();
    if (a.active) replan(a);
    state_.agents.push_back(std::move(a));
  }
}

nlohmann::json trace_record(const EnvState& after, std::span<const Action> actions, const StepResult& result,
                            std::span<const double> rewards) {
  nlohmann::json rec;
  rec["kind"] = "step";
  rec["step"] = after.step;
  auto& pos = rec["positions"] = nlohmann::json::array();
  auto& goals = rec["goals"] = nlohmann::json::array();
  auto& active = rec["active"] = nlohmann::json::array();
  for (const auto& a : after.agents) {
    pos.push_back(cell_json(a.position));
    goals.push_back(cell_json(a.goal));
    active.push_back(a.active);
  }
  auto& acts = rec["actions"] = nlohmann::json::array();
  auto& rew = rec["rewards"] = nlohmann::json::array();
  auto& arrivals = rec["arrivals"] = nlohmann::json::array();
  for (std::size_t k = 0; k < result.transitions.size(); ++k) {
    const auto& t = result.transitions[k];
    acts.push_back({{"agent", t.agent}, {"action", k < actions.size() ? static_cast<int>(actions[k]) : t.action}});
    rew.push_back({{"agent", t.agent}, {"reward", k < rewards.size() ? rewards[k] : 0.0}});
    if (t.arrived) arrivals.push_back(t.agent);
  }
  rec["episode_done"] = result.episode_done;
  return rec;
}

}  // namespace srmt::env
