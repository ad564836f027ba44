#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "srmt/grid.hpp"
#include "srmt/numkit/tensor.hpp"
#include "srmt/pathing.hpp"
#include "srmt/rewards.hpp"

namespace srmt::env {

enum class Mode { Classical, Lifelong };

enum class Action : int { Stay = 0, Up = 1, Down = 2, Left = 3, Right = 4 };
inline constexpr int kNumActions = 5;

Cell action_offset(Action a);
std::string to_string(Mode mode);
Mode mode_from_string(const std::string& name);

/// Egocentric 3×m×m tensor: obstacles(−1)/own path(+1), other agents,
/// goals. Entries are in {−1, 0, 1}.
using Observation = nk::Tensor;

struct AgentState {
  Cell position;
  Cell goal;
  bool active = true;
  std::optional<int> arrival_step;
  pathing::Path planned_path;
  int goals_reached = 0;
};

struct EnvConfig {
  Mode mode = Mode::Classical;
  int obs_size = 5;  ///< odd window diameter m
  int episode_length = 512;
};

struct EnvState {
  std::shared_ptr<const GridMap> map;
  std::vector<AgentState> agents;
  int step = 0;
  int episode_length = 512;
  Mode mode = Mode::Classical;
  int obs_size = 5;
  std::mt19937_64 rng;
  bool done = false;

  std::vector<int> active_agents() const;
  int total_goals_reached() const;
};

struct StepResult {
  /// One record per agent that acted, in ascending agent order.
  std::vector<Transition> transitions;
  /// Parallel to `transitions`: the agent's trajectory ends here.
  std::vector<char> done;
  bool episode_done = false;
  bool timeout = false;
};

/// Resolves simultaneous moves to a conflict-free fixed point: moves into
/// obstacles, contested cells, swaps, and cells whose occupant stays all
/// become Stay. Targets must be the current cell or a 4-neighbour.
std::vector<Cell> resolve_collisions(const GridMap& map, std::span<const Cell> positions,
                                     std::span<const Cell> targets);

Observation observe(const EnvState& state, int agent);
/// Writes the observation into `out` (3·m·m values).
void observe_into(const EnvState& state, int agent, std::span<double> out);

/// Decentralized PO-MAPF / lifelong MAPF environment.
class Environment {
 public:
  /// Starts a new episode; returns one observation per agent.
  std::vector<Observation> reset(std::shared_ptr<const GridMap> map, std::vector<Cell> starts, std::vector<Cell> goals,
                                 const EnvConfig& config, std::uint64_t seed);

  /// Applies one action per active agent (ascending agent order).
  StepResult step(std::span<const Action> joint_action);

  /// Observations of the currently active agents, ascending agent order.
  std::vector<Observation> observations() const;

  const EnvState& state() const { return state_; }
  EnvState& mutable_state() { return state_; }

  nlohmann::json to_json() const;
  /// Restores a state written by to_json(); `map` must be the same map.
  void restore(const nlohmann::json& doc, std::shared_ptr<const GridMap> map);

 private:
  Cell sample_goal(Cell exclude);
  void replan(AgentState& agent);

  EnvState state_;
  std::vector<Cell> free_cells_;
  rewards::DistanceFieldCache distances_;
};

/// One JSON-lines trace record for a completed step.
nlohmann::json trace_record(const EnvState& after, std::span<const Action> actions, const StepResult& result,
                            std::span<const double> rewards);

}  // namespace srmt::env
