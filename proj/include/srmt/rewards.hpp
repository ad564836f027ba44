#pragma once

#include <cstddef>
#include <list>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "srmt/grid.hpp"

namespace srmt {

/// Everything one agent's step exposes to reward computation.
struct Transition {
  int agent = 0;
  Cell old_position;
  Cell new_position;
  Cell goal;  ///< goal in force when the action was chosen
  int action = 0;
  bool moved = false;
  bool arrived = false;
  /// Executed move landed on the next cell of the planned path.
  bool followed_path = false;
  /// No path to the goal existed at the start of the step.
  bool path_unreachable = false;
  /// Shortest-path distances to `goal`; -1 if unreachable.
  int distance_before = -1;
  int distance_after = -1;

  bool moved_towards_goal() const {
    return distance_before >= 0 && distance_after >= 0 && distance_after < distance_before;
  }
};

}  // namespace srmt

namespace srmt::rewards {

enum class RewardScheme { Directional, Sparse, Dense, DirectionalNegative, MovingNegative, LifelongFollow };

inline constexpr RewardScheme kAllSchemes[] = {RewardScheme::Directional,         RewardScheme::Sparse,
                                               RewardScheme::Dense,               RewardScheme::DirectionalNegative,
                                               RewardScheme::MovingNegative,      RewardScheme::LifelongFollow};

std::string to_string(RewardScheme scheme);
/// Accepts the names printed by to_string; throws ConfigError otherwise.
RewardScheme scheme_from_string(const std::string& name);

struct RewardConfig {
  RewardScheme scheme = RewardScheme::Directional;
  /// LifelongFollow only: pay +1 on reaching a goal in addition to the
  /// follow reward. Off by default.
  bool lifelong_goal_bonus = false;
};

double compute_reward(RewardScheme scheme, const Transition& t);
double compute_reward(const RewardConfig& config, const Transition& t);

/// BFS distance fields keyed by goal cell, least-recently-used eviction.
/// Not thread-safe; each environment owns one.
class DistanceFieldCache {
 public:
  explicit DistanceFieldCache(std::size_t capacity = 256) : capacity_(capacity) {}

  /// Binds the cache to a map, dropping fields computed for another map.
  void bind(std::shared_ptr<const GridMap> map);
  int distance(Cell from, Cell goal);
  const std::vector<int>& field(Cell goal);
  std::size_t size() const { return fields_.size(); }

 private:
  std::shared_ptr<const GridMap> map_;
  std::size_t capacity_;
  std::list<std::size_t> order_;
  std::unordered_map<std::size_t, std::pair<std::vector<int>, std::list<std::size_t>::iterator>> fields_;
};

}  // namespace srmt::rewards
