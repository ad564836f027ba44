#include "srmt/rewards.hpp"

#include "srmt/pathing.hpp"

namespace srmt::rewards {

std::string to_string(RewardScheme scheme) {
  switch (scheme) {
    case RewardScheme::Directional: return "Directional";
    case RewardScheme::Sparse: return "Sparse";
    case RewardScheme::Dense: return "Dense";
    case RewardScheme::DirectionalNegative: return "DirectionalNegative";
    case RewardScheme::MovingNegative: return "MovingNegative";
    case RewardScheme::LifelongFollow: return "LifelongFollow";
  }
  return "?";
}

RewardScheme scheme_from_string(const std::string& name) {
  for (RewardScheme s : kAllSchemes)
    if (to_string(s) == name) return s;
  throw ConfigError("unknown reward scheme '" + name +
                    "' (expected Directional, Sparse, Dense, DirectionalNegative, MovingNegative or LifelongFollow)");
}

double compute_reward(RewardScheme scheme, const Transition& t) {
  if (scheme == RewardScheme::LifelongFollow) return t.followed_path ? 0.01 : 0.0;
  if (t.arrived) return 1.0;
  const bool towards = t.moved_towards_goal();
  switch (scheme) {
    case RewardScheme::Directional: return towards ? 0.005 : 0.0;
    case RewardScheme::Sparse: return 0.0;
    case RewardScheme::Dense: return -0.01;
    case RewardScheme::DirectionalNegative: return towards ? -0.005 : -0.01;
    // Moving towards the goal and any other move cost the same.
    case RewardScheme::MovingNegative: return towards || t.moved ? -0.01 : -0.005;
    case RewardScheme::LifelongFollow: break;
  }
  return 0.0;
}

double compute_reward(const RewardConfig& config, const Transition& t) {
  double r = compute_reward(config.scheme, t);
  if (config.scheme == RewardScheme::LifelongFollow && config.lifelong_goal_bonus && t.arrived) r += 1.0;
  return r;
}

void DistanceFieldCache::bind(std::shared_ptr<const GridMap> map) {
  if (map_ == map) return;
  map_ = std::move(map);
  fields_.clear();
  order_.clear();
}

const std::vector<int>& DistanceFieldCache::field(Cell goal) {
  if (!map_) throw ContractError("distance cache used before bind()");
  const std::size_t key = map_->index(goal);
  auto it = fields_.find(key);
  if (it != fields_.end()) {
    order_.splice(order_.begin(), order_, it->second.second);
    return it->second.first;
  }
  if (capacity_ > 0 && fields_.size() >= capacity_) {
    fields_.erase(order_.back());
    order_.pop_back();
  }
  order_.push_front(key);
  auto [pos, inserted] = fields_.emplace(key, std::make_pair(pathing::distance_field(*map_, goal), order_.begin()));
  return pos->second.first;
}

int DistanceFieldCache::distance(Cell from, Cell goal) {
  if (!map_ || map_->blocked(from) || map_->blocked(goal)) return -1;
  return field(goal)[map_->index(from)];
}

}  // namespace srmt::rewards
