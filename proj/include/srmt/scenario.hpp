#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "srmt/grid.hpp"

namespace srmt {

/// Where training and evaluation maps come from.
struct MapSourceConfig {
  std::string kind = "bottleneck";  ///< bottleneck | random | maze | files
  // bottleneck
  int corridor_min = 3;
  int corridor_max = 30;
  int room_size = 5;
  bool fixed_placement = false;
  // random / maze
  int width = 20;
  int height = 20;
  double density = 0.3;
  // files: map JSON (instances keep their starts/goals) or MovingAI .map
  std::vector<std::string> files;
  int map_count = 16;
  int agents = 2;

  std::vector<std::string> problems() const;
  nlohmann::json to_json() const;
  static MapSourceConfig from_json(const nlohmann::json& doc, std::vector<std::string>& errors);
};

struct Scenario {
  std::size_t map_index = 0;
  std::shared_ptr<const GridMap> map;
  std::vector<Cell> starts;
  std::vector<Cell> goals;
};

/// A fixed set of maps drawn once from a seed; episodes pick a map and
/// place agents on it.
class ScenarioPool {
 public:
  ScenarioPool(const MapSourceConfig& config, std::uint64_t seed);

  std::size_t size() const { return maps_.size(); }
  const std::shared_ptr<const GridMap>& map(std::size_t i) const { return maps_.at(i); }
  /// Bottleneck corridor length of map i (0 for other kinds).
  int corridor_length(std::size_t i) const { return lengths_.empty() ? 0 : lengths_.at(i); }
  const MapSourceConfig& config() const { return config_; }

  /// Start/goal placement on map `index`, a pure function of the seed.
  Scenario draw(std::size_t index, std::uint64_t seed) const;

 private:
  MapSourceConfig config_;
  std::vector<std::shared_ptr<const GridMap>> maps_;
  std::vector<int> lengths_;
  std::vector<std::vector<Cell>> fixed_starts_, fixed_goals_;
};

/// `n` starts and `n` goals on 2n distinct free cells.
void place_agents(const GridMap& map, int n, std::uint64_t seed, std::vector<Cell>& starts, std::vector<Cell>& goals);

}  // namespace srmt
