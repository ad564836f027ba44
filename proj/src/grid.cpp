#include "srmt/grid.hpp"

#include <algorithm>

namespace srmt {

GridMap::GridMap(int width, int height, std::vector<std::uint8_t> blocked)
    : width_(width), height_(height), blocked_(std::move(blocked)) {
  if (width < 1 || height < 1) throw ConfigError("map dimensions must be positive");
  if (blocked_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
    throw ConfigError("obstacle grid size does not match " + std::to_string(width) + "x" + std::to_string(height));
  for (auto& b : blocked_) b = b ? 1 : 0;
}

GridMap GridMap::open(int width, int height) {
  return GridMap(width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, 0));
}

void GridMap::set_blocked(Cell c, bool value) {
  if (!in_bounds(c)) throw ContractError("set_blocked outside the map");
  blocked_[index(c)] = value ? 1 : 0;
}

std::size_t GridMap::free_count() const {
  return static_cast<std::size_t>(std::count(blocked_.begin(), blocked_.end(), std::uint8_t{0}));
}

std::vector<Cell> GridMap::free_cells() const {
  std::vector<Cell> out;
  for (std::size_t i = 0; i < blocked_.size(); ++i)
    if (!blocked_[i]) out.push_back(cell_at(i));
  return out;
}

void GridMap::validate() const {
  if (width_ < 1 || height_ < 1) throw ConfigError("map has no cells");
  if (free_count() == 0) throw ConfigError("map has no free cell");
}

}  // namespace srmt
