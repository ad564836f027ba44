#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "srmt/errors.hpp"

namespace srmt {

struct Cell {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

inline Cell operator+(Cell a, Cell b) { return {a.row + b.row, a.col + b.col}; }
inline int manhattan(Cell a, Cell b) {
  return (a.row > b.row ? a.row - b.row : b.row - a.row) + (a.col > b.col ? a.col - b.col : b.col - a.col);
}

/// Static obstacle grid. Cells outside the map behave as obstacles.
class GridMap {
 public:
  GridMap() = default;
  /// `blocked` is row-major, height×width, nonzero = obstacle.
  GridMap(int width, int height, std::vector<std::uint8_t> blocked);
  static GridMap open(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t cells() const { return blocked_.size(); }

  bool in_bounds(Cell c) const { return c.row >= 0 && c.col >= 0 && c.row < height_ && c.col < width_; }
  bool blocked(Cell c) const { return !in_bounds(c) || blocked_[index(c)] != 0; }
  bool is_free(Cell c) const { return !blocked(c); }
  void set_blocked(Cell c, bool value);

  std::size_t index(Cell c) const {
    return static_cast<std::size_t>(c.row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(c.col);
  }
  Cell cell_at(std::size_t index) const {
    return {static_cast<int>(index / static_cast<std::size_t>(width_)),
            static_cast<int>(index % static_cast<std::size_t>(width_))};
  }

  std::size_t free_count() const;
  std::vector<Cell> free_cells() const;
  const std::vector<std::uint8_t>& raw() const { return blocked_; }

  /// Throws ConfigError unless the map has at least one free cell.
  void validate() const;

  friend bool operator==(const GridMap& a, const GridMap& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.blocked_ == b.blocked_;
  }

  std::string name;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> blocked_;
};

/// 4-neighbour offsets in the fixed expansion order Up, Down, Left, Right.
inline constexpr Cell kNeighbourOffsets[4] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};

}  // namespace srmt
