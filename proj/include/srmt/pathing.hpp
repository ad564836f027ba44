#pragma once

#include <optional>
#include <vector>

#include "srmt/grid.hpp"

namespace srmt::pathing {

/// Cells from start to goal inclusive, consecutive cells 4-adjacent.
using Path = std::vector<Cell>;

/// A* with the Manhattan heuristic on the 4-connected grid.
///
/// Ties on f are broken by larger g first, then by expansion order
/// (Up, Down, Left, Right, insertion order), so equal inputs always give
/// the same path. Returns nullopt when `to` is unreachable or either end
/// is blocked.
std::optional<Path> shortest_path(const GridMap& map, Cell from, Cell to);

/// BFS distance from `source` to every cell; -1 for blocked or unreachable.
std::vector<int> distance_field(const GridMap& map, Cell source);

enum class ReplanOutcome { Kept, PrefixDropped, Replanned, Unreachable };

/// Keeps `path` coherent with the agent's current position and goal.
///
/// The stored path is kept if it already starts at `position`, trimmed by
/// one cell if the agent advanced onto its second cell, and recomputed
/// otherwise (including a goal change). An unreachable goal leaves `path`
/// empty.
ReplanOutcome replan_if_needed(const GridMap& map, Cell position, Cell goal, Path& path);

}  // namespace srmt::pathing
