#include "srmt/pathing.hpp"

#include <algorithm>
#include <cstdint>
#include <deque>
#include <queue>

namespace srmt::pathing {

namespace {

struct OpenEntry {
  int f;
  int g;
  std::uint64_t seq;
  std::size_t index;
};

// Min-heap order: smaller f, then larger g, then earlier insertion.
struct Later {
  bool operator()(const OpenEntry& a, const OpenEntry& b) const {
    if (a.f != b.f) return a.f > b.f;
    if (a.g != b.g) return a.g < b.g;
    return a.seq > b.seq;
  }
};

}  // namespace

std::optional<Path> shortest_path(const GridMap& map, Cell from, Cell to) {
  if (map.blocked(from) || map.blocked(to)) return std::nullopt;
  if (from == to) return Path{from};

  const std::size_t n = map.cells();
  std::vector<int> g(n, -1);
  std::vector<std::size_t> parent(n, n);
  std::vector<char> closed(n, 0);
  std::priority_queue<OpenEntry, std::vector<OpenEntry>, Later> open;
  std::uint64_t seq = 0;

  const std::size_t start = map.index(from), goal = map.index(to);
  g[start] = 0;
  open.push({manhattan(from, to), 0, seq++, start});
  while (!open.empty()) {
    const OpenEntry top = open.top();
    open.pop();
    if (closed[top.index] || top.g != g[top.index]) continue;
    closed[top.index] = 1;
    if (top.index == goal) break;
    const Cell here = map.cell_at(top.index);
    for (Cell off : kNeighbourOffsets) {
      const Cell next = here + off;
      if (map.blocked(next)) continue;
      const std::size_t ni = map.index(next);
      if (closed[ni]) continue;
      const int ng = top.g + 1;
      if (g[ni] >= 0 && g[ni] <= ng) continue;
      g[ni] = ng;
      parent[ni] = top.index;
      open.push({ng + manhattan(next, to), ng, seq++, ni});
    }
  }
  if (!closed[goal]) return std::nullopt;

  Path path;
  for (std::size_t at = goal; at != n; at = parent[at]) path.push_back(map.cell_at(at));
  std::reverse(path.begin(), path.end());
  return path;
}

std::vector<int> distance_field(const GridMap& map, Cell source) {
  std::vector<int> dist(map.cells(), -1);
  if (map.blocked(source)) return dist;
  std::deque<Cell> queue{source};
  dist[map.index(source)] = 0;
  while (!queue.empty()) {
    const Cell here = queue.front();
    queue.pop_front();
    const int d = dist[map.index(here)];
    for (Cell off : kNeighbourOffsets) {
      const Cell next = here + off;
      if (map.blocked(next) || dist[map.index(next)] >= 0) continue;
      dist[map.index(next)] = d + 1;
      queue.push_back(next);
    }
  }
  return dist;
}

ReplanOutcome replan_if_needed(const GridMap& map, Cell position, Cell goal, Path& path) {
  if (!path.empty() && path.back() == goal) {
    if (path.front() == position) return ReplanOutcome::Kept;
    if (path.size() >= 2 && path[1] == position) {
      path.erase(path.begin());
      return ReplanOutcome::PrefixDropped;
    }
  }
  auto fresh = shortest_path(map, position, goal);
  if (!fresh) {
    path.clear();
    return ReplanOutcome::Unreachable;
  }
  path = std::move(*fresh);
  return ReplanOutcome::Replanned;
}

}  // namespace srmt::pathing
