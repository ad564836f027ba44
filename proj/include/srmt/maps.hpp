#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "srmt/grid.hpp"

namespace srmt::maps {

/// Two square rooms joined by a one-cell-wide corridor.
struct BottleneckSpec {
  int corridor_len = 3;
  int room_size = 5;
};

/// A map together with per-agent start and goal cells.
struct MapInstance {
  GridMap map;
  std::vector<Cell> starts;
  std::vector<Cell> goals;
};

/// Layout: width = 2·room_size + corridor_len, height = room_size, corridor
/// on the middle row. Agent 0 starts in the left room and targets the right
/// room; agent 1 is mirrored. With `fixed_placement` starts and goals sit on
/// the outer ends of the corridor row instead of being drawn from the rooms.
MapInstance gen_bottleneck(const BottleneckSpec& spec, std::uint64_t seed, bool fixed_placement = false);

/// `count` corridor lengths drawn uniformly from [min_len, max_len].
std::vector<int> sample_corridor_lengths(int count, int min_len, int max_len, std::uint64_t seed);

/// I.i.d. obstacles at `density`, then minimal corridors carved until every
/// free cell is in one component.
GridMap gen_random(int width, int height, double obstacle_density, std::uint64_t seed);

/// Randomized depth-first maze on even coordinates, perforated at
/// `perforation` to open cycles. Width and height must be odd.
GridMap gen_maze(int width, int height, std::uint64_t seed, double perforation = 0.1);

/// True if all free cells form a single 4-connected component.
bool is_connected(const GridMap& map);

// ---------------------------------------------------------------------------
// MovingAI .map format

struct MovingAIMap {
  std::string type = "octile";
  int height = 0;
  int width = 0;
  std::vector<std::string> rows;

  GridMap to_grid() const;
  static MovingAIMap from_grid(const GridMap& map);
};

/// Parses "type/height/width/map" header lines (keywords case-insensitive)
/// followed by exactly `height` rows of `width` characters from ".G@OT".
/// Errors name the offending 1-based line and column.
MovingAIMap parse_movingai(std::string_view text);
std::string serialize_movingai(const MovingAIMap& map);

// ---------------------------------------------------------------------------
// JSON map schema: {"width", "height", "obstacles": [rle row strings],
// optional "name", "starts", "goals"}. A run is a count followed by '.' or
// '@', e.g. "3.2@5.".

std::string encode_rle_row(const GridMap& map, int row);
nlohmann::json map_to_json(const GridMap& map);
nlohmann::json instance_to_json(const MapInstance& instance);
GridMap map_from_json(const nlohmann::json& doc);
MapInstance instance_from_json(const nlohmann::json& doc);

MapInstance load_instance(const std::filesystem::path& path);
void save_instance(const std::filesystem::path& path, const MapInstance& instance);

}  // namespace srmt::maps
