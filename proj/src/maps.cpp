#include "srmt/maps.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <fstream>
#include <random>
#include <sstream>

#include "srmt/pathing.hpp"

namespace srmt::maps {

namespace {

Cell sample_room_cell(std::mt19937_64& rng, int room_size, int col_offset) {
  std::uniform_int_distribution<int> pick(0, room_size * room_size - 1);
  const int k = pick(rng);
  return {k / room_size, col_offset + k % room_size};
}

// Component label per cell, -1 for obstacles.
std::vector<int> label_components(const GridMap& map, int& count) {
  std::vector<int> label(map.cells(), -1);
  count = 0;
  for (std::size_t i = 0; i < map.cells(); ++i) {
    if (map.raw()[i] || label[i] >= 0) continue;
    std::deque<Cell> queue{map.cell_at(i)};
    label[i] = count;
    while (!queue.empty()) {
      const Cell here = queue.front();
      queue.pop_front();
      for (Cell off : kNeighbourOffsets) {
        const Cell next = here + off;
        if (map.blocked(next) || label[map.index(next)] >= 0) continue;
        label[map.index(next)] = count;
        queue.push_back(next);
      }
    }
    ++count;
  }
  return label;
}

}  // namespace

MapInstance gen_bottleneck(const BottleneckSpec& spec, std::uint64_t seed, bool fixed_placement) {
  if (spec.corridor_len < 1) throw ConfigError("corridor_len must be >= 1");
  if (spec.room_size < 3) throw ConfigError("room_size must be >= 3");
  const int room = spec.room_size;
  const int width = 2 * room + spec.corridor_len;
  const int height = room;
  const int mid = room / 2;

  GridMap map = GridMap::open(width, height);
  for (int r = 0; r < height; ++r)
    for (int c = room; c < room + spec.corridor_len; ++c)
      if (r != mid) map.set_blocked({r, c}, true);
  map.name = "bottleneck-" + std::to_string(spec.corridor_len);

  MapInstance inst{std::move(map), {}, {}};
  const int right = room + spec.corridor_len;
  if (fixed_placement) {
    inst.starts = {{mid, 0}, {mid, width - 1}};
    inst.goals = {{mid, width - 1}, {mid, 0}};
  } else {
    std::mt19937_64 rng(seed);
    const Cell s0 = sample_room_cell(rng, room, 0);
    const Cell g0 = sample_room_cell(rng, room, right);
    const Cell s1 = sample_room_cell(rng, room, right);
    const Cell g1 = sample_room_cell(rng, room, 0);
    inst.starts = {s0, s1};
    inst.goals = {g0, g1};
  }
  return inst;
}

std::vector<int> sample_corridor_lengths(int count, int min_len, int max_len, std::uint64_t seed) {
  if (count < 1 || min_len < 1 || max_len < min_len) throw ConfigError("invalid corridor length range");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(min_len, max_len);
  std::vector<int> out(static_cast<std::size_t>(count));
  for (int& v : out) v = pick(rng);
  return out;
}

GridMap gen_random(int width, int height, double obstacle_density, std::uint64_t seed) {
  if (obstacle_density < 0.0 || obstacle_density > 0.5) throw ConfigError("obstacle density must lie in [0, 0.5]");
  if (width < 1 || height < 1) throw ConfigError("map dimensions must be positive");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(obstacle_density);
  std::vector<std::uint8_t> blocked(static_cast<std::size_t>(width) * height);
  for (auto& b : blocked) b = coin(rng) ? 1 : 0;
  GridMap map(width, height, std::move(blocked));
  if (map.free_count() == 0) map.set_blocked({0, 0}, false);

  // Connect every other component to component 0 through the fewest
  // obstacle cells (0-1 BFS: stepping into an obstacle costs 1).
  for (;;) {
    int count = 0;
    auto label = label_components(map, count);
    if (count <= 1) break;
    const std::size_t n = map.cells();
    std::vector<int> cost(n, -1);
    std::vector<std::size_t> parent(n, n);
    std::deque<std::size_t> dq;
    for (std::size_t i = 0; i < n; ++i)
      if (label[i] == 0) {
        cost[i] = 0;
        dq.push_back(i);
      }
    std::size_t target = n;
    while (!dq.empty()) {
      const std::size_t cur = dq.front();
      dq.pop_front();
      if (label[cur] > 0) {
        target = cur;
        break;
      }
      const Cell here = map.cell_at(cur);
      for (Cell off : kNeighbourOffsets) {
        const Cell next = here + off;
        if (!map.in_bounds(next)) continue;
        const std::size_t ni = map.index(next);
        const int step = map.raw()[ni] ? 1 : 0;
        if (cost[ni] >= 0 && cost[ni] <= cost[cur] + step) continue;
        cost[ni] = cost[cur] + step;
        parent[ni] = cur;
        if (step == 0)
          dq.push_front(ni);
        else
          dq.push_back(ni);
      }
    }
    for (std::size_t at = target; at != n && label[at] != 0; at = parent[at])
      if (map.raw()[at]) map.set_blocked(map.cell_at(at), false);
  }
  map.name = "random-" + std::to_string(width) + "x" + std::to_string(height);
  return map;
}

GridMap gen_maze(int width, int height, std::uint64_t seed, double perforation) {
  if (width < 1 || height < 1 || width % 2 == 0 || height % 2 == 0)
    throw ConfigError("maze dimensions must be odd, got " + std::to_string(width) + "x" + std::to_string(height));
  std::vector<std::uint8_t> blocked(static_cast<std::size_t>(width) * height, 1);
  GridMap map(width, height, std::move(blocked));
  std::mt19937_64 rng(seed);

  // Nodes live on even coordinates; walls between them on mixed parity.
  std::vector<char> visited(map.cells(), 0);
  std::vector<Cell> stack{{0, 0}};
  map.set_blocked({0, 0}, false);
  visited[0] = 1;
  while (!stack.empty()) {
    const Cell here = stack.back();
    std::vector<Cell> options;
    for (Cell off : kNeighbourOffsets) {
      const Cell next{here.row + 2 * off.row, here.col + 2 * off.col};
      if (map.in_bounds(next) && !visited[map.index(next)]) options.push_back(next);
    }
    if (options.empty()) {
      stack.pop_back();
      continue;
    }
    std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
    const Cell next = options[pick(rng)];
    map.set_blocked({(here.row + next.row) / 2, (here.col + next.col) / 2}, false);
    map.set_blocked(next, false);
    visited[map.index(next)] = 1;
    stack.push_back(next);
  }

  std::bernoulli_distribution knock(perforation);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const bool wall_between = (r % 2) != (c % 2);
      if (wall_between && map.blocked({r, c}) && knock(rng)) map.set_blocked({r, c}, false);
    }
  map.name = "maze-" + std::to_string(width) + "x" + std::to_string(height);
  return map;
}

bool is_connected(const GridMap& map) {
  int count = 0;
  label_components(map, count);
  return count == 1;
}

// ---------------------------------------------------------------------------

GridMap MovingAIMap::to_grid() const {
  std::vector<std::uint8_t> blocked(static_cast<std::size_t>(width) * height);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const char ch = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      blocked[static_cast<std::size_t>(r) * width + c] = (ch == '.' || ch == 'G') ? 0 : 1;
    }
  return GridMap(width, height, std::move(blocked));
}

MovingAIMap MovingAIMap::from_grid(const GridMap& map) {
  MovingAIMap out;
  out.height = map.height();
  out.width = map.width();
  for (int r = 0; r < map.height(); ++r) {
    std::string row(static_cast<std::size_t>(map.width()), '.');
    for (int c = 0; c < map.width(); ++c)
      if (map.blocked({r, c})) row[static_cast<std::size_t>(c)] = '@';
    out.rows.push_back(std::move(row));
  }
  return out;
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string line(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

// Splits "keyword value" and checks the keyword; returns the value.
std::string header_value(const std::vector<std::string>& lines, std::size_t idx, const char* keyword) {
  const int line_no = static_cast<int>(idx) + 1;
  if (idx >= lines.size()) throw ParseError(std::string("missing '") + keyword + "' header line", line_no, 1);
  std::istringstream is(lines[idx]);
  std::string key, value, extra;
  is >> key >> value;
  if (lower(key) != keyword)
    throw ParseError(std::string("expected '") + keyword + "' header, found '" + lines[idx] + "'", line_no, 1);
  if (value.empty())
    throw ParseError(std::string("'") + keyword + "' header has no value", line_no,
                     static_cast<int>(lines[idx].size()) + 1);
  if (is >> extra)
    throw ParseError("unexpected trailing text in header", line_no,
                     static_cast<int>(lines[idx].find(extra)) + 1);
  return value;
}

int parse_dimension(const std::string& value, int line_no, int column) {
  int out = 0;
  for (char ch : value) {
    if (!std::isdigit(static_cast<unsigned char>(ch)) || out > 1'000'000)
      throw ParseError("invalid dimension '" + value + "'", line_no, column);
    out = out * 10 + (ch - '0');
  }
  if (out < 1) throw ParseError("dimension must be positive", line_no, column);
  return out;
}

}  // namespace

MovingAIMap parse_movingai(std::string_view text) {
  const auto lines = split_lines(text);
  MovingAIMap out;
  out.type = header_value(lines, 0, "type");
  out.height = parse_dimension(header_value(lines, 1, "height"), 2, static_cast<int>(lines[1].find_last_of(' ')) + 2);
  out.width = parse_dimension(header_value(lines, 2, "width"), 3, static_cast<int>(lines[2].find_last_of(' ')) + 2);
  if (lines.size() < 4 || lower(lines[3]) != "map")
    throw ParseError("expected 'map' line", 4, 1);

  for (int r = 0; r < out.height; ++r) {
    const std::size_t idx = 4 + static_cast<std::size_t>(r);
    const int line_no = static_cast<int>(idx) + 1;
    if (idx >= lines.size())
      throw ParseError("missing map row " + std::to_string(r + 1) + " of " + std::to_string(out.height), line_no, 1);
    const std::string& row = lines[idx];
    for (std::size_t c = 0; c < row.size() && c < static_cast<std::size_t>(out.width); ++c) {
      const char ch = row[c];
      if (ch != '.' && ch != 'G' && ch != '@' && ch != 'O' && ch != 'T')
        throw ParseError(std::string("unknown cell character '") + ch + "'", line_no, static_cast<int>(c) + 1);
    }
    if (static_cast<int>(row.size()) != out.width)
      throw ParseError("row has " + std::to_string(row.size()) + " cells, expected " + std::to_string(out.width), line_no,
                       static_cast<int>(std::min(row.size(), static_cast<std::size_t>(out.width))) + 1);
    out.rows.push_back(row);
  }
  for (std::size_t idx = 4 + static_cast<std::size_t>(out.height); idx < lines.size(); ++idx)
    if (!lines[idx].empty())
      throw ParseError("unexpected content after the last map row", static_cast<int>(idx) + 1, 1);
  return out;
}

std::string serialize_movingai(const MovingAIMap& map) {
  std::string out = "type " + map.type + "\nheight " + std::to_string(map.height) + "\nwidth " +
                    std::to_string(map.width) + "\nmap\n";
  for (const auto& row : map.rows) out += row + "\n";
  return out;
}

// ---------------------------------------------------------------------------

std::string encode_rle_row(const GridMap& map, int row) {
  std::string out;
  int c = 0;
  while (c < map.width()) {
    const bool b = map.blocked({row, c});
    int run = 0;
    while (c < map.width() && map.blocked({row, c}) == b) {
      ++run;
      ++c;
    }
    out += std::to_string(run);
    out += b ? '@' : '.';
  }
  return out;
}

nlohmann::json map_to_json(const GridMap& map) {
  nlohmann::json doc;
  if (!map.name.empty()) doc["name"] = map.name;
  doc["width"] = map.width();
  doc["height"] = map.height();
  auto& rows = doc["obstacles"] = nlohmann::json::array();
  for (int r = 0; r < map.height(); ++r) rows.push_back(encode_rle_row(map, r));
  return doc;
}

nlohmann::json instance_to_json(const MapInstance& instance) {
  nlohmann::json doc = map_to_json(instance.map);
  auto cells = [](const std::vector<Cell>& v) {
    auto arr = nlohmann::json::array();
    for (Cell c : v) arr.push_back({c.row, c.col});
    return arr;
  };
  if (!instance.starts.empty()) doc["starts"] = cells(instance.starts);
  if (!instance.goals.empty()) doc["goals"] = cells(instance.goals);
  return doc;
}

GridMap map_from_json(const nlohmann::json& doc) {
  try {
    const int width = doc.at("width").get<int>();
    const int height = doc.at("height").get<int>();
    const auto& rows = doc.at("obstacles");
    if (!rows.is_array() || static_cast<int>(rows.size()) != height)
      throw ConfigError("map JSON: 'obstacles' must list " + std::to_string(height) + " rows");
    std::vector<std::uint8_t> blocked;
    blocked.reserve(static_cast<std::size_t>(width) * height);
    for (int r = 0; r < height; ++r) {
      const auto row = rows[static_cast<std::size_t>(r)].get<std::string>();
      int run = 0, filled = 0;
      bool have_digits = false;
      for (char ch : row) {
        if (std::isdigit(static_cast<unsigned char>(ch))) {
          run = run * 10 + (ch - '0');
          have_digits = true;
        } else if ((ch == '.' || ch == '@') && have_digits) {
          blocked.insert(blocked.end(), static_cast<std::size_t>(run), ch == '@' ? 1 : 0);
          filled += run;
          run = 0;
          have_digits = false;
        } else {
          throw ConfigError("map JSON: bad run encoding in row " + std::to_string(r));
        }
      }
      if (have_digits || filled != width)
        throw ConfigError("map JSON: row " + std::to_string(r) + " encodes " + std::to_string(filled) + " cells, expected " +
                          std::to_string(width));
    }
    GridMap map(width, height, std::move(blocked));
    map.name = doc.value("name", "");
    return map;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("map JSON: ") + e.what());
  }
}

MapInstance instance_from_json(const nlohmann::json& doc) {
  MapInstance inst{map_from_json(doc), {}, {}};
  auto cells = [](const nlohmann::json& arr) {
    std::vector<Cell> out;
    for (const auto& c : arr) out.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
    return out;
  };
  try {
    if (doc.contains("starts")) inst.starts = cells(doc["starts"]);
    if (doc.contains("goals")) inst.goals = cells(doc["goals"]);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("map JSON: ") + e.what());
  }
  return inst;
}

MapInstance load_instance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open map file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("map file " + path.string() + ": " + e.what());
  }
  return instance_from_json(doc);
}

void save_instance(const std::filesystem::path& path, const MapInstance& instance) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write map file " + path.string());
  out << instance_to_json(instance).dump(1) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace srmt::maps
