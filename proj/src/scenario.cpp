#include "srmt/scenario.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "srmt/errors.hpp"
#include "srmt/jsonutil.hpp"
#include "srmt/maps.hpp"

namespace srmt {

std::vector<std::string> MapSourceConfig::problems() const {
  std::vector<std::string> out;
  if (kind != "bottleneck" && kind != "random" && kind != "maze" && kind != "files")
    out.push_back("maps.kind: expected bottleneck, random, maze or files, got '" + kind + "'");
  if (kind == "bottleneck") {
    if (corridor_min < 1 || corridor_max < corridor_min) out.push_back("maps.corridor_min/max: need 1 <= min <= max");
    if (room_size < 3) out.push_back("maps.room_size: must be at least 3");
    if (agents != 2) out.push_back("maps.agents: the bottleneck task has exactly 2 agents");
  }
  if (kind == "random" || kind == "maze") {
    if (width < 2 || height < 2) out.push_back("maps.width/height: must be at least 2");
    if (kind == "maze" && (width % 2 == 0 || height % 2 == 0)) out.push_back("maps.width/height: mazes need odd sizes");
    if (kind == "random" && (density < 0.0 || density > 0.5)) out.push_back("maps.density: must lie in [0, 0.5]");
  }
  if (kind == "files" && files.empty()) out.push_back("maps.files: at least one file required");
  if (map_count < 1) out.push_back("maps.map_count: must be positive");
  if (agents < 1) out.push_back("maps.agents: must be positive");
  return out;
}

nlohmann::json MapSourceConfig::to_json() const {
  nlohmann::json j{{"kind", kind}, {"map_count", map_count}, {"agents", agents}};
  if (kind == "bottleneck") {
    j["corridor_min"] = corridor_min;
    j["corridor_max"] = corridor_max;
    j["room_size"] = room_size;
    j["fixed_placement"] = fixed_placement;
  } else if (kind == "random" || kind == "maze") {
    j["width"] = width;
    j["height"] = height;
    if (kind == "random") j["density"] = density;
  } else {
    j["files"] = files;
  }
  return j;
}

MapSourceConfig MapSourceConfig::from_json(const nlohmann::json& doc, std::vector<std::string>& errors) {
  MapSourceConfig c;
  FieldReader r(doc, "maps", errors);
  r.get("kind", c.kind);
  r.get("corridor_min", c.corridor_min);
  r.get("corridor_max", c.corridor_max);
  r.get("room_size", c.room_size);
  r.get("fixed_placement", c.fixed_placement);
  r.get("width", c.width);
  r.get("height", c.height);
  r.get("density", c.density);
  r.get("files", c.files);
  r.get("map_count", c.map_count);
  r.get("agents", c.agents);
  r.finish();
  for (auto& p : c.problems()) errors.push_back(p);
  return c;
}

// ---------------------------------------------------------------------------

void place_agents(const GridMap& map, int n, std::uint64_t seed, std::vector<Cell>& starts, std::vector<Cell>& goals) {
  auto free = map.free_cells();
  if (static_cast<int>(free.size()) < 2 * n)
    throw ConfigError("map has " + std::to_string(free.size()) + " free cells, too few for " + std::to_string(n) + " agents");
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: only the first 2n positions are needed.
  for (int i = 0; i < 2 * n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), free.size() - 1);
    std::swap(free[static_cast<std::size_t>(i)], free[pick(rng)]);
  }
  starts.assign(free.begin(), free.begin() + n);
  goals.assign(free.begin() + n, free.begin() + 2 * n);
}

namespace {

GridMap load_map_file(const std::string& path, std::vector<Cell>& starts, std::vector<Cell>& goals) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open map file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".map") return maps::parse_movingai(text).to_grid();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("map file " + path + ": " + e.what());
  }
  if (doc.contains("starts")) {
    auto inst = maps::instance_from_json(doc);
    starts = inst.starts;
    goals = inst.goals;
    return inst.map;
  }
  return maps::map_from_json(doc);
}

}  // namespace

ScenarioPool::ScenarioPool(const MapSourceConfig& config, std::uint64_t seed) : config_(config) {
  auto problems = config.problems();
  if (!problems.empty()) throw ConfigError(join_problems(problems));
  std::seed_seq seq{seed, static_cast<std::uint64_t>(0x6d617073)};
  std::mt19937_64 rng(seq);
  if (config.kind == "bottleneck") {
    lengths_ = maps::sample_corridor_lengths(config.map_count, config.corridor_min, config.corridor_max, rng());
    for (int len : lengths_)
      maps_.push_back(std::make_shared<const GridMap>(maps::gen_bottleneck({len, config.room_size}, 0).map));
  } else if (config.kind == "random") {
    for (int i = 0; i < config.map_count; ++i)
      maps_.push_back(std::make_shared<const GridMap>(maps::gen_random(config.width, config.height, config.density, rng())));
  } else if (config.kind == "maze") {
    for (int i = 0; i < config.map_count; ++i)
      maps_.push_back(std::make_shared<const GridMap>(maps::gen_maze(config.width, config.height, rng())));
  } else {
    for (const auto& f : config.files) {
      std::vector<Cell> s, g;
      maps_.push_back(std::make_shared<const GridMap>(load_map_file(f, s, g)));
      if (!s.empty() && static_cast<int>(s.size()) != config.agents)
        throw ConfigError("map file " + f + " places " + std::to_string(s.size()) + " agents, config asks for " +
                          std::to_string(config.agents));
      fixed_starts_.push_back(std::move(s));
      fixed_goals_.push_back(std::move(g));
    }
  }
}

Scenario ScenarioPool::draw(std::size_t index, std::uint64_t seed) const {
  Scenario s;
  s.map_index = index;
  s.map = maps_.at(index);
  if (config_.kind == "bottleneck") {
    auto inst = maps::gen_bottleneck({lengths_[index], config_.room_size}, seed, config_.fixed_placement);
    s.starts = std::move(inst.starts);
    s.goals = std::move(inst.goals);
  } else if (!fixed_starts_.empty() && !fixed_starts_[index].empty()) {
    s.starts = fixed_starts_[index];
    s.goals = fixed_goals_[index];
  } else {
    place_agents(*s.map, config_.agents, seed, s.starts, s.goals);
  }
  return s;
}

}  // namespace srmt
