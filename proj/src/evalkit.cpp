#include "srmt/evalkit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

#include "srmt/errors.hpp"
#include "srmt/maps.hpp"
#include "srmt/pathing.hpp"

namespace srmt::eval {

namespace {

void require_classical(const EpisodeRecord& ep, const char* what) {
  if (ep.mode != env::Mode::Classical) throw ContractError(std::string(what) + ": needs a classical episode");
}

nlohmann::json cell_json(Cell c) { return nlohmann::json::array({c.row, c.col}); }
Cell json_cell(const nlohmann::json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

nlohmann::json EpisodeRecord::to_json() const {
  nlohmann::json j;
  j["map_id"] = map_id;
  j["mode"] = env::to_string(mode);
  j["agent_count"] = agent_count;
  j["episode_length"] = episode_length;
  j["steps"] = steps;
  j["obs_size"] = obs_size;
  j["goals_reached"] = goals_reached;
  j["runtime_seconds"] = runtime_seconds;
  auto& arr = j["arrival_step"] = nlohmann::json::array();
  for (const auto& a : arrival_step) arr.push_back(a ? nlohmann::json(*a) : nlohmann::json(nullptr));
  auto& g = j["goals"] = nlohmann::json::array();
  for (Cell c : goals) g.push_back(cell_json(c));
  auto& pos = j["positions"] = nlohmann::json::array();
  for (const auto& row : positions) {
    auto r = nlohmann::json::array();
    for (Cell c : row) r.push_back(cell_json(c));
    pos.push_back(std::move(r));
  }
  auto& act = j["active"] = nlohmann::json::array();
  for (const auto& row : active) {
    auto r = nlohmann::json::array();
    for (char a : row) r.push_back(a != 0);
    act.push_back(std::move(r));
  }
  j["memory"] = memory;
  return j;
}

EpisodeRecord EpisodeRecord::from_json(const nlohmann::json& doc) {
  EpisodeRecord ep;
  try {
    ep.map_id = doc.at("map_id").get<std::string>();
    ep.mode = env::mode_from_string(doc.at("mode").get<std::string>());
    ep.agent_count = doc.at("agent_count").get<int>();
    ep.episode_length = doc.at("episode_length").get<int>();
    ep.steps = doc.at("steps").get<int>();
    ep.obs_size = doc.value("obs_size", 5);
    ep.goals_reached = doc.value("goals_reached", 0);
    ep.runtime_seconds = doc.value("runtime_seconds", 0.0);
    for (const auto& a : doc.at("arrival_step"))
      ep.arrival_step.push_back(a.is_null() ? std::nullopt : std::optional<int>(a.get<int>()));
    for (const auto& c : doc.value("goals", nlohmann::json::array())) ep.goals.push_back(json_cell(c));
    for (const auto& row : doc.at("positions")) {
      std::vector<Cell> r;
      for (const auto& c : row) r.push_back(json_cell(c));
      ep.positions.push_back(std::move(r));
    }
    for (const auto& row : doc.value("active", nlohmann::json::array())) {
      std::vector<char> r;
      for (const auto& a : row) r.push_back(a.get<bool>() ? 1 : 0);
      ep.active.push_back(std::move(r));
    }
    if (doc.contains("memory")) ep.memory = doc["memory"].get<std::vector<std::vector<std::vector<double>>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("episode record: ") + e.what());
  }
  if (static_cast<int>(ep.arrival_step.size()) != ep.agent_count)
    throw ConfigError("episode record: arrival_step must list every agent");
  for (const auto& row : ep.positions)
    if (static_cast<int>(row.size()) != ep.agent_count) throw ConfigError("episode record: position row has wrong width");
  return ep;
}

// ---------------------------------------------------------------------------

int csr(const EpisodeRecord& ep) {
  require_classical(ep, "csr");
  return std::all_of(ep.arrival_step.begin(), ep.arrival_step.end(), [](const auto& a) { return a.has_value(); }) ? 1
                                                                                                                  : 0;
}

double isr(const EpisodeRecord& ep) {
  require_classical(ep, "isr");
  if (ep.arrival_step.empty()) return 0.0;
  const auto arrived = std::count_if(ep.arrival_step.begin(), ep.arrival_step.end(), [](const auto& a) { return a.has_value(); });
  return static_cast<double>(arrived) / static_cast<double>(ep.arrival_step.size());
}

long soc(const EpisodeRecord& ep) {
  require_classical(ep, "soc");
  long total = 0;
  for (const auto& a : ep.arrival_step) total += a ? *a : ep.episode_length;
  return total;
}

double throughput(const EpisodeRecord& ep) {
  if (ep.mode != env::Mode::Lifelong) throw ContractError("throughput: needs a lifelong episode");
  if (ep.episode_length <= 0) throw ContractError("throughput: episode length must be positive");
  return static_cast<double>(ep.goals_reached) / static_cast<double>(ep.episode_length);
}

double congestion(std::span<const EpisodeRecord> episodes) {
  double total = 0.0;
  long samples = 0;
  for (const auto& ep : episodes) {
    if (!ep.map) throw ContractError("congestion: episode has no map");
    const GridMap& map = *ep.map;
    const double map_free = static_cast<double>(map.free_count());
    const int r = ep.obs_size / 2;
    // Rows with a successor: the agent acted from those positions.
    const std::size_t rows = ep.positions.size() > 1 ? ep.positions.size() - 1 : ep.positions.size();
    for (std::size_t t = 0; t < rows; ++t) {
      const auto& pos = ep.positions[t];
      std::vector<int> live;
      for (int i = 0; i < ep.agent_count; ++i)
        if (ep.active.empty() || ep.active[t][static_cast<std::size_t>(i)]) live.push_back(i);
      const double global =
          map_free > 1.0 ? static_cast<double>(live.size() - 1) / (map_free - 1.0) : 0.0;
      for (int i : live) {
        const Cell me = pos[static_cast<std::size_t>(i)];
        ++samples;
        if (global <= 0.0) continue;
        int window_free = 0, others = 0;
        for (int dr = -r; dr <= r; ++dr)
          for (int dc = -r; dc <= r; ++dc)
            if (map.is_free({me.row + dr, me.col + dc})) ++window_free;
        for (int j : live)
          if (j != i) {
            const Cell o = pos[static_cast<std::size_t>(j)];
            if (std::abs(o.row - me.row) <= r && std::abs(o.col - me.col) <= r) ++others;
          }
        if (window_free <= 1) continue;
        total += (static_cast<double>(others) / (window_free - 1.0)) / global;
      }
    }
  }
  return samples ? total / static_cast<double>(samples) : 0.0;
}

int pathfinding_optimal(const GridMap& map, const EpisodeRecord& ep) {
  if (ep.agent_count != 1) throw ContractError("pathfinding_optimal: needs a single-agent episode");
  if (ep.positions.empty() || ep.goals.empty()) throw ContractError("pathfinding_optimal: episode has no trajectory");
  const Cell goal = ep.goals[0];
  const bool arrived = ep.mode == env::Mode::Classical ? ep.arrival_step[0].has_value()
                                                       : std::any_of(ep.positions.begin(), ep.positions.end(),
                                                                     [&](const auto& row) { return row[0] == goal; });
  if (!arrived) return 0;
  auto path = pathing::shortest_path(map, ep.positions.front()[0], goal);
  if (!path) return 0;
  int moves = 0;
  for (std::size_t t = 1; t < ep.positions.size(); ++t) {
    if (ep.positions[t][0] != ep.positions[t - 1][0]) ++moves;
    if (ep.positions[t][0] == goal) break;
  }
  return moves == static_cast<int>(path->size()) - 1 ? 1 : 0;
}

double scalability(std::span<const RuntimePoint> points) {
  if (points.size() < 2) throw ContractError("scalability: needs at least two agent counts");
  for (const auto& p : points)
    if (p.agents <= 0 || !(p.seconds > 0.0)) throw ContractError("scalability: agent counts and runtimes must be positive");
  const auto base = *std::min_element(points.begin(), points.end(),
                                      [](const RuntimePoint& a, const RuntimePoint& b) { return a.agents < b.agents; });
  double sum = 0.0;
  int n = 0;
  for (const auto& p : points) {
    if (p.agents == base.agents) continue;
    sum += (static_cast<double>(p.agents) / base.agents) / (p.seconds / base.seconds);
    ++n;
  }
  if (n == 0) throw ContractError("scalability: needs two distinct agent counts");
  return sum / n;
}

double performance_ratio(double own, std::span<const double> references) {
  double best = own;
  for (double r : references) best = std::max(best, r);
  if (best <= 0.0) return 1.0;
  return own / best;
}

// ---------------------------------------------------------------------------

double cosine_distance(std::span<const double> a, std::span<const double> b, bool& defined) {
  if (a.size() != b.size()) throw DimensionError("cosine_distance: vectors differ in length");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  defined = na > 0.0 && nb > 0.0;
  if (!defined) return 0.0;
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<TraceRow> memory_trace(const EpisodeRecord& ep) {
  std::vector<TraceRow> rows;
  int first_goal = -1;
  for (const auto& a : ep.arrival_step)
    if (a && (first_goal < 0 || *a < first_goal)) first_goal = *a;
  const int r = ep.obs_size / 2;
  const std::size_t n = static_cast<std::size_t>(ep.agent_count);
  std::vector<std::vector<char>> faced(n, std::vector<char>(n, 0));
  for (std::size_t t = 0; t < ep.memory.size() && t < ep.positions.size(); ++t) {
    const auto& mem = ep.memory[t];
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) {
        if (mem.size() <= b || mem[a].empty() || mem[b].empty()) continue;
        TraceRow row;
        row.step = static_cast<int>(t);
        row.agent_a = static_cast<int>(a);
        row.agent_b = static_cast<int>(b);
        bool ok = false;
        const double cd = cosine_distance(mem[a], mem[b], ok);
        if (ok) row.cosine_distance = cd;
        const Cell pa = ep.positions[t][a], pb = ep.positions[t][b];
        const int dr = pa.row - pb.row, dc = pa.col - pb.col;
        row.euclidean_distance = std::sqrt(static_cast<double>(dr * dr + dc * dc));
        if (!faced[a][b] && t > 0 && std::abs(dr) <= r && std::abs(dc) <= r) {
          const Cell qa = ep.positions[t - 1][a], qb = ep.positions[t - 1][b];
          const int pdr = qa.row - qb.row, pdc = qa.col - qb.col;
          const bool along_cols = std::abs(pdc) >= std::abs(pdr);
          const int before = along_cols ? std::abs(pdc) : std::abs(pdr);
          const int after = along_cols ? std::abs(dc) : std::abs(dr);
          if (after < before) {
            row.facing = true;
            faced[a][b] = 1;
          }
        }
        row.first_goal = static_cast<int>(t) == first_goal;
        rows.push_back(row);
      }
  }
  return rows;
}

void write_trace_csv(const std::filesystem::path& path, std::span<const TraceRow> rows) {
  auto out = open_out(path);
  out << "step,agent_a,agent_b,cosine_distance,euclidean_distance,facing,first_goal\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.agent_a << ',' << r.agent_b << ',';
    if (r.cosine_distance) out << fmt(*r.cosine_distance);
    out << ',' << fmt(r.euclidean_distance) << ',' << (r.facing ? 1 : 0) << ',' << (r.first_goal ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------

MetricReport summarize(std::string key, std::string metric, std::span<const double> samples) {
  MetricReport r;
  r.key = std::move(key);
  r.metric = std::move(metric);
  r.n = static_cast<int>(samples.size());
  if (samples.empty()) return r;
  double sum = 0.0;
  for (double v : samples) sum += v;
  r.value = sum / r.n;
  if (r.n >= 2) {
    double sq = 0.0;
    for (double v : samples) sq += (v - r.value) * (v - r.value);
    r.ci95 = 1.96 * std::sqrt(sq / (r.n - 1)) / std::sqrt(static_cast<double>(r.n));
  }
  return r;
}

nlohmann::json Report::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows)
    rows_json.push_back({{key_name, r.key}, {"metric", r.metric}, {"value", r.value}, {"ci95", r.ci95}, {"n", r.n}});
  return {{"key", key_name}, {"rows", rows_json}};
}

void write_report_csv(const std::filesystem::path& path, const Report& report) {
  auto out = open_out(path);
  out << report.key_name << ",metric,value,ci95,n\n";
  for (const auto& r : report.rows)
    out << r.key << ',' << r.metric << ',' << fmt(r.value) << ',' << fmt(r.ci95) << ',' << r.n << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void write_report_json(const std::filesystem::path& path, const Report& report) {
  auto out = open_out(path);
  out << report.to_json().dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------

EpisodeRecord run_episode(const policy::Policy& policy, std::shared_ptr<const GridMap> map, std::vector<Cell> starts,
                          std::vector<Cell> goals, const env::EnvConfig& config, const RunOptions& options) {
  if (config.obs_size != policy.config().obs_size)
    throw ConfigError("evaluation window " + std::to_string(config.obs_size) + " does not match the policy's " +
                      std::to_string(policy.config().obs_size));
  const auto t0 = std::chrono::steady_clock::now();
  EpisodeRecord ep;
  ep.map_id = map->name;
  ep.map = map;
  ep.mode = config.mode;
  ep.agent_count = static_cast<int>(starts.size());
  ep.episode_length = config.episode_length;
  ep.obs_size = config.obs_size;
  ep.goals = goals;

  env::Environment environment;
  environment.reset(map, std::move(starts), std::move(goals), config, options.seed);
  std::seed_seq seq{options.seed, static_cast<std::uint64_t>(0x61637473)};
  std::mt19937_64 rng(seq);
  const std::size_t n = static_cast<std::size_t>(ep.agent_count);
  std::vector<policy::AgentSlot> slots(n);

  auto snapshot = [&] {
    const auto& st = environment.state();
    std::vector<Cell> pos(n);
    std::vector<char> act(n);
    for (std::size_t i = 0; i < n; ++i) {
      pos[i] = st.agents[i].position;
      act[i] = st.agents[i].active ? 1 : 0;
    }
    ep.positions.push_back(std::move(pos));
    ep.active.push_back(std::move(act));
    if (options.record_memory) {
      std::vector<std::vector<double>> mem(n);
      for (std::size_t i = 0; i < n; ++i)
        if (st.agents[i].active && slots[i].started) mem[i] = slots[i].memory.storage();
      ep.memory.push_back(std::move(mem));
    }
  };
  snapshot();

  while (!environment.state().done) {
    const auto live = environment.state().active_agents();
    auto obs = environment.observations();
    std::vector<policy::AgentSlot*> ptrs;
    for (int i : live) ptrs.push_back(&slots[static_cast<std::size_t>(i)]);
    auto js = policy::joint_step(policy, obs, ptrs);
    std::vector<env::Action> actions;
    for (std::size_t k = 0; k < live.size(); ++k)
      actions.push_back(static_cast<env::Action>(options.greedy ? policy::greedy_action(js.logits[k])
                                                                : policy::sample_action(js.logits[k], rng)));
    environment.step(actions);
    snapshot();
  }

  const auto& st = environment.state();
  ep.steps = st.step;
  for (const auto& a : st.agents) ep.arrival_step.push_back(a.arrival_step);
  ep.goals_reached = st.total_goals_reached();
  ep.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return ep;
}

std::vector<int> parse_range(const std::string& text) {
  auto to_int = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(s, &used);
      if (used != s.size() || v < 1) throw std::invalid_argument("bad");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("range '" + text + "': '" + s + "' is not a positive integer");
    }
  };
  std::vector<int> out;
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    const int lo = to_int(text.substr(0, dots)), hi = to_int(text.substr(dots + 2));
    if (hi < lo) throw ConfigError("range '" + text + "': upper end below lower end");
    out.push_back(lo);
    for (long decade = 1; decade <= hi; decade *= 10)
      for (int m : {1, 2, 5}) {
        const long v = decade * m;
        if (v > lo && v < hi) out.push_back(static_cast<int>(v));
      }
    if (hi != lo) out.push_back(hi);
    return out;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int(item));
  if (out.empty()) throw ConfigError("range is empty");
  return out;
}

namespace {

// Runs jobs [0, count) on up to `threads` threads; job i writes slot i.
template <class F>
void parallel_for(std::size_t count, int threads, F&& job) {
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(count)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = static_cast<std::size_t>(w); i < count; i += static_cast<std::size_t>(workers)) job(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void add_classical(Report& report, const std::string& key, std::span<const EpisodeRecord> eps) {
  std::vector<double> c, i, s;
  for (const auto& ep : eps) {
    c.push_back(csr(ep));
    i.push_back(isr(ep));
    s.push_back(static_cast<double>(soc(ep)));
  }
  report.rows.push_back(summarize(key, "csr", c));
  report.rows.push_back(summarize(key, "isr", i));
  report.rows.push_back(summarize(key, "soc", s));
}

}  // namespace

SweepResult sweep_corridors(const policy::Policy& policy, std::span<const int> lengths,
                            std::span<const std::uint64_t> seeds, const SweepOptions& options) {
  if (lengths.empty() || seeds.empty()) throw ConfigError("sweep needs at least one length and one seed");
  SweepResult result;
  result.report.key_name = "corridor_length";
  result.episodes.resize(lengths.size() * seeds.size());
  parallel_for(result.episodes.size(), options.threads, [&](std::size_t job) {
    const int len = lengths[job / seeds.size()];
    const std::uint64_t seed = seeds[job % seeds.size()];
    auto inst = maps::gen_bottleneck({len, options.room_size}, seed);
    env::EnvConfig cfg;
    cfg.mode = env::Mode::Classical;
    cfg.obs_size = policy.config().obs_size;
    cfg.episode_length = sweep_episode_length(len);
    auto map = std::make_shared<const GridMap>(std::move(inst.map));
    result.episodes[job] = run_episode(policy, map, inst.starts, inst.goals, cfg,
                                       RunOptions{options.greedy, options.record_memory, seed});
    result.episodes[job].map_id = "bottleneck-" + std::to_string(len);
  });
  for (std::size_t l = 0; l < lengths.size(); ++l)
    add_classical(result.report, std::to_string(lengths[l]),
                  std::span<const EpisodeRecord>(result.episodes).subspan(l * seeds.size(), seeds.size()));
  return result;
}

SweepResult evaluate_instances(const policy::Policy& policy, std::span<const InstanceSpec> instances,
                               std::span<const std::uint64_t> seeds, const env::EnvConfig& config,
                               const SweepOptions& options) {
  if (instances.empty() || seeds.empty()) throw ConfigError("evaluation needs at least one instance and one seed");
  SweepResult result;
  result.report.key_name = "instance";
  result.episodes.resize(instances.size() * seeds.size());
  parallel_for(result.episodes.size(), options.threads, [&](std::size_t job) {
    const auto& inst = instances[job / seeds.size()];
    const std::uint64_t seed = seeds[job % seeds.size()];
    result.episodes[job] = run_episode(policy, inst.map, inst.starts, inst.goals, config,
                                       RunOptions{options.greedy, options.record_memory, seed});
    result.episodes[job].map_id = inst.id;
  });
  for (std::size_t k = 0; k < instances.size(); ++k) {
    auto eps = std::span<const EpisodeRecord>(result.episodes).subspan(k * seeds.size(), seeds.size());
    const std::string& key = instances[k].id;
    if (config.mode == env::Mode::Classical) {
      add_classical(result.report, key, eps);
    } else {
      std::vector<double> tp;
      for (const auto& ep : eps) tp.push_back(throughput(ep));
      result.report.rows.push_back(summarize(key, "throughput", tp));
    }
    std::vector<double> cg;
    for (const auto& ep : eps) cg.push_back(congestion(std::span<const EpisodeRecord>(&ep, 1)));
    result.report.rows.push_back(summarize(key, "congestion", cg));
  }
  return result;
}

}  // namespace srmt::eval
