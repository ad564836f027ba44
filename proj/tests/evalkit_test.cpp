#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "srmt/errors.hpp"
#include "srmt/evalkit.hpp"
#include "srmt/maps.hpp"
#include "srmt/pathing.hpp"

using namespace srmt;
using namespace srmt::eval;

namespace {

EpisodeRecord classical(std::vector<std::optional<int>> arrivals, int length = 512) {
  EpisodeRecord ep;
  ep.mode = env::Mode::Classical;
  ep.agent_count = static_cast<int>(arrivals.size());
  ep.episode_length = length;
  ep.arrival_step = std::move(arrivals);
  return ep;
}

EpisodeRecord lifelong(int goals, int length) {
  EpisodeRecord ep;
  ep.mode = env::Mode::Lifelong;
  ep.agent_count = 1;
  ep.episode_length = length;
  ep.goals_reached = goals;
  ep.arrival_step = {std::nullopt};
  return ep;
}

// One snapshot of agents on a map, as congestion sees it.
EpisodeRecord snapshot(std::shared_ptr<const GridMap> map, std::vector<Cell> pos, int obs_size) {
  EpisodeRecord ep;
  ep.map = std::move(map);
  ep.agent_count = static_cast<int>(pos.size());
  ep.obs_size = obs_size;
  ep.positions = {pos};
  ep.active = {std::vector<char>(pos.size(), 1)};
  ep.arrival_step.assign(pos.size(), std::nullopt);
  return ep;
}

policy::PolicyConfig tiny() {
  policy::PolicyConfig c;
  c.obs_size = 3;
  c.hidden = 8;
  c.mlp_hidden = 6;
  c.filters = 3;
  c.heads = 2;
  c.history = 3;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Success metrics

TEST(Csr, AllOrNothing) {
  EXPECT_EQ(csr(classical({3, 5})), 1);
  EXPECT_EQ(csr(classical({3, std::nullopt})), 0);
  EXPECT_EQ(csr(classical({std::nullopt, std::nullopt})), 0);
}

TEST(Isr, FractionArrived) {
  EXPECT_DOUBLE_EQ(isr(classical({3, 5})), 1.0);
  EXPECT_DOUBLE_EQ(isr(classical({3, std::nullopt})), 0.5);
  EXPECT_DOUBLE_EQ(isr(classical({1, 2, std::nullopt, 4})), 0.75);
}

TEST(Soc, ChargesFullLengthToNonArrivals) {
  EXPECT_EQ(soc(classical({10, 14})), 24);
  EXPECT_EQ(soc(classical({std::nullopt, std::nullopt}, 512)), 1024);
  EXPECT_EQ(soc(classical({1, 1})), 2);
}

TEST(ClassicalMetrics, LifelongEpisodeIsContractError) {
  auto ep = lifelong(3, 10);
  EXPECT_THROW(csr(ep), ContractError);
  EXPECT_THROW(isr(ep), ContractError);
  EXPECT_THROW(soc(ep), ContractError);
  EXPECT_THROW(throughput(classical({1})), ContractError);
}

TEST(Throughput, GoalsPerStep) {
  EXPECT_DOUBLE_EQ(throughput(lifelong(128, 512)), 0.25);
  EXPECT_DOUBLE_EQ(throughput(lifelong(0, 512)), 0.0);
  EXPECT_DOUBLE_EQ(throughput(lifelong(512, 512)), 1.0);
}

TEST(MetricProperties, CsrOneIffIsrOne) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 8);
    std::vector<std::optional<int>> arr;
    for (int i = 0; i < n; ++i)
      arr.push_back(rng() % 3 ? std::optional<int>(1 + static_cast<int>(rng() % 50)) : std::nullopt);
    auto ep = classical(arr, 64);
    EXPECT_EQ(csr(ep) == 1, isr(ep) == 1.0);
    const double v = isr(ep);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(MetricProperties, SocNonIncreasingAsArrivalMovesEarlier) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 6);
    std::vector<std::optional<int>> arr;
    for (int i = 0; i < n; ++i)
      arr.push_back(rng() % 2 ? std::optional<int>(1 + static_cast<int>(rng() % 64)) : std::nullopt);
    auto ep = classical(arr, 64);
    const long before = soc(ep);
    const auto i = static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(n));
    const int current = ep.arrival_step[i] ? *ep.arrival_step[i] : 64;
    if (current <= 1) continue;
    ep.arrival_step[i] = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(current - 1));
    EXPECT_LE(soc(ep), before);
    EXPECT_GE(soc(ep), 0);
  }
}

// ---------------------------------------------------------------------------
// Congestion

TEST(Congestion, LoneAgentIsZero) {
  auto map = std::make_shared<const GridMap>(GridMap::open(5, 5));
  std::vector<EpisodeRecord> eps{snapshot(map, {{2, 2}}, 5)};
  EXPECT_EQ(congestion(eps), 0.0);
}

TEST(Congestion, WindowCoveringWholeMapEqualsGlobalDensity) {
  auto map = std::make_shared<const GridMap>(GridMap::open(2, 2));
  std::vector<EpisodeRecord> eps{snapshot(map, {{0, 0}, {0, 1}}, 5)};
  EXPECT_DOUBLE_EQ(congestion(eps), 1.0);
}

TEST(Congestion, UniformPlacementsAverageNearOne) {
  auto map = std::make_shared<const GridMap>(maps::gen_random(20, 20, 0.3, 3));
  const auto free = map->free_cells();
  std::mt19937_64 rng(3);
  std::vector<EpisodeRecord> eps;
  for (int trial = 0; trial < 1000; ++trial) {
    auto cells = free;
    std::shuffle(cells.begin(), cells.end(), rng);
    eps.push_back(snapshot(map, std::vector<Cell>(cells.begin(), cells.begin() + 16), 5));
  }
  EXPECT_NEAR(congestion(eps), 1.0, 0.1);
}

TEST(Congestion, InactiveAgentsAreIgnored) {
  auto map = std::make_shared<const GridMap>(GridMap::open(2, 2));
  auto ep = snapshot(map, {{0, 0}, {0, 1}}, 5);
  ep.active[0][1] = 0;
  std::vector<EpisodeRecord> eps{ep};
  EXPECT_EQ(congestion(eps), 0.0);
}

// ---------------------------------------------------------------------------
// Path optimality

namespace {

EpisodeRecord walk(const pathing::Path& path, Cell goal) {
  EpisodeRecord ep;
  ep.agent_count = 1;
  ep.episode_length = 512;
  ep.goals = {goal};
  for (Cell c : path) ep.positions.push_back({c});
  ep.arrival_step = {path.back() == goal ? std::optional<int>(static_cast<int>(path.size()) - 1) : std::nullopt};
  return ep;
}

}  // namespace

TEST(PathfindingOptimal, ShortestPathIsOptimalDetourIsNot) {
  GridMap map = GridMap::open(6, 6);
  auto path = *pathing::shortest_path(map, {0, 0}, {0, 5});
  EXPECT_EQ(pathfinding_optimal(map, walk(path, {0, 5})), 1);
  pathing::Path detour{{0, 0}, {1, 0}, {0, 0}};
  detour.insert(detour.end(), path.begin() + 1, path.end());
  EXPECT_EQ(pathfinding_optimal(map, walk(detour, {0, 5})), 0);
  // Waiting in place costs time but not moves.
  pathing::Path wait{{0, 0}, {0, 0}};
  wait.insert(wait.end(), path.begin() + 1, path.end());
  EXPECT_EQ(pathfinding_optimal(map, walk(wait, {0, 5})), 1);
  EXPECT_EQ(pathfinding_optimal(map, walk({{0, 0}, {0, 1}}, {0, 5})), 0);
}

TEST(PathfindingOptimal, AgreesWithBfsOracleOnRandomMaps) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    GridMap map = maps::gen_random(12, 12, 0.3, 100 + trial);
    auto free = map.free_cells();
    const Cell a = free[rng() % free.size()], b = free[rng() % free.size()];
    auto path = pathing::shortest_path(map, a, b);
    ASSERT_TRUE(path);
    ASSERT_EQ(static_cast<int>(path->size()) - 1, oracle::bfs_cost(map, a, b));
    EXPECT_EQ(pathfinding_optimal(map, walk(*path, b)), 1);
    // A random walk that happens to reach the goal is optimal only if its
    // move count equals the BFS distance.
    pathing::Path rw{a};
    for (int s = 0; s < 60 && rw.back() != b; ++s) {
      const Cell next = rw.back() + kNeighbourOffsets[rng() % 4];
      if (map.is_free(next)) rw.push_back(next);
    }
    if (rw.back() == b)
      EXPECT_EQ(pathfinding_optimal(map, walk(rw, b)), static_cast<int>(rw.size()) - 1 == oracle::bfs_cost(map, a, b));
  }
}

// ---------------------------------------------------------------------------
// Scalability and performance ratio

TEST(Scalability, Formula) {
  std::vector<RuntimePoint> linear{{2, 1.0}, {4, 2.0}, {8, 4.0}};
  EXPECT_DOUBLE_EQ(scalability(linear), 1.0);
  std::vector<RuntimePoint> flat{{4, 1.0}, {8, 1.0}};
  EXPECT_DOUBLE_EQ(scalability(flat), 2.0);
  std::vector<RuntimePoint> quad{{8, 4.0}, {4, 1.0}};
  EXPECT_DOUBLE_EQ(scalability(quad), 0.5);
  std::vector<RuntimePoint> one{{4, 1.0}};
  EXPECT_THROW(scalability(one), ContractError);
}

TEST(PerformanceRatio, RelativeToBest) {
  std::vector<double> refs{0.1, 0.4};
  EXPECT_DOUBLE_EQ(performance_ratio(0.2, refs), 0.5);
  EXPECT_DOUBLE_EQ(performance_ratio(0.5, refs), 1.0);
  EXPECT_DOUBLE_EQ(performance_ratio(0.3, {}), 1.0);
}

// ---------------------------------------------------------------------------
// Memory trace

TEST(MemoryTrace, DistancesAndEvents) {
  EpisodeRecord ep;
  ep.agent_count = 2;
  ep.obs_size = 5;
  ep.arrival_step = {3, std::nullopt};
  ep.positions = {{{0, 0}, {0, 4}}, {{0, 1}, {0, 3}}, {{0, 2}, {0, 3}}, {{0, 3}, {0, 4}}};
  ep.memory = {{{}, {}}, {{1.0, 2.0}, {1.0, 2.0}}, {{1.0, 0.0}, {-1.0, 0.0}}, {{0.0, 0.0}, {1.0, 1.0}}};
  auto rows = memory_trace(ep);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_NEAR(*rows[0].cosine_distance, 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(*rows[1].cosine_distance, 2.0);
  EXPECT_FALSE(rows[2].cosine_distance.has_value());
  EXPECT_DOUBLE_EQ(rows[1].euclidean_distance, 1.0);
  EXPECT_TRUE(rows[0].facing);  // step 1: visible and closing
  EXPECT_FALSE(rows[1].facing);
  EXPECT_TRUE(rows[2].first_goal);
  EXPECT_FALSE(rows[0].first_goal);
}

TEST(MemoryTrace, SymmetricInThePair) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(8), b(8);
    for (auto& v : a) v = normal(rng);
    for (auto& v : b) v = normal(rng);
    bool ok1 = false, ok2 = false;
    EXPECT_EQ(cosine_distance(a, b, ok1), cosine_distance(b, a, ok2));
    EXPECT_TRUE(ok1 && ok2);
    EpisodeRecord ep, swapped;
    ep.agent_count = swapped.agent_count = 2;
    ep.arrival_step = swapped.arrival_step = {std::nullopt, std::nullopt};
    const Cell p{static_cast<int>(rng() % 9), static_cast<int>(rng() % 9)}, q{static_cast<int>(rng() % 9), 3};
    ep.positions = {{p, q}};
    swapped.positions = {{q, p}};
    ep.memory = {{a, b}};
    swapped.memory = {{b, a}};
    auto r1 = memory_trace(ep), r2 = memory_trace(swapped);
    ASSERT_EQ(r1.size(), 1u);
    EXPECT_EQ(*r1[0].cosine_distance, *r2[0].cosine_distance);
    EXPECT_EQ(r1[0].euclidean_distance, r2[0].euclidean_distance);
  }
}

// ---------------------------------------------------------------------------
// Reports and sweeps

TEST(Summarize, MeanAndNormalHalfWidth) {
  std::vector<double> s{1.0, 0.0, 1.0, 1.0};
  auto r = summarize("k", "csr", s);
  EXPECT_DOUBLE_EQ(r.value, 0.75);
  EXPECT_NEAR(r.ci95, 1.96 * std::sqrt(0.25) / 2.0, 1e-15);
  EXPECT_EQ(r.n, 4);
  std::vector<double> one{0.5};
  EXPECT_EQ(summarize("k", "csr", one).ci95, 0.0);
}

TEST(Sweep, EpisodeLengthRule) {
  EXPECT_EQ(sweep_episode_length(1000), 2100);
  EXPECT_EQ(sweep_episode_length(5), 110);
}

TEST(Sweep, RangeExpansion) {
  EXPECT_EQ(parse_range("5..1000"), (std::vector<int>{5, 10, 20, 50, 100, 200, 500, 1000}));
  EXPECT_EQ(parse_range("3..30"), (std::vector<int>{3, 5, 10, 20, 30}));
  EXPECT_EQ(parse_range("7"), (std::vector<int>{7}));
  EXPECT_EQ(parse_range("4,9,16"), (std::vector<int>{4, 9, 16}));
  EXPECT_THROW(parse_range("9..3"), ConfigError);
  EXPECT_THROW(parse_range("x..3"), ConfigError);
}

TEST(Sweep, ReportRowsBoundsAndDeterminism) {
  policy::Policy p(tiny());
  std::vector<int> lengths{3, 5};
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 10; ++s) seeds.push_back(s);
  SweepOptions opt;
  auto a = sweep_corridors(p, lengths, seeds, opt);
  opt.threads = 3;
  auto b = sweep_corridors(p, lengths, seeds, opt);
  ASSERT_EQ(a.report.rows.size(), 6u);
  EXPECT_EQ(a.report.to_json(), b.report.to_json());
  for (const auto& row : a.report.rows) {
    EXPECT_EQ(row.n, 10);
    if (row.metric == "csr") {
      EXPECT_GE(row.value, 0.0);
      EXPECT_LE(row.value, 1.0);
      EXPECT_LE(row.ci95, 0.5);
    }
  }
  for (const auto& ep : a.episodes) {
    const int len = ep.map_id == "bottleneck-3" ? 3 : 5;
    EXPECT_EQ(ep.episode_length, sweep_episode_length(len));
    for (const auto& s : ep.arrival_step)
      if (s) EXPECT_LE(*s, ep.episode_length);
  }
}

TEST(RunEpisode, RecordsMemoryAndRoundTripsJson) {
  policy::Policy p(tiny());
  auto inst = maps::gen_bottleneck({4, 5}, 9);
  auto map = std::make_shared<const GridMap>(inst.map);
  env::EnvConfig cfg;
  cfg.obs_size = 3;
  cfg.episode_length = 30;
  auto ep = run_episode(p, map, inst.starts, inst.goals, cfg, RunOptions{false, true, 9});
  EXPECT_EQ(static_cast<int>(ep.positions.size()), ep.steps + 1);
  EXPECT_EQ(ep.memory.size(), ep.positions.size());
  EXPECT_FALSE(ep.memory[1][0].empty());
  auto back = EpisodeRecord::from_json(ep.to_json());
  EXPECT_EQ(back.to_json(), ep.to_json());
  auto again = run_episode(p, map, inst.starts, inst.goals, cfg, RunOptions{false, true, 9});
  EXPECT_EQ(again.positions, ep.positions);
  EXPECT_FALSE(memory_trace(ep).empty());
}

TEST(RunEpisode, WindowMismatchIsConfigError) {
  policy::Policy p(tiny());
  auto inst = maps::gen_bottleneck({4, 5}, 9);
  env::EnvConfig cfg;  // obs 5
  EXPECT_THROW(run_episode(p, std::make_shared<const GridMap>(inst.map), inst.starts, inst.goals, cfg, {}), ConfigError);
}
