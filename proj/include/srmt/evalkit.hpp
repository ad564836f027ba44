#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "srmt/gridenv.hpp"
#include "srmt/policy.hpp"

namespace srmt::eval {

/// Everything the metrics need from one finished episode.
struct EpisodeRecord {
  std::string map_id;
  env::Mode mode = env::Mode::Classical;
  int agent_count = 0;
  int episode_length = 0;  ///< configured step budget
  int steps = 0;           ///< steps actually taken
  int obs_size = 5;
  std::vector<std::optional<int>> arrival_step;
  /// positions[t][i] after t steps; row 0 is the start.
  std::vector<std::vector<Cell>> positions;
  /// active[t][i] at the start of step t+1 (row 0 = everyone).
  std::vector<std::vector<char>> active;
  /// memory[t][i]: flattened memory agent i holds after t steps. Row 0
  /// and inactive agents are empty; the whole table is empty when
  /// recording is off.
  std::vector<std::vector<std::vector<double>>> memory;
  std::vector<Cell> goals;  ///< initial goals
  int goals_reached = 0;
  double runtime_seconds = 0.0;
  /// Map used for congestion and optimality checks; not serialized.
  std::shared_ptr<const GridMap> map;

  nlohmann::json to_json() const;
  static EpisodeRecord from_json(const nlohmann::json& doc);
};

// Classical metrics. Each throws ContractError on a lifelong episode.
int csr(const EpisodeRecord& ep);
double isr(const EpisodeRecord& ep);
/// Arrival step for arrived agents, the full episode length otherwise.
long soc(const EpisodeRecord& ep);

/// Goals per step; lifelong only.
double throughput(const EpisodeRecord& ep);

/// Mean over (agent, step) of local agent density relative to global
/// density. Densities exclude the observing agent and its own cell:
/// local = others in window / (free window cells − 1),
/// global = (active − 1) / (free map cells − 1).
/// Steps with a single active agent contribute 0.
double congestion(std::span<const EpisodeRecord> episodes);

/// 1 iff the single agent arrived and made exactly shortest-path-cost moves.
int pathfinding_optimal(const GridMap& map, const EpisodeRecord& ep);

struct RuntimePoint {
  int agents = 0;
  double seconds = 0.0;
};
/// Mean over non-baseline points of (n_i/n_0)/(t_i/t_0); baseline is the
/// smallest agent count.
double scalability(std::span<const RuntimePoint> points);

/// own / max(own, references); 1 when everything is zero.
double performance_ratio(double own, std::span<const double> references);

struct TraceRow {
  int step = 0;
  int agent_a = 0;
  int agent_b = 0;
  std::optional<double> cosine_distance;  ///< missing when a vector has zero norm
  double euclidean_distance = 0.0;
  bool facing = false;
  bool first_goal = false;
};

/// Pairwise memory and position distances per recorded step.
/// facing marks the first step at which the pair is mutually visible and
/// their separation along the dominant axis shrank; first_goal marks the
/// step of the earliest arrival.
std::vector<TraceRow> memory_trace(const EpisodeRecord& ep);
void write_trace_csv(const std::filesystem::path& path, std::span<const TraceRow> rows);

double cosine_distance(std::span<const double> a, std::span<const double> b, bool& defined);

// ---------------------------------------------------------------------------
// Reports

struct MetricReport {
  std::string key;  ///< configuration label, e.g. a corridor length
  std::string metric;
  double value = 0.0;
  double ci95 = 0.0;  ///< half-width, normal approximation
  int n = 0;
};

/// Mean and 95% half-width 1.96·s/√n (0 for n < 2).
MetricReport summarize(std::string key, std::string metric, std::span<const double> samples);

struct Report {
  std::string key_name = "config";
  std::vector<MetricReport> rows;
  nlohmann::json to_json() const;
};
void write_report_csv(const std::filesystem::path& path, const Report& report);
void write_report_json(const std::filesystem::path& path, const Report& report);

// ---------------------------------------------------------------------------
// Episode runner

struct RunOptions {
  bool greedy = false;
  bool record_memory = false;
  std::uint64_t seed = 0;  ///< environment and action sampling
};

/// Runs one episode of `policy` to completion.
EpisodeRecord run_episode(const policy::Policy& policy, std::shared_ptr<const GridMap> map, std::vector<Cell> starts,
                          std::vector<Cell> goals, const env::EnvConfig& config, const RunOptions& options);

inline int sweep_episode_length(int corridor_len) { return 2 * corridor_len + 100; }

/// Expands "a..b" over the 1-2-5 series clipped to [a, b], both ends
/// included; "a,b,c" lists values; "a" is one value.
std::vector<int> parse_range(const std::string& text);

struct SweepOptions {
  int room_size = 5;
  bool greedy = false;
  bool record_memory = false;
  int threads = 1;
};

struct SweepResult {
  Report report;
  /// Per-length, per-seed episodes (memory traces when recorded).
  std::vector<EpisodeRecord> episodes;
};

/// CSR/ISR/SoC per corridor length over the given seeds, episode length
/// 2L+100.
SweepResult sweep_corridors(const policy::Policy& policy, std::span<const int> lengths,
                            std::span<const std::uint64_t> seeds, const SweepOptions& options);

struct InstanceSpec {
  std::string id;
  std::shared_ptr<const GridMap> map;
  std::vector<Cell> starts, goals;
};

/// Evaluates fixed instances over seeds: CSR/ISR/SoC for classical,
/// throughput for lifelong; congestion in both.
SweepResult evaluate_instances(const policy::Policy& policy, std::span<const InstanceSpec> instances,
                               std::span<const std::uint64_t> seeds, const env::EnvConfig& config,
                               const SweepOptions& options);

}  // namespace srmt::eval
