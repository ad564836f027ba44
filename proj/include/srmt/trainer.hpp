#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "srmt/gridenv.hpp"
#include "srmt/numkit/params.hpp"
#include "srmt/policy.hpp"
#include "srmt/ppo.hpp"
#include "srmt/rewards.hpp"
#include "srmt/scenario.hpp"

namespace srmt::train {

/// A complete, self-describing training run.
struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  env::EnvConfig env;
  rewards::RewardConfig reward;
  MapSourceConfig maps;
  policy::PolicyConfig policy;
  ppo::PPOConfig ppo;
  int checkpoint_every = 25;  ///< iterations between checkpoints; the last one is always written
  std::string output_dir = "runs/experiment";

  std::vector<std::string> problems() const;
  nlohmann::json to_json() const;
  /// Throws ConfigError listing every problem found.
  static ExperimentConfig from_json(const nlohmann::json& doc);
  /// Reads a JSON file and applies the SRMT_SEED override.
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// Replaces config.seed with $SRMT_SEED when set; throws ConfigError if it
/// is not a non-negative integer.
void apply_seed_override(ExperimentConfig& config);

/// Finished-episode summary gathered during collection.
struct EpisodeSummary {
  std::size_t map_index = 0;
  int steps = 0;
  int agents = 0;
  int arrived = 0;
  long soc = 0;
  int goals = 0;
  double reward = 0.0;  ///< summed over agents and steps
};

struct IterationLog {
  int iteration = 0;
  std::int64_t env_steps = 0;
  ppo::UpdateStats update;
  std::size_t episodes = 0;
  double reward_mean = 0.0;  ///< mean reward per transition in the batch
  double episode_return = 0.0;
  double csr = 0.0, isr = 0.0, soc = 0.0, throughput = 0.0;
  double seconds = 0.0;
  nlohmann::json to_json() const;
};

/// Collect/update loop over a pool of environments.
///
/// Each worker owns `envs_per_worker` environments and its own random
/// streams, so a batch depends only on (config, seed, parameters) and not
/// on how many threads run the workers.
class Trainer {
 public:
  /// `threads` caps worker and learner threads (≥1).
  Trainer(ExperimentConfig config, int threads = 1);
  ~Trainer();

  /// One batch with the current parameters. Environments advance.
  ppo::RolloutBatch collect();
  /// collect() + ppo_update(); returns the log entry.
  IterationLog iterate();
  /// Runs until total_steps, writing logs and checkpoints under
  /// `out_dir` (logs/train.jsonl, checkpoints/). `on_log` sees each entry.
  void run(const std::filesystem::path& out_dir, const std::function<void(const IterationLog&)>& on_log = {});

  void save(const std::filesystem::path& path) const;
  /// Restores parameters, optimizer, schedule, environments and RNGs.
  void load(const std::filesystem::path& path);

  const ExperimentConfig& config() const { return config_; }
  const policy::Policy& policy() const { return policy_; }
  policy::Policy& policy() { return policy_; }
  int iteration() const { return iteration_; }
  std::int64_t env_steps() const { return env_steps_; }
  double lr() const { return lr_; }
  const ScenarioPool& scenarios() const { return *pool_; }
  /// Map index of every episode started so far (for sampler checks).
  const std::vector<std::size_t>& map_draws() const { return map_draws_; }

 private:
  struct EnvRunner;
  struct Worker;

  void collect_worker(Worker& w, std::size_t target);
  void step_env(Worker& w, EnvRunner& r);
  void finish_worker(Worker& w);
  void write_dump(const ppo::RolloutBatch& batch, const std::string& what) const;

  ExperimentConfig config_;
  int threads_;
  std::unique_ptr<ScenarioPool> pool_;
  policy::Policy policy_;
  nk::AdamState adam_;
  double lr_;
  int iteration_ = 0;
  std::int64_t env_steps_ = 0;
  std::vector<std::unique_ptr<Worker>> workers_;
  std::vector<std::size_t> map_draws_;
  std::vector<EpisodeSummary> last_episodes_;
  std::filesystem::path out_dir_;  ///< set by run(); NaN dumps go here
};

/// Policy stored in a trainer checkpoint (architecture from its config).
policy::Policy load_policy(const std::filesystem::path& checkpoint);

}  // namespace srmt::train
