#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "srmt/numkit/params.hpp"
#include "srmt/policy.hpp"

namespace srmt::ppo {

enum class LrSchedule { AdaptiveKL, Constant };

struct PPOConfig {
  double lr = 0.00013;
  LrSchedule schedule = LrSchedule::AdaptiveKL;
  double gamma = 0.9716;
  double clip = 0.2;
  int batch_size = 16384;  ///< transitions per update
  int epochs = 1;
  int minibatches = 1;
  double entropy_coef = 0.0156;
  double value_coef = 0.5;
  double gae_lambda = 0.95;
  int rollout = 8;  ///< recurrence truncation length
  int workers = 4;
  int envs_per_worker = 4;
  std::int64_t total_steps = 20'000'000;
  double kl_target = 0.008;
  double kl_factor = 1.5;
  double lr_min = 1e-6;
  double lr_max = 1e-2;
  /// Global-norm gradient clip; 0 disables it.
  double max_grad_norm = 0.0;
  /// Segments (every n-th) used to measure KL after an update.
  int kl_sample_stride = 4;
  /// Ends an update early once a minibatch's approximate KL exceeds this; 0 disables it.
  double kl_stop = 0.0;

  static PPOConfig mapf();
  static PPOConfig lmapf();

  std::vector<std::string> problems() const;
  nlohmann::json to_json() const;
  static PPOConfig from_json(const nlohmann::json& doc, std::vector<std::string>& errors);
};

std::string to_string(LrSchedule s);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Generalized advantage estimation over one trajectory chunk;
/// `bootstrap` is V(s_T) used when the last step is not terminal.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, std::span<const char> dones,
                      double bootstrap, double gamma, double lambda);

/// Adaptive-KL learning-rate rule with clamping.
double adaptive_kl_lr(double measured_kl, double lr, const PPOConfig& config);

/// Per-element min(ρA, clip(ρ, 1−ε, 1+ε)A); ratio and result are [n×1].
nk::Var clipped_surrogate(const nk::Var& ratio, const nk::Tensor& advantages, double clip);

/// One recorded agent step.
struct Step {
  nk::Tensor obs;      ///< [3×m×m]
  int action = 0;
  double logp = 0.0;   ///< behaviour log-probability of `action`
  nk::Tensor logits;   ///< behaviour logits [1×5]
  double value = 0.0;
  double reward = 0.0;
  bool done = false;
  nk::Tensor pool;     ///< pool_t read at this step (SRMT)
  int own = 0;         ///< this agent's entry in `pool`
  double advantage = 0.0;
  double ret = 0.0;
};

/// ≤ rollout consecutive steps of one agent inside one episode.
struct Segment {
  int env = 0;
  int agent = 0;
  bool episode_start = false;  ///< memory comes from the init head on steps[0]
  nk::Tensor memory;           ///< memory before steps[0] (unused when episode_start)
  std::vector<nk::Tensor> history;
  std::vector<Step> steps;
};

struct RolloutBatch {
  std::vector<Segment> segments;
  std::size_t transitions() const;
  /// Normalizes advantages to mean 0, std 1 over the whole batch.
  void normalize_advantages();
};

struct LossTerms {
  nk::Var total;
  nk::Var policy;
  nk::Var value;
  nk::Var entropy;
  double approx_kl = 0.0;  ///< summed (r - 1) - log r over the taken actions
};

/// Re-runs one segment from its stored snapshots with live parameters and
/// returns the summed (not averaged) loss terms. Other agents' pool
/// entries are constants; this agent's own entry is its live memory.
LossTerms segment_loss(const policy::Network& net, const policy::Policy& policy, const Segment& seg,
                       const PPOConfig& config);

/// Mean KL(behaviour ‖ current) over the sampled segments' steps.
double measure_kl(const policy::Policy& policy, const RolloutBatch& batch, int stride);

struct UpdateStats {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double grad_norm = 0.0;
  double kl = 0.0;
  double approx_kl = 0.0;
  double lr = 0.0;
  std::size_t transitions = 0;
  int updates = 0;  ///< Adam steps taken; fewer than planned after an early stop
};

/// Gradient of the mean loss over the listed segments, summed in fixed
/// chunks so the result does not depend on the thread count.
std::vector<nk::Tensor> batch_gradient(const policy::Policy& policy, const RolloutBatch& batch,
                                       std::span<const std::size_t> segments, const PPOConfig& config, int threads,
                                       UpdateStats& stats);

/// One PPO update (epochs × minibatches Adam steps) followed by KL
/// measurement and, for the adaptive schedule, a learning-rate change.
/// Throws NumericError if the loss is not finite.
UpdateStats ppo_update(policy::Policy& policy, nk::AdamState& adam, RolloutBatch& batch, const PPOConfig& config,
                       double& lr, int threads);

}  // namespace srmt::ppo
