#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "srmt/numkit/autodiff.hpp"
#include "srmt/numkit/params.hpp"

namespace srmt::policy {

enum class CoreKind { SRMT, RMT, Attention, Empty, RNN };

std::string to_string(CoreKind kind);
CoreKind core_from_string(const std::string& name);

struct PolicyConfig {
  CoreKind core = CoreKind::SRMT;
  int obs_size = 5;
  int hidden = 16;       ///< d: attention width, embedding size, GRU hidden size
  int mlp_hidden = 16;   ///< encoder MLP width
  int resnet_blocks = 1;
  int filters = 8;
  int heads = 4;
  int layers = 1;        ///< self-attention blocks (and cross-attention blocks for SRMT)
  int history = 8;       ///< ĥ
  int memory_tokens = 1;
  std::uint64_t seed = 0;

  static PolicyConfig mapf();
  static PolicyConfig lmapf();

  /// All problems at once; empty when valid.
  std::vector<std::string> problems() const;
  void validate() const;
  nlohmann::json to_json() const;
  static PolicyConfig from_json(const nlohmann::json& doc);
  /// Appends problems to `errors` instead of throwing.
  static PolicyConfig from_json(const nlohmann::json& doc, std::vector<std::string>& errors);
};

struct Output {
  nk::Var logits;       ///< [1×5]
  nk::Var value;        ///< [1×1]
  nk::Var next_memory;  ///< [k×d]; empty for memoryless cores
};

class Policy;

/// Parameter indices of one pre-norm attention block. Linear layers and
/// norms each occupy two consecutive parameters.
struct BlockParams {
  int ln1 = -1, ln_src = -1, q = -1, k = -1, v = -1, o = -1, ln2 = -1, fc1 = -1, fc2 = -1;
};

/// Parameters bound either to a tape (training) or as constants (inference).
class Network {
 public:
  /// obs [3×m×m] or [N×3×m×m] → [N×d].
  nk::Var encode(const nk::Var& obs) const;
  /// Memory at t = 0 from the first embedding [1×d]. SRMT/RMT use the init
  /// head; RNN starts from zeros; memoryless cores return an empty tensor.
  nk::Var init_memory(const nk::Var& embedding) const;
  /// One core step. `history` holds up to ĥ earlier embeddings, oldest
  /// first. `pool` [P·k×d] must contain this agent's memory (SRMT only).
  Output forward(const nk::Var& memory, std::span<const nk::Var> history, const nk::Var& current,
                 const nk::Var& pool) const;

  const std::vector<nk::Var>& vars() const { return p_; }

 private:
  friend class Policy;
  Network(const Policy& owner, std::vector<nk::Var> p) : owner_(&owner), p_(std::move(p)) {}

  nk::Var lin(const nk::Var& x, int layer) const;
  nk::Var norm(const nk::Var& x, int layer) const;
  nk::Var block(const nk::Var& x, const nk::Var* source, const BlockParams& b) const;
  nk::Var gru(const nk::Var& x, const nk::Var& h) const;

  const Policy* owner_;
  std::vector<nk::Var> p_;
};

class Policy {
 public:
  explicit Policy(const PolicyConfig& config);

  const PolicyConfig& config() const { return config_; }
  nk::ParamStore& params() { return params_; }
  const nk::ParamStore& params() const { return params_; }

  /// Rows of the memory tensor carried between steps.
  int memory_rows() const;
  bool uses_pool() const { return config_.core == CoreKind::SRMT; }

  Network bind(nk::Tape* tape) const { return Network(*this, params_.bind(tape)); }
  /// Network over caller-supplied values, one per parameter in order.
  Network bind(std::vector<nk::Var> vars) const;

 private:
  friend class Network;
  int add_linear(const std::string& name, int in, int out, double gain);
  int add_norm(const std::string& name, int width);
  BlockParams add_block(const std::string& name, bool cross);

  PolicyConfig config_;
  nk::ParamStore params_;
  std::uint64_t next_seed_ = 0;

  // Parameter indices. A linear layer occupies (w, b); a norm (gain, bias).
  int stem_ = -1;
  std::vector<int> res_;  // two convs per block
  int enc1_ = -1, enc2_ = -1;
  int pos_ = -1;
  std::vector<BlockParams> self_blocks_, cross_blocks_;
  int final_norm_ = -1;
  int init_head_ = -1, mem_head_ = -1, action_head_ = -1, critic_head_ = -1;
  int gru_x_ = -1, gru_h_ = -1;
};

/// Per-agent recurrent state kept between steps of one episode.
struct AgentSlot {
  nk::Tensor memory;                 ///< [k×d] once started
  std::deque<nk::Tensor> history;    ///< [1×d] embeddings, oldest first
  bool started = false;
};

struct JointStep {
  nk::Tensor embeddings;  ///< [N×d]
  nk::Tensor pool;        ///< pool_t that every agent read, [N·k×d]
  std::vector<nk::Tensor> logits;
  std::vector<double> values;
};

/// Evaluates every active agent against the same pool_t, then advances
/// each slot's memory and history. `obs[i]` belongs to `*slots[i]`;
/// `order` optionally permutes evaluation order (results do not depend on it).
JointStep joint_step(const Policy& policy, std::span<const nk::Tensor> obs, std::span<AgentSlot* const> slots,
                     std::span<const int> order = {});

/// Concatenated memories of the given slots, [N·k×d].
nk::Tensor assemble_pool(std::span<AgentSlot* const> slots, int rows, int d);

/// Draws an action from softmax(logits) by inverse CDF on one 53-bit
/// uniform, so the draw is identical on every standard library.
int sample_action(const nk::Tensor& logits, std::mt19937_64& rng);
/// Highest-logit action, lowest index on ties.
int greedy_action(const nk::Tensor& logits);

}  // namespace srmt::policy
