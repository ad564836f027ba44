#include "srmt/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "srmt/errors.hpp"
#include "srmt/jsonutil.hpp"

namespace srmt::policy {

using nk::Shape;
using nk::Tensor;
using nk::Var;

namespace {

constexpr int kActions = 5;

const std::pair<CoreKind, const char*> kCoreNames[] = {{CoreKind::SRMT, "SRMT"},
                                                       {CoreKind::RMT, "RMT"},
                                                       {CoreKind::Attention, "Attention"},
                                                       {CoreKind::Empty, "Empty"},
                                                       {CoreKind::RNN, "RNN"}};

bool has_transformer(CoreKind k) { return k == CoreKind::SRMT || k == CoreKind::RMT || k == CoreKind::Attention; }

}  // namespace

std::string to_string(CoreKind kind) {
  for (auto [k, n] : kCoreNames)
    if (k == kind) return n;
  return "?";
}

CoreKind core_from_string(const std::string& name) {
  for (auto [k, n] : kCoreNames)
    if (name == n) return k;
  throw ConfigError("unknown core '" + name + "' (expected SRMT, RMT, Attention, Empty or RNN)");
}

// ---------------------------------------------------------------------------

PolicyConfig PolicyConfig::mapf() { return {}; }

PolicyConfig PolicyConfig::lmapf() {
  PolicyConfig c;
  c.obs_size = 11;
  c.hidden = 512;
  c.mlp_hidden = 512;
  c.resnet_blocks = 8;
  c.filters = 64;
  c.heads = 8;
  c.layers = 2;
  return c;
}

std::vector<std::string> PolicyConfig::problems() const {
  std::vector<std::string> out;
  if (obs_size < 3 || obs_size % 2 == 0) out.push_back("policy.obs_size: must be odd and at least 3");
  if (hidden < 2) out.push_back("policy.hidden: must be at least 2");
  if (mlp_hidden < 1) out.push_back("policy.mlp_hidden: must be positive");
  if (resnet_blocks < 0) out.push_back("policy.resnet_blocks: must be non-negative");
  if (filters < 1) out.push_back("policy.filters: must be positive");
  if (heads < 1 || (hidden >= 2 && hidden % std::max(heads, 1) != 0))
    out.push_back("policy.heads: must divide policy.hidden");
  if (layers < 1) out.push_back("policy.layers: must be positive");
  if (history < 0 || history > 64) out.push_back("policy.history: must be in [0, 64]");
  if (memory_tokens < 1) out.push_back("policy.memory_tokens: must be positive");
  return out;
}

void PolicyConfig::validate() const {
  auto p = problems();
  if (!p.empty()) throw ConfigError(join_problems(p));
}

nlohmann::json PolicyConfig::to_json() const {
  return {{"core", to_string(core)},         {"obs_size", obs_size}, {"hidden", hidden},
          {"mlp_hidden", mlp_hidden},        {"resnet_blocks", resnet_blocks}, {"filters", filters},
          {"heads", heads},                  {"layers", layers},     {"history", history},
          {"memory_tokens", memory_tokens}, {"seed", seed}};
}

PolicyConfig PolicyConfig::from_json(const nlohmann::json& doc) {
  std::vector<std::string> errors;
  PolicyConfig c = from_json(doc, errors);
  if (!errors.empty()) throw ConfigError(join_problems(errors));
  return c;
}

PolicyConfig PolicyConfig::from_json(const nlohmann::json& doc, std::vector<std::string>& errors) {
  PolicyConfig c;
  FieldReader r(doc, "policy", errors);
  std::string core;
  if (r.get("core", core)) {
    try {
      c.core = core_from_string(core);
    } catch (const ConfigError& e) {
      errors.push_back(std::string("policy.core: ") + e.what());
    }
  }
  r.get("obs_size", c.obs_size);
  r.get("hidden", c.hidden);
  r.get("mlp_hidden", c.mlp_hidden);
  r.get("resnet_blocks", c.resnet_blocks);
  r.get("filters", c.filters);
  r.get("heads", c.heads);
  r.get("layers", c.layers);
  r.get("history", c.history);
  r.get("memory_tokens", c.memory_tokens);
  r.get("seed", c.seed);
  r.finish();
  for (auto& p : c.problems()) errors.push_back(p);
  return c;
}

// ---------------------------------------------------------------------------

int Policy::add_linear(const std::string& name, int in, int out, double gain) {
  const int idx = params_.add(name + ".w", nk::orthogonal_init(in, out, config_.seed * 7919 + next_seed_++, gain));
  params_.add(name + ".b", Tensor::zeros(Shape{out}));
  return idx;
}

int Policy::add_norm(const std::string& name, int width) {
  const int idx = params_.add(name + ".gain", Tensor::ones(Shape{width}));
  params_.add(name + ".bias", Tensor::zeros(Shape{width}));
  return idx;
}

BlockParams Policy::add_block(const std::string& name, bool cross) {
  const int d = config_.hidden;
  BlockParams b;
  b.ln1 = add_norm(name + ".ln1", d);
  if (cross) b.ln_src = add_norm(name + ".ln_src", d);
  b.q = add_linear(name + ".q", d, d, 1.0);
  b.k = add_linear(name + ".k", d, d, 1.0);
  b.v = add_linear(name + ".v", d, d, 1.0);
  b.o = add_linear(name + ".o", d, d, 1.0);
  b.ln2 = add_norm(name + ".ln2", d);
  b.fc1 = add_linear(name + ".fc1", d, 4 * d, std::sqrt(2.0));
  b.fc2 = add_linear(name + ".fc2", 4 * d, d, 1.0);
  return b;
}

Policy::Policy(const PolicyConfig& config) : config_(config) {
  config_.validate();
  const int d = config_.hidden, f = config_.filters, m = config_.obs_size;
  auto conv = [&](const std::string& name, int cin) {
    Tensor k = nk::orthogonal_init(f, cin * 9, config_.seed * 7919 + next_seed_++, std::sqrt(2.0)).reshaped(Shape{f, cin, 3, 3});
    const int idx = params_.add(name + ".kernel", std::move(k));
    params_.add(name + ".bias", Tensor::zeros(Shape{f}));
    return idx;
  };
  stem_ = conv("encoder.stem", 3);
  for (int b = 0; b < config_.resnet_blocks; ++b) {
    res_.push_back(conv("encoder.res" + std::to_string(b) + ".conv1", f));
    res_.push_back(conv("encoder.res" + std::to_string(b) + ".conv2", f));
  }
  enc1_ = add_linear("encoder.fc1", f * m * m, config_.mlp_hidden, std::sqrt(2.0));
  enc2_ = add_linear("encoder.fc2", config_.mlp_hidden, d, 1.0);

  const CoreKind core = config_.core;
  if (has_transformer(core)) {
    const int slots = memory_rows() + config_.history + 1;
    pos_ = params_.add("core.pos", nk::orthogonal_init(slots, d, config_.seed * 7919 + next_seed_++, 0.1));
    for (int l = 0; l < config_.layers; ++l) {
      self_blocks_.push_back(add_block("core.self" + std::to_string(l), false));
      if (core == CoreKind::SRMT) cross_blocks_.push_back(add_block("core.cross" + std::to_string(l), true));
    }
    final_norm_ = add_norm("core.ln_f", d);
  }
  if (core == CoreKind::SRMT || core == CoreKind::RMT) {
    init_head_ = add_linear("core.init_head", d, memory_rows() * d, 1.0);
    mem_head_ = add_linear("core.memory_head", d, d, 1.0);
  }
  if (core == CoreKind::RNN) {
    gru_x_ = add_linear("core.gru.x", d, 3 * d, 1.0);
    gru_h_ = add_linear("core.gru.h", d, 3 * d, 1.0);
  }
  action_head_ = add_linear("head.action", d, kActions, 0.01);
  critic_head_ = add_linear("head.critic", d, 1, 1.0);
}

Network Policy::bind(std::vector<Var> vars) const {
  if (vars.size() != params_.size()) throw ContractError("bind: one value per parameter required");
  for (std::size_t i = 0; i < vars.size(); ++i)
    if (vars[i].shape() != params_.value(i).shape()) throw DimensionError("bind: shape mismatch for " + params_[i].name);
  return Network(*this, std::move(vars));
}

int Policy::memory_rows() const {
  switch (config_.core) {
    case CoreKind::SRMT:
    case CoreKind::RMT:
      return config_.memory_tokens;
    case CoreKind::RNN:
      return 1;
    default:
      return 0;
  }
}

// ---------------------------------------------------------------------------

Var Network::lin(const Var& x, int layer) const {
  return nk::linear(x, p_[static_cast<std::size_t>(layer)], p_[static_cast<std::size_t>(layer) + 1]);
}

Var Network::norm(const Var& x, int layer) const {
  return nk::layer_norm(x, p_[static_cast<std::size_t>(layer)], p_[static_cast<std::size_t>(layer) + 1]);
}

Var Network::encode(const Var& obs) const {
  const auto& c = owner_->config_;
  const Shape& s = obs.shape();
  const bool single = s.rank() == 3;
  const int off = single ? 0 : 1;
  if ((s.rank() != 3 && s.rank() != 4) || s[off] != 3 || s[off + 1] != c.obs_size || s[off + 2] != c.obs_size)
    throw DimensionError("encode: expected [3×" + std::to_string(c.obs_size) + "×" + std::to_string(c.obs_size) +
                         "] observations, got " + s.str());
  const int n = single ? 1 : s[0];
  Var x = single ? nk::reshape(obs, Shape{1, 3, c.obs_size, c.obs_size}) : obs;
  auto conv = [&](const Var& in, int idx) {
    return nk::conv2d(in, p_[static_cast<std::size_t>(idx)], p_[static_cast<std::size_t>(idx) + 1]);
  };
  x = nk::relu(conv(x, owner_->stem_));
  for (std::size_t b = 0; b < owner_->res_.size(); b += 2) {
    Var y = conv(nk::relu(conv(x, owner_->res_[b])), owner_->res_[b + 1]);
    x = nk::relu(nk::add(x, y));
  }
  x = nk::reshape(x, Shape{n, c.filters * c.obs_size * c.obs_size});
  return lin(nk::relu(lin(x, owner_->enc1_)), owner_->enc2_);
}

Var Network::init_memory(const Var& embedding) const {
  const auto& c = owner_->config_;
  switch (c.core) {
    case CoreKind::SRMT:
    case CoreKind::RMT:
      return nk::reshape(lin(embedding, owner_->init_head_), Shape{c.memory_tokens, c.hidden});
    case CoreKind::RNN:
      return Var::constant(Tensor::zeros(Shape{1, c.hidden}));
    default:
      return Var();
  }
}

Var Network::block(const Var& x, const Var* source, const BlockParams& b) const {
  Var a = norm(x, b.ln1);
  Var src = source ? norm(*source, b.ln_src) : a;
  Var attn = nk::attention(lin(a, b.q), lin(src, b.k), lin(src, b.v), owner_->config_.heads);
  Var h = nk::add(x, lin(attn, b.o));
  return nk::add(h, lin(nk::relu(lin(norm(h, b.ln2), b.fc1)), b.fc2));
}

Var Network::gru(const Var& x, const Var& h) const {
  const int d = owner_->config_.hidden;
  Var gx = lin(x, owner_->gru_x_), gh = lin(h, owner_->gru_h_);
  Var r = nk::sigmoid(nk::add(nk::slice_cols(gx, 0, d), nk::slice_cols(gh, 0, d)));
  Var z = nk::sigmoid(nk::add(nk::slice_cols(gx, d, d), nk::slice_cols(gh, d, d)));
  Var n = nk::tanh(nk::add(nk::slice_cols(gx, 2 * d, d), nk::mul(r, nk::slice_cols(gh, 2 * d, d))));
  return nk::add(nk::mul(nk::add_scalar(nk::scale(z, -1.0), 1.0), n), nk::mul(z, h));
}

namespace {

// Row order that sorts the pool lexicographically by value. Attention over
// a canonically ordered pool is invariant to how callers order the agents,
// bit for bit, since the softmax and weighted sums always accumulate in the
// same order.
std::vector<int> canonical_rows(const Tensor& pool) {
  const int rows = pool.rows(), cols = pool.cols();
  std::vector<int> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const double* ra = &pool[static_cast<std::size_t>(a) * cols];
    const double* rb = &pool[static_cast<std::size_t>(b) * cols];
    return std::lexicographical_compare(ra, ra + cols, rb, rb + cols);
  });
  return order;
}

}  // namespace

Output Network::forward(const Var& memory, std::span<const Var> history, const Var& current, const Var& pool) const {
  const auto& c = owner_->config_;
  const int d = c.hidden;
  if (current.shape() != Shape{1, d}) throw DimensionError("forward: current embedding must be [1×d], got " + current.shape().str());
  Output out;
  Var h;
  switch (c.core) {
    case CoreKind::Empty:
      h = current;
      break;
    case CoreKind::RNN:
      if (!memory.defined() || memory.shape() != Shape{1, d}) throw DimensionError("forward: RNN state must be [1×d]");
      h = gru(current, memory);
      out.next_memory = h;
      break;
    default: {
      const int k = owner_->memory_rows();
      const int hn = static_cast<int>(history.size());
      if (hn > c.history)
        throw ContractError("forward: history holds " + std::to_string(hn) + " entries, limit " + std::to_string(c.history));
      if (k > 0 && (!memory.defined() || memory.shape() != Shape{k, d}))
        throw DimensionError("forward: memory must be [" + std::to_string(k) + "×" + std::to_string(d) + "]");
      std::vector<Var> parts;
      if (k > 0) parts.push_back(memory);
      for (const Var& e : history) parts.push_back(e);
      parts.push_back(current);
      Var x = nk::concat_rows(parts);
      // Slots: memory at [0, k), history by age ending just before the
      // current observation at k + ĥ.
      const Var& pos = p_[static_cast<std::size_t>(owner_->pos_)];
      Var pos_rows = hn + 1 + k == k + c.history + 1
                         ? pos
                         : (k > 0 ? nk::concat_rows({nk::slice_rows(pos, 0, k), nk::slice_rows(pos, k + c.history - hn, hn + 1)})
                                  : nk::slice_rows(pos, c.history - hn, hn + 1));
      x = nk::add(x, pos_rows);
      Var src;
      if (c.core == CoreKind::SRMT) {
        if (!pool.defined() || pool.value().numel() == 0) throw ContractError("forward: SRMT needs a non-empty memory pool");
        if (pool.value().rank() != 2 || pool.value().cols() != d)
          throw DimensionError("forward: pool must be [P×" + std::to_string(d) + "], got " + pool.shape().str());
        src = nk::gather_rows(pool, canonical_rows(pool.value()));
      }
      for (int l = 0; l < c.layers; ++l) {
        x = block(x, nullptr, owner_->self_blocks_[static_cast<std::size_t>(l)]);
        if (c.core == CoreKind::SRMT) x = block(x, &src, owner_->cross_blocks_[static_cast<std::size_t>(l)]);
      }
      x = norm(x, owner_->final_norm_);
      h = nk::slice_rows(x, k + hn, 1);
      if (k > 0) out.next_memory = nk::tanh(lin(nk::slice_rows(x, 0, k), owner_->mem_head_));
      break;
    }
  }
  out.logits = lin(h, owner_->action_head_);
  out.value = lin(h, owner_->critic_head_);
  return out;
}

// ---------------------------------------------------------------------------

Tensor assemble_pool(std::span<AgentSlot* const> slots, int rows, int d) {
  Tensor pool(Shape{static_cast<int>(slots.size()) * rows, d});
  std::size_t at = 0;
  for (const AgentSlot* s : slots) {
    if (static_cast<int>(s->memory.numel()) != rows * d) throw ContractError("assemble_pool: slot has no memory");
    std::copy(s->memory.storage().begin(), s->memory.storage().end(), pool.storage().begin() + static_cast<long>(at));
    at += s->memory.numel();
  }
  return pool;
}

JointStep joint_step(const Policy& policy, std::span<const Tensor> obs, std::span<AgentSlot* const> slots,
                     std::span<const int> order) {
  if (obs.size() != slots.size()) throw ContractError("joint_step: one observation per agent slot required");
  const auto& c = policy.config();
  const int n = static_cast<int>(obs.size());
  const int m = c.obs_size, d = c.hidden;
  const std::size_t obs_numel = static_cast<std::size_t>(3 * m * m);
  JointStep step;
  if (n == 0) return step;

  Tensor stacked(Shape{n, 3, m, m});
  for (int i = 0; i < n; ++i) {
    if (obs[static_cast<std::size_t>(i)].numel() != obs_numel) throw DimensionError("joint_step: observation size mismatch");
    std::copy(obs[static_cast<std::size_t>(i)].storage().begin(), obs[static_cast<std::size_t>(i)].storage().end(),
              stacked.storage().begin() + static_cast<long>(i * obs_numel));
  }
  const Network net = policy.bind(nullptr);
  step.embeddings = net.encode(Var::constant(std::move(stacked))).value();
  auto row = [&](int i) {
    return Tensor(Shape{1, d}, std::vector<double>(step.embeddings.storage().begin() + i * d,
                                                   step.embeddings.storage().begin() + (i + 1) * d));
  };

  const int k = policy.memory_rows();
  for (int i = 0; i < n; ++i) {
    AgentSlot& s = *slots[static_cast<std::size_t>(i)];
    if (!s.started) {
      s.memory = k > 0 ? net.init_memory(Var::constant(row(i))).value() : Tensor();
      s.history.clear();
      s.started = true;
    }
  }
  if (policy.uses_pool()) step.pool = assemble_pool(slots, k, d);

  std::vector<int> seq(static_cast<std::size_t>(n));
  if (order.empty()) {
    std::iota(seq.begin(), seq.end(), 0);
  } else {
    if (order.size() != seq.size()) throw ContractError("joint_step: order must list every agent once");
    seq.assign(order.begin(), order.end());
  }
  step.logits.resize(static_cast<std::size_t>(n));
  step.values.resize(static_cast<std::size_t>(n));
  std::vector<Tensor> next(static_cast<std::size_t>(n));
  const Var pool = policy.uses_pool() ? Var::constant(step.pool) : Var();
  for (int i : seq) {
    const AgentSlot& s = *slots[static_cast<std::size_t>(i)];
    std::vector<Var> hist;
    for (const Tensor& e : s.history) hist.push_back(Var::constant(e));
    Output o = net.forward(k > 0 ? Var::constant(s.memory) : Var(), hist, Var::constant(row(i)), pool);
    step.logits[static_cast<std::size_t>(i)] = o.logits.value();
    step.values[static_cast<std::size_t>(i)] = o.value.value().item();
    if (o.next_memory.defined()) next[static_cast<std::size_t>(i)] = o.next_memory.value();
  }
  for (int i = 0; i < n; ++i) {
    AgentSlot& s = *slots[static_cast<std::size_t>(i)];
    if (c.history > 0) {
      s.history.push_back(row(i));
      while (static_cast<int>(s.history.size()) > c.history) s.history.pop_front();
    }
    if (k > 0) s.memory = std::move(next[static_cast<std::size_t>(i)]);
  }
  return step;
}

int sample_action(const Tensor& logits, std::mt19937_64& rng) {
  const auto& z = logits.storage();
  if (z.empty()) throw ContractError("sample_action: empty logits");
  const double top = *std::max_element(z.begin(), z.end());
  std::vector<double> w(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += w[i] = std::exp(z[i] - top);
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(w.size()) - 1;
}

int greedy_action(const Tensor& logits) {
  const auto& z = logits.storage();
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

}  // namespace srmt::policy
