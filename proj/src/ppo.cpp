#include "srmt/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <thread>

#include "srmt/errors.hpp"
#include "srmt/jsonutil.hpp"

namespace srmt::ppo {

using nk::Shape;
using nk::Tensor;
using nk::Var;

namespace {

Var C(Tensor t) { return Var::constant(std::move(t)); }

// Segments per gradient chunk. Chunks are summed in index order, so the
// floating-point reduction is the same for any thread count.
constexpr std::size_t kChunk = 32;

}  // namespace

PPOConfig PPOConfig::mapf() { return {}; }

PPOConfig PPOConfig::lmapf() {
  PPOConfig c;
  c.lr = 0.00022;
  c.schedule = LrSchedule::Constant;
  c.gamma = 0.9756;
  c.entropy_coef = 0.023;
  c.workers = 8;
  c.total_steps = 1'000'000'000;
  return c;
}

std::string to_string(LrSchedule s) { return s == LrSchedule::AdaptiveKL ? "adaptive_kl" : "constant"; }

std::vector<std::string> PPOConfig::problems() const {
  std::vector<std::string> out;
  auto need = [&](bool ok, const char* msg) {
    if (!ok) out.push_back(msg);
  };
  need(lr > 0.0, "ppo.lr: must be positive");
  need(gamma > 0.0 && gamma <= 1.0, "ppo.gamma: must lie in (0, 1]");
  need(gae_lambda >= 0.0 && gae_lambda <= 1.0, "ppo.gae_lambda: must lie in [0, 1]");
  need(clip > 0.0 && clip < 1.0, "ppo.clip: must lie in (0, 1)");
  need(batch_size >= 1, "ppo.batch_size: must be positive");
  need(epochs >= 1, "ppo.epochs: must be positive");
  need(minibatches >= 1, "ppo.minibatches: must be positive");
  need(entropy_coef >= 0.0, "ppo.entropy_coef: must be non-negative");
  need(value_coef >= 0.0, "ppo.value_coef: must be non-negative");
  need(rollout >= 1, "ppo.rollout: must be positive");
  need(workers >= 1, "ppo.workers: must be positive");
  need(envs_per_worker >= 1, "ppo.envs_per_worker: must be positive");
  need(total_steps >= 1, "ppo.total_steps: must be positive");
  need(kl_target > 0.0, "ppo.kl_target: must be positive");
  need(kl_factor > 1.0, "ppo.kl_factor: must exceed 1");
  need(lr_min > 0.0 && lr_min <= lr_max, "ppo.lr_min/lr_max: need 0 < lr_min <= lr_max");
  need(max_grad_norm >= 0.0, "ppo.max_grad_norm: must be non-negative");
  need(kl_sample_stride >= 1, "ppo.kl_sample_stride: must be positive");
  need(kl_stop >= 0.0, "ppo.kl_stop: must be non-negative");
  return out;
}

nlohmann::json PPOConfig::to_json() const {
  return {{"lr", lr},
          {"schedule", to_string(schedule)},
          {"gamma", gamma},
          {"clip", clip},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"minibatches", minibatches},
          {"entropy_coef", entropy_coef},
          {"value_coef", value_coef},
          {"gae_lambda", gae_lambda},
          {"rollout", rollout},
          {"workers", workers},
          {"envs_per_worker", envs_per_worker},
          {"total_steps", total_steps},
          {"kl_target", kl_target},
          {"kl_factor", kl_factor},
          {"lr_min", lr_min},
          {"lr_max", lr_max},
          {"max_grad_norm", max_grad_norm},
          {"kl_sample_stride", kl_sample_stride},
          {"kl_stop", kl_stop}};
}

PPOConfig PPOConfig::from_json(const nlohmann::json& doc, std::vector<std::string>& errors) {
  PPOConfig c;
  FieldReader r(doc, "ppo", errors);
  r.get("lr", c.lr);
  std::string schedule;
  if (r.get("schedule", schedule)) {
    if (schedule == "adaptive_kl")
      c.schedule = LrSchedule::AdaptiveKL;
    else if (schedule == "constant")
      c.schedule = LrSchedule::Constant;
    else
      errors.push_back("ppo.schedule: expected adaptive_kl or constant, got '" + schedule + "'");
  }
  r.get("gamma", c.gamma);
  r.get("clip", c.clip);
  r.get("batch_size", c.batch_size);
  r.get("epochs", c.epochs);
  r.get("minibatches", c.minibatches);
  r.get("entropy_coef", c.entropy_coef);
  r.get("value_coef", c.value_coef);
  r.get("gae_lambda", c.gae_lambda);
  r.get("rollout", c.rollout);
  r.get("workers", c.workers);
  r.get("envs_per_worker", c.envs_per_worker);
  r.get("total_steps", c.total_steps);
  r.get("kl_target", c.kl_target);
  r.get("kl_factor", c.kl_factor);
  r.get("lr_min", c.lr_min);
  r.get("lr_max", c.lr_max);
  r.get("max_grad_norm", c.max_grad_norm);
  r.get("kl_sample_stride", c.kl_sample_stride);
  r.get("kl_stop", c.kl_stop);
  r.finish();
  for (auto& p : c.problems()) errors.push_back(p);
  return c;
}

// ---------------------------------------------------------------------------

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, std::span<const char> dones,
                      double bootstrap, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n)
    throw DimensionError("compute_gae: rewards, values and dones must have equal length");
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_value = bootstrap, next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double live = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * next_value * live - values[i];
    next_adv = delta + gamma * lambda * live * next_adv;
    out.advantages[i] = next_adv;
    out.returns[i] = next_adv + values[i];
    next_value = values[i];
  }
  return out;
}

double adaptive_kl_lr(double measured_kl, double lr, const PPOConfig& config) {
  if (measured_kl > 2.0 * config.kl_target)
    lr /= config.kl_factor;
  else if (measured_kl < 0.5 * config.kl_target)
    lr *= config.kl_factor;
  return std::clamp(lr, config.lr_min, config.lr_max);
}

Var clipped_surrogate(const Var& ratio, const Tensor& advantages, double clip) {
  Var a = C(advantages);
  return nk::minimum(nk::mul(ratio, a), nk::mul(nk::clamp(ratio, 1.0 - clip, 1.0 + clip), a));
}

// ---------------------------------------------------------------------------

std::size_t RolloutBatch::transitions() const {
  std::size_t n = 0;
  for (const auto& s : segments) n += s.steps.size();
  return n;
}

void RolloutBatch::normalize_advantages() {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& s : segments)
    for (const auto& st : s.steps) {
      sum += st.advantage;
      ++n;
    }
  if (n == 0) return;
  const double mean = sum / static_cast<double>(n);
  for (const auto& s : segments)
    for (const auto& st : s.steps) sq += (st.advantage - mean) * (st.advantage - mean);
  const double std = std::sqrt(sq / static_cast<double>(n));
  for (auto& s : segments)
    for (auto& st : s.steps) st.advantage = (st.advantage - mean) / (std + 1e-8);
}

namespace {

struct Replay {
  Var logits;  // [L×5]
  Var values;  // [L]
};

Replay replay_segment(const policy::Network& net, const policy::Policy& policy, const Segment& seg) {
  const auto& pc = policy.config();
  const int len = static_cast<int>(seg.steps.size());
  const int m = pc.obs_size, d = pc.hidden, k = policy.memory_rows();
  const std::size_t obs_numel = static_cast<std::size_t>(3 * m * m);
  Tensor stacked(Shape{len, 3, m, m});
  for (int t = 0; t < len; ++t)
    std::copy(seg.steps[static_cast<std::size_t>(t)].obs.storage().begin(),
              seg.steps[static_cast<std::size_t>(t)].obs.storage().end(),
              stacked.storage().begin() + static_cast<long>(t * obs_numel));
  Var emb = net.encode(C(std::move(stacked)));

  Var mem;
  if (k > 0) mem = seg.episode_start ? net.init_memory(nk::slice_rows(emb, 0, 1)) : C(seg.memory);
  std::deque<Var> hist;
  for (const Tensor& h : seg.history) hist.push_back(C(h));

  std::vector<Var> logits, values;
  for (int t = 0; t < len; ++t) {
    const Step& st = seg.steps[static_cast<std::size_t>(t)];
    Var cur = nk::slice_rows(emb, t, 1);
    Var pool;
    if (policy.uses_pool()) {
      const int rows = st.pool.rows();
      const int before = st.own * k, after = rows - before - k;
      if (before < 0 || after < 0) throw ContractError("segment_loss: own index outside the stored pool");
      std::vector<Var> parts;
      auto slice = [&](int start, int count) {
        return C(Tensor(Shape{count, d}, std::vector<double>(st.pool.storage().begin() + start * d,
                                                             st.pool.storage().begin() + (start + count) * d)));
      };
      if (before > 0) parts.push_back(slice(0, before));
      parts.push_back(mem);
      if (after > 0) parts.push_back(slice(before + k, after));
      pool = parts.size() == 1 ? mem : nk::concat_rows(parts);
    }
    std::vector<Var> hv(hist.begin(), hist.end());
    auto out = net.forward(mem, hv, cur, pool);
    logits.push_back(out.logits);
    values.push_back(out.value);
    if (pc.history > 0) {
      hist.push_back(cur);
      while (static_cast<int>(hist.size()) > pc.history) hist.pop_front();
    }
    if (k > 0) mem = out.next_memory;
  }
  return {nk::concat_rows(logits), nk::reshape(nk::concat_rows(values), Shape{len})};
}

}  // namespace

LossTerms segment_loss(const policy::Network& net, const policy::Policy& policy, const Segment& seg,
                       const PPOConfig& config) {
  const int len = static_cast<int>(seg.steps.size());
  if (len == 0) throw ContractError("segment_loss: empty segment");
  Replay r = replay_segment(net, policy, seg);
  std::vector<int> actions;
  Tensor old_logp(Shape{len}), adv(Shape{len}), ret(Shape{len});
  for (int t = 0; t < len; ++t) {
    const Step& st = seg.steps[static_cast<std::size_t>(t)];
    actions.push_back(st.action);
    old_logp[static_cast<std::size_t>(t)] = st.logp;
    adv[static_cast<std::size_t>(t)] = st.advantage;
    ret[static_cast<std::size_t>(t)] = st.ret;
  }
  Var logp_all = nk::log_softmax(r.logits);
  Var ratio = nk::exp(nk::sub(nk::pick(logp_all, actions), C(old_logp)));
  LossTerms terms;
  terms.policy = nk::scale(nk::sum(clipped_surrogate(ratio, adv, config.clip)), -1.0);
  for (double r : ratio.value().storage()) terms.approx_kl += (r - 1.0) - std::log(r);
  Var err = nk::sub(r.values, C(ret));
  terms.value = nk::sum(nk::mul(err, err));
  terms.entropy = nk::scale(nk::sum(nk::mul(nk::exp(logp_all), logp_all)), -1.0);
  terms.total = nk::sub(nk::add(terms.policy, nk::scale(terms.value, config.value_coef)),
                        nk::scale(terms.entropy, config.entropy_coef));
  return terms;
}

double measure_kl(const policy::Policy& policy, const RolloutBatch& batch, int stride) {
  const auto net = policy.bind(nullptr);
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < batch.segments.size(); i += static_cast<std::size_t>(stride)) {
    const Segment& seg = batch.segments[i];
    Tensor now = nk::log_softmax(replay_segment(net, policy, seg).logits).value();
    for (std::size_t t = 0; t < seg.steps.size(); ++t) {
      Tensor old = nk::log_softmax(C(seg.steps[t].logits)).value();
      for (int a = 0; a < 5; ++a) {
        const double lo = old[static_cast<std::size_t>(a)];
        total += std::exp(lo) * (lo - now[t * 5 + static_cast<std::size_t>(a)]);
      }
      ++n;
    }
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

std::vector<Tensor> batch_gradient(const policy::Policy& policy, const RolloutBatch& batch,
                                   std::span<const std::size_t> segments, const PPOConfig& config, int threads,
                                   UpdateStats& stats) {
  const auto& params = policy.params();
  std::size_t transitions = 0;
  for (std::size_t i : segments) transitions += batch.segments[i].steps.size();
  if (transitions == 0) throw ContractError("batch_gradient: no transitions");
  const double inv = 1.0 / static_cast<double>(transitions);

  const std::size_t chunks = (segments.size() + kChunk - 1) / kChunk;
  struct ChunkResult {
    std::vector<Tensor> grads;
    double loss = 0, policy = 0, value = 0, entropy = 0, kl = 0;
  };
  std::vector<ChunkResult> results(chunks);
  auto run_chunk = [&](std::size_t c) {
    ChunkResult& res = results[c];
    for (std::size_t i = 0; i < params.size(); ++i) res.grads.push_back(Tensor::zeros(params.value(i).shape()));
    const std::size_t end = std::min(segments.size(), (c + 1) * kChunk);
    for (std::size_t s = c * kChunk; s < end; ++s) {
      nk::Tape tape;
      auto net = policy.bind(&tape);
      LossTerms terms = segment_loss(net, policy, batch.segments[segments[s]], config);
      res.loss += terms.total.value().item();
      res.policy += terms.policy.value().item();
      res.value += terms.value.value().item();
      res.entropy += terms.entropy.value().item();
      res.kl += terms.approx_kl;
      auto grads = params.gradients(tape.backward(terms.total));
      for (std::size_t i = 0; i < grads.size(); ++i) res.grads[i] += grads[i];
    }
  };
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(chunks)));
  if (workers == 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t c = static_cast<std::size_t>(w); c < chunks; c += static_cast<std::size_t>(workers)) run_chunk(c);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<Tensor> total;
  for (std::size_t i = 0; i < params.size(); ++i) total.push_back(Tensor::zeros(params.value(i).shape()));
  double loss = 0, pl = 0, vl = 0, ent = 0, kl = 0;
  for (const auto& r : results) {
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += r.grads[i];
    loss += r.loss;
    pl += r.policy;
    vl += r.value;
    ent += r.entropy;
    kl += r.kl;
  }
  for (auto& g : total)
    for (double& v : g.storage()) v *= inv;
  stats.loss = loss * inv;
  stats.policy_loss = pl * inv;
  stats.value_loss = vl * inv;
  stats.entropy = ent * inv;
  stats.approx_kl = kl * inv;
  stats.transitions = transitions;
  return total;
}

UpdateStats ppo_update(policy::Policy& policy, nk::AdamState& adam, RolloutBatch& batch, const PPOConfig& config,
                       double& lr, int threads) {
  UpdateStats stats;
  const std::size_t n = batch.segments.size();
  if (n == 0) throw ContractError("ppo_update: empty batch");
  batch.normalize_advantages();
  const std::size_t groups = std::min<std::size_t>(static_cast<std::size_t>(config.minibatches), n);
  double loss = 0, pl = 0, vl = 0, ent = 0, gn = 0, akl = 0;
  int updates = 0;
  bool stop = false;
  for (int epoch = 0; epoch < config.epochs && !stop; ++epoch)
    for (std::size_t g = 0; g < groups; ++g) {
      std::vector<std::size_t> idx;
      for (std::size_t i = g; i < n; i += groups) idx.push_back(i);
      UpdateStats part;
      auto grads = batch_gradient(policy, batch, idx, config, threads, part);
      if (!std::isfinite(part.loss)) {
        throw NumericError("ppo_update: non-finite loss (policy " + std::to_string(part.policy_loss) + ", value " +
                           std::to_string(part.value_loss) + ", entropy " + std::to_string(part.entropy) + ")");
      }
      // The first step always runs, so an update is never empty.
      if (config.kl_stop > 0.0 && updates > 0 && part.approx_kl > config.kl_stop) {
        stop = true;
        break;
      }
      gn += config.max_grad_norm > 0.0 ? nk::clip_grad_norm(grads, config.max_grad_norm) : nk::global_norm(grads);
      nk::adam_step(policy.params(), grads, adam, lr);
      loss += part.loss;
      pl += part.policy_loss;
      vl += part.value_loss;
      ent += part.entropy;
      akl = std::max(akl, part.approx_kl);
      ++updates;
    }
  stats.loss = loss / updates;
  stats.policy_loss = pl / updates;
  stats.value_loss = vl / updates;
  stats.entropy = ent / updates;
  stats.grad_norm = gn / updates;
  stats.approx_kl = akl;
  stats.updates = updates;
  stats.transitions = batch.transitions();
  stats.kl = measure_kl(policy, batch, config.kl_sample_stride);
  if (config.schedule == LrSchedule::AdaptiveKL) lr = adaptive_kl_lr(stats.kl, lr, config);
  stats.lr = lr;
  return stats;
}

}  // namespace srmt::ppo
