#include "srmt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "srmt/errors.hpp"
#include "srmt/jsonutil.hpp"

namespace srmt::train {

using nk::Shape;
using nk::Tensor;

namespace {

nlohmann::json tensor_json(const Tensor& t) {
  if (t.empty() && t.rank() == 0) return nullptr;
  return {{"shape", t.shape().dims()}, {"data", t.storage()}};
}

Tensor json_tensor(const nlohmann::json& j) {
  if (j.is_null()) return Tensor();
  auto dims = j.at("shape").get<std::vector<int>>();
  return Tensor(Shape(std::span<const int>(dims)), j.at("data").get<std::vector<double>>());
}

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void rng_restore(std::mt19937_64& rng, const std::string& text) {
  std::istringstream is(text);
  is >> rng;
  if (!is) throw IoError("checkpoint holds a malformed random-number state");
}

// Runs f(i) for i in [0, n) on up to `threads` threads.
template <class F>
void parallel_for(std::size_t n, int threads, F&& f) {
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = static_cast<std::size_t>(w); i < n; i += static_cast<std::size_t>(workers)) f(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

std::vector<std::string> ExperimentConfig::problems() const {
  std::vector<std::string> out;
  if (name.empty()) out.push_back("name: must not be empty");
  if (env.obs_size != policy.obs_size)
    out.push_back("env.obs_size (" + std::to_string(env.obs_size) + ") must equal policy.obs_size (" +
                  std::to_string(policy.obs_size) + ")");
  if (env.episode_length < 1) out.push_back("env.episode_length: must be positive");
  if (checkpoint_every < 1) out.push_back("checkpoint_every: must be positive");
  if (env.mode == env::Mode::Classical && reward.scheme == rewards::RewardScheme::LifelongFollow)
    out.push_back("reward.scheme: LifelongFollow needs lifelong mode");
  for (auto& p : maps.problems()) out.push_back(p);
  for (auto& p : policy.problems()) out.push_back(p);
  for (auto& p : ppo.problems()) out.push_back(p);
  return out;
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"name", name},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"output_dir", output_dir},
          {"env", {{"mode", env::to_string(env.mode)}, {"obs_size", env.obs_size}, {"episode_length", env.episode_length}}},
          {"reward", {{"scheme", rewards::to_string(reward.scheme)}, {"lifelong_goal_bonus", reward.lifelong_goal_bonus}}},
          {"maps", maps.to_json()},
          {"policy", policy.to_json()},
          {"ppo", ppo.to_json()}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& doc) {
  std::vector<std::string> errors;
  ExperimentConfig c;
  FieldReader r(doc, "", errors);
  r.get("name", c.name);
  r.get("seed", c.seed);
  r.get("checkpoint_every", c.checkpoint_every);
  r.get("output_dir", c.output_dir);
  if (const auto* e = r.child("env")) {
    FieldReader er(*e, "env", errors);
    std::string mode;
    if (er.get("mode", mode)) {
      try {
        c.env.mode = env::mode_from_string(mode);
      } catch (const ConfigError& ex) {
        errors.push_back(std::string("env.mode: ") + ex.what());
      }
    }
    er.get("obs_size", c.env.obs_size);
    er.get("episode_length", c.env.episode_length);
    er.finish();
  }
  if (const auto* w = r.child("reward")) {
    FieldReader wr(*w, "reward", errors);
    std::string scheme;
    if (wr.get("scheme", scheme)) {
      try {
        c.reward.scheme = rewards::scheme_from_string(scheme);
      } catch (const ConfigError& ex) {
        errors.push_back(std::string("reward.scheme: ") + ex.what());
      }
    }
    wr.get("lifelong_goal_bonus", c.reward.lifelong_goal_bonus);
    wr.finish();
  }
  // Sub-configs validate themselves; skip their problems() here to avoid
  // reporting the same issue twice.
  std::vector<std::string> sub;
  if (const auto* m = r.child("maps")) c.maps = MapSourceConfig::from_json(*m, sub);
  if (const auto* p = r.child("policy")) c.policy = policy::PolicyConfig::from_json(*p, sub);
  if (const auto* p = r.child("ppo")) c.ppo = ppo::PPOConfig::from_json(*p, sub);
  r.finish();
  errors.insert(errors.end(), sub.begin(), sub.end());
  for (auto& p : c.problems())
    if (std::find(errors.begin(), errors.end(), p) == errors.end()) errors.push_back(p);
  if (!errors.empty()) throw ConfigError(join_problems(errors));
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  auto c = from_json(doc);
  apply_seed_override(c);
  return c;
}

void apply_seed_override(ExperimentConfig& config) {
  const char* env_seed = std::getenv("SRMT_SEED");
  if (!env_seed || !*env_seed) return;
  const std::string text(env_seed);
  if (text.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("SRMT_SEED must be a non-negative integer, got '" + text + "'");
  try {
    config.seed = std::stoull(text);
  } catch (const std::exception&) {
    throw ConfigError("SRMT_SEED is out of range: '" + text + "'");
  }
}

nlohmann::json IterationLog::to_json() const {
  return {{"iteration", iteration},
          {"env_steps", env_steps},
          {"lr", update.lr},
          {"kl", update.kl},
          {"approx_kl", update.approx_kl},
          {"updates", update.updates},
          {"loss", update.loss},
          {"policy_loss", update.policy_loss},
          {"value_loss", update.value_loss},
          {"entropy", update.entropy},
          {"grad_norm", update.grad_norm},
          {"transitions", update.transitions},
          {"episodes", episodes},
          {"reward_mean", reward_mean},
          {"episode_return", episode_return},
          {"csr", csr},
          {"isr", isr},
          {"soc", soc},
          {"throughput", throughput},
          {"seconds", seconds}};
}

// ---------------------------------------------------------------------------
// Trainer

struct Trainer::EnvRunner {
  std::size_t id = 0;
  env::Environment env;
  std::vector<policy::AgentSlot> slots;
  std::vector<ppo::Segment> open;  // per agent; empty steps = none open
  bool needs_reset = true;
  std::size_t map_index = 0;
  double episode_reward = 0.0;
};

struct Trainer::Worker {
  std::mt19937_64 rng;
  std::vector<EnvRunner> envs;
  std::size_t cursor = 0;
  // Per-collection output.
  std::vector<ppo::Segment> segments;
  std::vector<EpisodeSummary> episodes;
  std::vector<std::size_t> draws;
  std::size_t transitions = 0;
};

Trainer::Trainer(ExperimentConfig config, int threads)
    : config_([&] {
        auto p = config.problems();
        if (!p.empty()) throw ConfigError(join_problems(p));
        config.policy.seed = config.seed;
        return std::move(config);
      }()),
      threads_(std::max(1, threads)),
      pool_(std::make_unique<ScenarioPool>(config_.maps, config_.seed)),
      policy_(config_.policy),
      adam_(nk::AdamState::for_params(policy_.params())),
      lr_(config_.ppo.lr) {
  for (int w = 0; w < config_.ppo.workers; ++w) {
    auto worker = std::make_unique<Worker>();
    std::seed_seq seq{config_.seed, static_cast<std::uint64_t>(w), static_cast<std::uint64_t>(0x776f726b)};
    worker->rng.seed(seq);
    worker->envs.resize(static_cast<std::size_t>(config_.ppo.envs_per_worker));
    for (int e = 0; e < config_.ppo.envs_per_worker; ++e)
      worker->envs[static_cast<std::size_t>(e)].id = static_cast<std::size_t>(w * config_.ppo.envs_per_worker + e);
    workers_.push_back(std::move(worker));
  }
}

Trainer::~Trainer() = default;

void Trainer::step_env(Worker& w, EnvRunner& r) {
  if (r.needs_reset) {
    r.map_index = static_cast<std::size_t>(w.rng() % pool_->size());
    const std::uint64_t episode_seed = w.rng();
    Scenario sc = pool_->draw(r.map_index, episode_seed);
    r.env.reset(sc.map, std::move(sc.starts), std::move(sc.goals), config_.env, episode_seed);
    const std::size_t n = r.env.state().agents.size();
    r.slots.assign(n, policy::AgentSlot{});
    r.open.assign(n, ppo::Segment{});
    r.needs_reset = false;
    r.episode_reward = 0.0;
    w.draws.push_back(r.map_index);
  }
  const auto live = r.env.state().active_agents();
  auto obs = r.env.observations();
  std::vector<policy::AgentSlot*> ptrs;
  for (int i : live) {
    auto& slot = r.slots[static_cast<std::size_t>(i)];
    auto& seg = r.open[static_cast<std::size_t>(i)];
    if (seg.steps.empty()) {
      seg.env = static_cast<int>(r.id);
      seg.agent = i;
      seg.episode_start = !slot.started;
      seg.memory = slot.memory;
      seg.history.assign(slot.history.begin(), slot.history.end());
    }
    ptrs.push_back(&slot);
  }
  auto js = policy::joint_step(policy_, obs, ptrs);

  std::vector<env::Action> actions;
  std::vector<int> chosen;
  for (std::size_t k = 0; k < live.size(); ++k) {
    chosen.push_back(policy::sample_action(js.logits[k], w.rng));
    actions.push_back(static_cast<env::Action>(chosen.back()));
  }
  auto result = r.env.step(actions);

  for (std::size_t k = 0; k < live.size(); ++k) {
    const auto i = static_cast<std::size_t>(live[k]);
    ppo::Step st;
    st.obs = std::move(obs[k]);
    st.action = chosen[k];
    st.logits = js.logits[k];
    st.logp = nk::log_softmax(nk::Var::constant(js.logits[k])).value()[static_cast<std::size_t>(chosen[k])];
    st.value = js.values[k];
    st.reward = rewards::compute_reward(config_.reward, result.transitions[k]);
    st.done = result.done[k] != 0;
    st.pool = js.pool;
    st.own = static_cast<int>(k);
    r.episode_reward += st.reward;
    auto& seg = r.open[i];
    seg.steps.push_back(std::move(st));
    if (seg.steps.back().done || static_cast<int>(seg.steps.size()) == config_.ppo.rollout) {
      w.segments.push_back(std::move(seg));
      seg = ppo::Segment{};
    }
  }
  w.transitions += live.size();

  if (result.episode_done) {
    const auto& state = r.env.state();
    EpisodeSummary s;
    s.map_index = r.map_index;
    s.steps = state.step;
    s.agents = static_cast<int>(state.agents.size());
    for (const auto& a : state.agents) {
      if (a.arrival_step) ++s.arrived;
      s.soc += a.arrival_step ? *a.arrival_step : state.episode_length;
    }
    s.goals = state.total_goals_reached();
    s.reward = r.episode_reward;
    w.episodes.push_back(s);
    r.needs_reset = true;
  }
}

void Trainer::finish_worker(Worker& w) {
  // Close open segments and find bootstrap values for unfinished chains.
  std::map<std::pair<int, int>, double> bootstrap;
  for (auto& r : w.envs) {
    for (auto& seg : r.open)
      if (!seg.steps.empty()) {
        w.segments.push_back(std::move(seg));
        seg = ppo::Segment{};
      }
    if (r.needs_reset) continue;
    const auto live = r.env.state().active_agents();
    if (live.empty()) continue;
    auto obs = r.env.observations();
    std::vector<policy::AgentSlot> copies;
    for (int i : live) copies.push_back(r.slots[static_cast<std::size_t>(i)]);
    std::vector<policy::AgentSlot*> ptrs;
    for (auto& c : copies) ptrs.push_back(&c);
    auto js = policy::joint_step(policy_, obs, ptrs);
    for (std::size_t k = 0; k < live.size(); ++k) bootstrap[{static_cast<int>(r.id), live[k]}] = js.values[k];
  }

  std::map<std::pair<int, int>, std::vector<std::size_t>> chains;
  for (std::size_t s = 0; s < w.segments.size(); ++s) chains[{w.segments[s].env, w.segments[s].agent}].push_back(s);
  for (const auto& [key, idx] : chains) {
    std::vector<double> rew, val;
    std::vector<char> done;
    for (std::size_t s : idx)
      for (const auto& st : w.segments[s].steps) {
        rew.push_back(st.reward);
        val.push_back(st.value);
        done.push_back(st.done ? 1 : 0);
      }
    double boot = 0.0;
    if (!done.back()) {
      auto it = bootstrap.find(key);
      if (it == bootstrap.end()) throw ContractError("rollout chain ends mid-episode without a bootstrap value");
      boot = it->second;
    }
    auto gae = ppo::compute_gae(rew, val, done, boot, config_.ppo.gamma, config_.ppo.gae_lambda);
    std::size_t t = 0;
    for (std::size_t s : idx)
      for (auto& st : w.segments[s].steps) {
        st.advantage = gae.advantages[t];
        st.ret = gae.returns[t];
        ++t;
      }
  }
}

void Trainer::collect_worker(Worker& w, std::size_t target) {
  w.segments.clear();
  w.episodes.clear();
  w.draws.clear();
  w.transitions = 0;
  while (w.transitions < target) {
    step_env(w, w.envs[w.cursor]);
    w.cursor = (w.cursor + 1) % w.envs.size();
  }
  finish_worker(w);
}

ppo::RolloutBatch Trainer::collect() {
  const std::size_t per_worker =
      (static_cast<std::size_t>(config_.ppo.batch_size) + workers_.size() - 1) / workers_.size();
  parallel_for(workers_.size(), threads_, [&](std::size_t i) { collect_worker(*workers_[i], per_worker); });
  ppo::RolloutBatch batch;
  last_episodes_.clear();
  for (auto& w : workers_) {
    for (auto& s : w->segments) batch.segments.push_back(std::move(s));
    w->segments.clear();
    last_episodes_.insert(last_episodes_.end(), w->episodes.begin(), w->episodes.end());
    map_draws_.insert(map_draws_.end(), w->draws.begin(), w->draws.end());
    env_steps_ += static_cast<std::int64_t>(w->transitions);
  }
  return batch;
}

IterationLog Trainer::iterate() {
  const auto t0 = std::chrono::steady_clock::now();
  auto batch = collect();
  IterationLog log;
  double reward = 0.0;
  for (const auto& s : batch.segments)
    for (const auto& st : s.steps) reward += st.reward;
  const auto n = batch.transitions();
  log.reward_mean = n ? reward / static_cast<double>(n) : 0.0;
  log.episodes = last_episodes_.size();
  for (const auto& e : last_episodes_) {
    log.episode_return += e.reward / e.agents;
    log.csr += e.arrived == e.agents ? 1.0 : 0.0;
    log.isr += static_cast<double>(e.arrived) / e.agents;
    log.soc += static_cast<double>(e.soc);
    log.throughput += e.steps > 0 ? static_cast<double>(e.goals) / e.steps : 0.0;
  }
  if (log.episodes) {
    const double k = static_cast<double>(log.episodes);
    log.episode_return /= k;
    log.csr /= k;
    log.isr /= k;
    log.soc /= k;
    log.throughput /= k;
  }
  try {
    log.update = ppo::ppo_update(policy_, adam_, batch, config_.ppo, lr_, threads_);
  } catch (const NumericError& e) {
    write_dump(batch, e.what());
    throw;
  }
  ++iteration_;
  log.iteration = iteration_;
  log.env_steps = env_steps_;
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

void Trainer::write_dump(const ppo::RolloutBatch& batch, const std::string& what) const {
  if (out_dir_.empty()) return;
  nlohmann::json dump;
  dump["error"] = what;
  dump["iteration"] = iteration_ + 1;
  dump["env_steps"] = env_steps_;
  dump["lr"] = lr_;
  auto& norms = dump["param_norms"] = nlohmann::json::object();
  for (std::size_t i = 0; i < policy_.params().size(); ++i) {
    double sq = 0.0;
    bool finite = true;
    for (double v : policy_.params().value(i).storage()) {
      sq += v * v;
      finite = finite && std::isfinite(v);
    }
    norms[policy_.params()[i].name] = finite ? nlohmann::json(std::sqrt(sq)) : nlohmann::json("non-finite");
  }
  std::size_t bad_reward = 0, bad_value = 0, bad_return = 0;
  for (const auto& s : batch.segments)
    for (const auto& st : s.steps) {
      bad_reward += !std::isfinite(st.reward);
      bad_value += !std::isfinite(st.value);
      bad_return += !std::isfinite(st.ret) || !std::isfinite(st.advantage);
    }
  dump["batch"] = {{"segments", batch.segments.size()},
                   {"transitions", batch.transitions()},
                   {"non_finite_rewards", bad_reward},
                   {"non_finite_values", bad_value},
                   {"non_finite_targets", bad_return}};
  dump["config"] = config_.to_json();
  const auto path = out_dir_ / "logs" / ("nan_dump_iter_" + std::to_string(iteration_ + 1) + ".json");
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << dump.dump(2) << '\n';
}

void Trainer::run(const std::filesystem::path& out_dir, const std::function<void(const IterationLog&)>& on_log) {
  out_dir_ = out_dir;
  std::filesystem::create_directories(out_dir / "logs");
  std::filesystem::create_directories(out_dir / "checkpoints");
  const auto log_path = out_dir / "logs" / "train.jsonl";
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot write " + log_path.string());
  bool saved_last = false;
  while (env_steps_ < config_.ppo.total_steps) {
    auto entry = iterate();
    log << entry.to_json().dump() << '\n';
    log.flush();
    if (!log) throw IoError("failed writing " + log_path.string());
    if (on_log) on_log(entry);
    saved_last = false;
    if (iteration_ % config_.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "iter_%06d.ckpt", iteration_);
      save(out_dir / "checkpoints" / name);
      save(out_dir / "checkpoints" / "latest.ckpt");
      saved_last = true;
    }
  }
  if (!saved_last) save(out_dir / "checkpoints" / "latest.ckpt");
  save(out_dir / "checkpoints" / "final.ckpt");
}

// ---------------------------------------------------------------------------
// Checkpoints

void Trainer::save(const std::filesystem::path& path) const {
  nlohmann::json meta;
  meta["kind"] = "srmt-trainer";
  meta["config"] = config_.to_json();
  meta["iteration"] = iteration_;
  meta["env_steps"] = env_steps_;
  meta["lr"] = lr_;
  meta["adam_step"] = adam_.step;
  auto& workers = meta["workers"] = nlohmann::json::array();
  for (const auto& w : workers_) {
    nlohmann::json wj{{"rng", rng_text(w->rng)}, {"cursor", w->cursor}};
    auto& envs = wj["envs"] = nlohmann::json::array();
    for (const auto& r : w->envs) {
      nlohmann::json ej{{"needs_reset", r.needs_reset}, {"map_index", r.map_index}, {"episode_reward", r.episode_reward}};
      if (!r.needs_reset) {
        ej["env"] = r.env.to_json();
        auto& slots = ej["slots"] = nlohmann::json::array();
        for (const auto& s : r.slots) {
          auto hist = nlohmann::json::array();
          for (const auto& h : s.history) hist.push_back(tensor_json(h));
          slots.push_back({{"started", s.started}, {"memory", tensor_json(s.memory)}, {"history", hist}});
        }
      }
      envs.push_back(std::move(ej));
    }
    workers.push_back(std::move(wj));
  }
  auto ckpt = nk::make_checkpoint(policy_.params(), meta);
  for (std::size_t i = 0; i < policy_.params().size(); ++i) {
    ckpt.tensors.emplace_back("adam.m/" + policy_.params()[i].name, adam_.m[i]);
    ckpt.tensors.emplace_back("adam.v/" + policy_.params()[i].name, adam_.v[i]);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write then rename so an interrupted save never leaves a torn file.
  auto tmp = path;
  tmp += ".tmp";
  nk::save_checkpoint(tmp, ckpt);
  std::filesystem::rename(tmp, path);
}

namespace {

// Keys that may differ between the run that wrote a checkpoint and the run
// resuming it.
nlohmann::json resumable_view(nlohmann::json cfg) {
  cfg.erase("output_dir");
  cfg.erase("checkpoint_every");
  cfg.erase("name");
  cfg["ppo"].erase("total_steps");
  return cfg;
}

}  // namespace

void Trainer::load(const std::filesystem::path& path) {
  auto ckpt = nk::load_checkpoint(path);
  const auto& meta = ckpt.meta;
  if (meta.value("kind", "") != "srmt-trainer") throw IoError(path.string() + " is not a trainer checkpoint");
  try {
    if (resumable_view(meta.at("config")) != resumable_view(config_.to_json()))
      throw ConfigError("checkpoint " + path.string() + " was written with a different configuration");
    nk::restore_params(policy_.params(), ckpt);
    for (std::size_t i = 0; i < policy_.params().size(); ++i) {
      const auto& name = policy_.params()[i].name;
      bool m = false, v = false;
      for (const auto& [key, t] : ckpt.tensors) {
        if (key == "adam.m/" + name) adam_.m[i] = t, m = true;
        if (key == "adam.v/" + name) adam_.v[i] = t, v = true;
      }
      if (!m || !v) throw IoError("checkpoint lacks optimizer state for " + name);
    }
    adam_.step = meta.at("adam_step").get<std::int64_t>();
    iteration_ = meta.at("iteration").get<int>();
    env_steps_ = meta.at("env_steps").get<std::int64_t>();
    lr_ = meta.at("lr").get<double>();
    const auto& workers = meta.at("workers");
    if (workers.size() != workers_.size()) throw IoError("checkpoint worker count does not match the configuration");
    for (std::size_t wi = 0; wi < workers_.size(); ++wi) {
      auto& w = *workers_[wi];
      const auto& wj = workers[wi];
      rng_restore(w.rng, wj.at("rng").get<std::string>());
      w.cursor = wj.at("cursor").get<std::size_t>();
      const auto& envs = wj.at("envs");
      if (envs.size() != w.envs.size()) throw IoError("checkpoint environment count does not match the configuration");
      for (std::size_t ei = 0; ei < w.envs.size(); ++ei) {
        auto& r = w.envs[ei];
        const auto& ej = envs[ei];
        r.needs_reset = ej.at("needs_reset").get<bool>();
        r.map_index = ej.at("map_index").get<std::size_t>();
        r.episode_reward = ej.at("episode_reward").get<double>();
        r.slots.clear();
        r.open.clear();
        if (r.needs_reset) continue;
        r.env.restore(ej.at("env"), pool_->map(r.map_index));
        for (const auto& sj : ej.at("slots")) {
          policy::AgentSlot s;
          s.started = sj.at("started").get<bool>();
          s.memory = json_tensor(sj.at("memory"));
          for (const auto& h : sj.at("history")) s.history.push_back(json_tensor(h));
          r.slots.push_back(std::move(s));
        }
        r.open.assign(r.slots.size(), ppo::Segment{});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path.string() + ": " + e.what());
  }
}

policy::Policy load_policy(const std::filesystem::path& checkpoint) {
  auto ckpt = nk::load_checkpoint(checkpoint);
  if (!ckpt.meta.contains("config") || !ckpt.meta["config"].contains("policy"))
    throw IoError(checkpoint.string() + " does not record a policy configuration");
  auto cfg = policy::PolicyConfig::from_json(ckpt.meta["config"]["policy"]);
  policy::Policy p(cfg);
  nk::restore_params(p.params(), ckpt);
  return p;
}

}  // namespace srmt::train
