#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "srmt/errors.hpp"
#include "srmt/ppo.hpp"

using namespace srmt;
using namespace srmt::ppo;
using nk::Shape;
using nk::Tensor;
using nk::Var;
using oracle::random_tensor;

namespace {

// O(T²) reference: A_t = Σ_k (γλ)^k δ_{t+k}, stopping after a terminal step.
std::vector<double> brute_force_gae(const std::vector<double>& r, const std::vector<double>& v,
                                    const std::vector<char>& done, double boot, double gamma, double lambda) {
  const std::size_t n = r.size();
  std::vector<double> adv(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double factor = 1.0;
    for (std::size_t j = t; j < n; ++j) {
      const double next = j + 1 < n ? v[j + 1] : boot;
      const double delta = r[j] + gamma * next * (done[j] ? 0.0 : 1.0) - v[j];
      adv[t] += factor * delta;
      if (done[j]) break;
      factor *= gamma * lambda;
    }
  }
  return adv;
}

policy::PolicyConfig small(policy::CoreKind core = policy::CoreKind::SRMT, std::uint64_t seed = 3) {
  policy::PolicyConfig c;
  c.core = core;
  c.obs_size = 3;
  c.hidden = 8;
  c.mlp_hidden = 6;
  c.filters = 3;
  c.heads = 2;
  c.history = 3;
  c.seed = seed;
  return c;
}

Tensor random_obs(int m, std::mt19937_64& rng) {
  Tensor t(Shape{3, m, m});
  for (double& v : t.storage()) v = static_cast<double>(static_cast<int>(rng() % 3) - 1);
  return t;
}

double log_prob(const Tensor& logits, int a) {
  return nk::log_softmax(Var::constant(logits)).value()[static_cast<std::size_t>(a)];
}

// Runs `total` joint steps for two agents and records agent `who` from
// step `first` on, as a segment would be stored during collection.
Segment record_segment(const policy::Policy& p, int total, int first, int who, std::mt19937_64& rng) {
  std::vector<policy::AgentSlot> slots(2);
  std::vector<policy::AgentSlot*> ptrs{&slots[0], &slots[1]};
  Segment seg;
  seg.episode_start = first == 0;
  std::normal_distribution<double> normal;
  for (int t = 0; t < total; ++t) {
    if (t == first) {
      seg.memory = slots[static_cast<std::size_t>(who)].memory;
      seg.history.assign(slots[static_cast<std::size_t>(who)].history.begin(),
                         slots[static_cast<std::size_t>(who)].history.end());
    }
    std::vector<Tensor> obs{random_obs(p.config().obs_size, rng), random_obs(p.config().obs_size, rng)};
    auto js = policy::joint_step(p, obs, ptrs);
    if (t < first) continue;
    Step st;
    st.obs = obs[static_cast<std::size_t>(who)];
    st.action = static_cast<int>(rng() % 5);
    st.logits = js.logits[static_cast<std::size_t>(who)];
    st.logp = log_prob(st.logits, st.action);
    st.value = js.values[static_cast<std::size_t>(who)];
    st.pool = js.pool;
    st.own = who;
    st.advantage = normal(rng);
    st.ret = st.value + normal(rng);
    seg.steps.push_back(std::move(st));
  }
  return seg;
}

std::vector<Tensor> loss_gradients(const policy::Policy& p, const Segment& seg, const PPOConfig& cfg,
                                   Var LossTerms::*term = &LossTerms::total, double coef = 1.0) {
  nk::Tape tape;
  auto net = p.bind(&tape);
  auto terms = segment_loss(net, p, seg, cfg);
  return p.params().gradients(tape.backward(nk::scale(terms.*term, coef)));
}

double norm_of(const std::vector<Tensor>& g) { return nk::global_norm(g); }

}  // namespace

// ---------------------------------------------------------------------------
// GAE

TEST(Gae, MatchesBruteForceOnRandomSequences) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> r(50), v(50);
    std::vector<char> d(50);
    for (int t = 0; t < 50; ++t) {
      r[static_cast<std::size_t>(t)] = normal(rng);
      v[static_cast<std::size_t>(t)] = normal(rng);
      d[static_cast<std::size_t>(t)] = unit(rng) < 0.08;
    }
    const double boot = normal(rng), gamma = 0.9 + 0.1 * unit(rng), lambda = unit(rng);
    auto got = compute_gae(r, v, d, boot, gamma, lambda);
    auto want = brute_force_gae(r, v, d, boot, gamma, lambda);
    for (std::size_t t = 0; t < 50; ++t) {
      worst = std::max(worst, std::abs(got.advantages[t] - want[t]));
      EXPECT_DOUBLE_EQ(got.returns[t], got.advantages[t] + v[t]);
    }
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Gae, SingleTerminalStepIsRewardMinusValue) {
  std::vector<double> r{0.7}, v{0.25};
  std::vector<char> d{1};
  auto g = compute_gae(r, v, d, 99.0, 0.97, 0.95);
  EXPECT_DOUBLE_EQ(g.advantages[0], 0.7 - 0.25);
  EXPECT_DOUBLE_EQ(g.returns[0], 0.7);
}

TEST(Gae, LambdaZeroIsOneStepResidual) {
  std::vector<double> r{1.0, -0.5, 0.25}, v{0.1, 0.2, 0.3};
  std::vector<char> d{0, 0, 0};
  const double gamma = 0.9716, boot = 0.4;
  auto g = compute_gae(r, v, d, boot, gamma, 0.0);
  EXPECT_DOUBLE_EQ(g.advantages[0], 1.0 + gamma * 0.2 - 0.1);
  EXPECT_DOUBLE_EQ(g.advantages[1], -0.5 + gamma * 0.3 - 0.2);
  EXPECT_DOUBLE_EQ(g.advantages[2], 0.25 + gamma * boot - 0.3);
}

TEST(Gae, LengthMismatchIsDimensionError) {
  std::vector<double> r{1.0, 2.0}, v{0.0};
  std::vector<char> d{0, 0};
  EXPECT_THROW(compute_gae(r, v, d, 0.0, 0.9, 0.9), DimensionError);
}

// ---------------------------------------------------------------------------
// Learning-rate schedule and surrogate

TEST(AdaptiveKl, DeadZoneKeepsRate) {
  PPOConfig c;
  EXPECT_DOUBLE_EQ(adaptive_kl_lr(c.kl_target, 1e-4, c), 1e-4);
  EXPECT_DOUBLE_EQ(adaptive_kl_lr(2.0 * c.kl_target, 1e-4, c), 1e-4);
  EXPECT_DOUBLE_EQ(adaptive_kl_lr(0.5 * c.kl_target, 1e-4, c), 1e-4);
}

TEST(AdaptiveKl, LargeKlDividesSmallKlMultiplies) {
  PPOConfig c;
  EXPECT_DOUBLE_EQ(adaptive_kl_lr(4.0 * c.kl_target, 1e-4, c), 1e-4 / 1.5);
  EXPECT_DOUBLE_EQ(adaptive_kl_lr(0.1 * c.kl_target, 1e-4, c), 1e-4 * 1.5);
}

TEST(AdaptiveKl, RateStaysInsideClampBand) {
  PPOConfig c;
  std::mt19937_64 rng(5);
  std::exponential_distribution<double> kl(1.0 / c.kl_target);
  for (int run = 0; run < 50; ++run) {
    double lr = c.lr;
    for (int i = 0; i < 400; ++i) {
      const double sample = (rng() % 3 == 0) ? kl(rng) * 100.0 : kl(rng) * 1e-3;
      lr = adaptive_kl_lr(sample, lr, c);
      ASSERT_GE(lr, c.lr_min);
      ASSERT_LE(lr, c.lr_max);
    }
  }
}

TEST(ClippedSurrogate, ClipsLargeRatioForPositiveAdvantage) {
  nk::Tape tape;
  Var ratio = tape.leaf(Tensor(Shape{3}, {2.0, 2.0, 0.5}));
  Tensor adv(Shape{3}, {1.0, -1.0, 1.0});
  Var s = clipped_surrogate(ratio, adv, 0.2);
  EXPECT_DOUBLE_EQ(s.value()[0], 1.2);
  EXPECT_DOUBLE_EQ(s.value()[1], -2.0);  // pessimistic side keeps the unclipped term
  EXPECT_DOUBLE_EQ(s.value()[2], 0.5);
  auto g = tape.backward(nk::sum(s)).of(ratio);
  EXPECT_DOUBLE_EQ(g[0], 0.0);
  EXPECT_DOUBLE_EQ(g[1], -1.0);
  EXPECT_DOUBLE_EQ(g[2], 1.0);
}

TEST(Config, DefaultsAndLifelongPreset) {
  auto m = PPOConfig::mapf();
  EXPECT_DOUBLE_EQ(m.lr, 0.00013);
  EXPECT_EQ(m.schedule, LrSchedule::AdaptiveKL);
  EXPECT_DOUBLE_EQ(m.gamma, 0.9716);
  EXPECT_DOUBLE_EQ(m.clip, 0.2);
  EXPECT_EQ(m.batch_size, 16384);
  EXPECT_EQ(m.epochs, 1);
  EXPECT_DOUBLE_EQ(m.entropy_coef, 0.0156);
  EXPECT_DOUBLE_EQ(m.value_coef, 0.5);
  EXPECT_DOUBLE_EQ(m.gae_lambda, 0.95);
  EXPECT_EQ(m.rollout, 8);
  EXPECT_EQ(m.workers, 4);
  EXPECT_EQ(m.envs_per_worker, 4);
  EXPECT_EQ(m.total_steps, 20'000'000);
  auto l = PPOConfig::lmapf();
  EXPECT_DOUBLE_EQ(l.lr, 0.00022);
  EXPECT_EQ(l.schedule, LrSchedule::Constant);
  EXPECT_DOUBLE_EQ(l.gamma, 0.9756);
  EXPECT_DOUBLE_EQ(l.entropy_coef, 0.023);
}

TEST(Config, JsonRoundTripAndAggregatedErrors) {
  auto c = PPOConfig::lmapf();
  std::vector<std::string> errors;
  auto back = PPOConfig::from_json(c.to_json(), errors);
  EXPECT_TRUE(errors.empty());
  EXPECT_EQ(back.to_json(), c.to_json());

  nlohmann::json bad = {{"lr", -1.0}, {"schedule", "cosine"}, {"epochs", 1.5}, {"bogus", 1}};
  errors.clear();
  PPOConfig::from_json(bad, errors);
  EXPECT_GE(errors.size(), 4u);
}

// ---------------------------------------------------------------------------
// Segment replay and loss

TEST(SegmentLoss, ReplayReproducesRecordedOutputs) {
  policy::Policy p(small());
  std::mt19937_64 rng(7);
  for (int first : {0, 3}) {
    Segment seg = record_segment(p, first + 5, first, 1, rng);
    PPOConfig cfg;
    auto terms = segment_loss(p.bind(nullptr), p, seg, cfg);
    // With unchanged parameters every ratio is 1, so the surrogate is −ΣA.
    double sum_adv = 0.0, value_sq = 0.0;
    for (const auto& st : seg.steps) {
      sum_adv += st.advantage;
      value_sq += (st.value - st.ret) * (st.value - st.ret);
    }
    EXPECT_NEAR(terms.policy.value().item(), -sum_adv, 1e-12) << "first " << first;
    EXPECT_NEAR(terms.value.value().item(), value_sq, 1e-12) << "first " << first;
  }
}

TEST(SegmentLoss, ZeroAdvantageWithoutEntropyOnlyTrainsValue) {
  policy::Policy p(small());
  std::mt19937_64 rng(8);
  Segment seg = record_segment(p, 6, 0, 0, rng);
  for (auto& st : seg.steps) st.advantage = 0.0;
  PPOConfig cfg;
  cfg.entropy_coef = 0.0;
  auto terms = segment_loss(p.bind(nullptr), p, seg, cfg);
  EXPECT_EQ(terms.policy.value().item(), 0.0);
  auto total = loss_gradients(p, seg, cfg);
  auto value_only = loss_gradients(p, seg, cfg, &LossTerms::value, cfg.value_coef);
  ASSERT_EQ(total.size(), value_only.size());
  for (std::size_t i = 0; i < total.size(); ++i)
    for (std::size_t j = 0; j < total[i].numel(); ++j)
      ASSERT_NEAR(total[i][j], value_only[i][j], 1e-12) << p.params()[i].name;
  // The action head only feeds the policy and entropy terms.
  const auto head = static_cast<std::size_t>(p.params().index_of("head.action.w"));
  EXPECT_EQ(nk::global_norm(std::span<const Tensor>(&total[head], 1)), 0.0);
}

TEST(SegmentLoss, MemoryHeadReceivesGradient) {
  for (auto core : {policy::CoreKind::SRMT, policy::CoreKind::RMT}) {
    policy::Policy p(small(core, 9));
    std::mt19937_64 rng(9);
    Segment seg = record_segment(p, 8, 0, 0, rng);
    auto g = loss_gradients(p, seg, PPOConfig{});
    for (const char* name : {"core.memory_head.w", "core.init_head.w"}) {
      const auto i = static_cast<std::size_t>(p.params().index_of(name));
      EXPECT_GT(nk::global_norm(std::span<const Tensor>(&g[i], 1)), 0.0) << name << " " << policy::to_string(core);
    }
  }
}

TEST(SegmentLoss, GradientMatchesFiniteDifferences) {
  policy::Policy p(small(policy::CoreKind::SRMT, 10));
  std::mt19937_64 rng(10);
  Segment seg = record_segment(p, 6, 2, 0, rng);
  PPOConfig cfg;
  std::vector<Tensor> inputs;
  for (std::size_t i = 0; i < p.params().size(); ++i) {
    Tensor v = p.params().value(i);
    for (double& x : v.storage()) x += 0.05 * std::normal_distribution<double>()(rng);
    inputs.push_back(std::move(v));
  }
  auto fn = [&](const std::vector<Var>& vars) { return segment_loss(p.bind(vars), p, seg, cfg).total; };
  EXPECT_LT(oracle::gradcheck_global(fn, inputs), 1e-3);
}

TEST(SegmentLoss, OwnIndexOutsidePoolIsContractError) {
  policy::Policy p(small());
  std::mt19937_64 rng(11);
  Segment seg = record_segment(p, 2, 0, 0, rng);
  seg.steps[0].own = 5;
  EXPECT_THROW(segment_loss(p.bind(nullptr), p, seg, PPOConfig{}), ContractError);
}

// ---------------------------------------------------------------------------
// Batches and updates

namespace {

RolloutBatch random_batch(const policy::Policy& p, int segments, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  RolloutBatch b;
  for (int s = 0; s < segments; ++s) {
    const int len = 1 + static_cast<int>(rng() % 4);
    const int first = static_cast<int>(rng() % 3);
    b.segments.push_back(record_segment(p, first + len, first, static_cast<int>(rng() % 2), rng));
  }
  return b;
}

}  // namespace

TEST(Batch, NormalizeAdvantagesGivesZeroMeanUnitStd) {
  policy::Policy p(small());
  auto b = random_batch(p, 6, 12);
  b.normalize_advantages();
  double sum = 0.0, sq = 0.0;
  for (const auto& s : b.segments)
    for (const auto& st : s.steps) sum += st.advantage;
  const double n = static_cast<double>(b.transitions());
  for (const auto& s : b.segments)
    for (const auto& st : s.steps) sq += st.advantage * st.advantage;
  EXPECT_NEAR(sum / n, 0.0, 1e-12);
  EXPECT_NEAR(sq / n, 1.0, 1e-6);
}

TEST(Batch, GradientIndependentOfThreadCount) {
  policy::Policy p(small());
  auto b = random_batch(p, 70, 13);
  std::vector<std::size_t> idx(b.segments.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  UpdateStats s1, s3;
  auto g1 = batch_gradient(p, b, idx, PPOConfig{}, 1, s1);
  auto g3 = batch_gradient(p, b, idx, PPOConfig{}, 3, s3);
  for (std::size_t i = 0; i < g1.size(); ++i)
    for (std::size_t j = 0; j < g1[i].numel(); ++j) ASSERT_EQ(g1[i][j], g3[i][j]);
  EXPECT_EQ(s1.loss, s3.loss);
  EXPECT_EQ(s1.transitions, b.transitions());
}

TEST(Update, OneStepChangesParametersAndReportsStats) {
  policy::Policy p(small());
  auto b = random_batch(p, 8, 14);
  std::vector<Tensor> before;
  for (std::size_t i = 0; i < p.params().size(); ++i) before.push_back(p.params().value(i));
  auto adam = nk::AdamState::for_params(p.params());
  PPOConfig cfg;
  double lr = 1e-3;
  auto stats = ppo_update(p, adam, b, cfg, lr, 1);
  double moved = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i)
    for (std::size_t j = 0; j < before[i].numel(); ++j) moved += std::abs(p.params().value(i)[j] - before[i][j]);
  EXPECT_GT(moved, 0.0);
  EXPECT_TRUE(std::isfinite(stats.loss));
  EXPECT_GT(stats.grad_norm, 0.0);
  EXPECT_GE(stats.kl, 0.0);
  EXPECT_EQ(stats.lr, lr);
  EXPECT_EQ(stats.transitions, b.transitions());
}

TEST(Update, MeasuredKlIsZeroBeforeAnyChange) {
  policy::Policy p(small());
  auto b = random_batch(p, 5, 15);
  EXPECT_NEAR(measure_kl(p, b, 1), 0.0, 1e-12);
}

TEST(Update, NonFiniteReturnAborts) {
  policy::Policy p(small());
  auto b = random_batch(p, 3, 16);
  b.segments[1].steps[0].ret = std::numeric_limits<double>::quiet_NaN();
  auto adam = nk::AdamState::for_params(p.params());
  double lr = 1e-4;
  EXPECT_THROW(ppo_update(p, adam, b, PPOConfig{}, lr, 1), NumericError);
}

TEST(Update, ApproxKlMatchesShiftedLogProbs) {
  // Stored log-probs shifted by -d make every ratio e^d, so the
  // estimate is (e^d - 1) - d exactly.
  policy::Policy p(small());
  auto b = random_batch(p, 9, 17);
  const double d = 0.3;
  for (auto& s : b.segments)
    for (auto& st : s.steps) st.logp -= d;
  std::vector<std::size_t> idx(b.segments.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  UpdateStats s1, s3;
  batch_gradient(p, b, idx, PPOConfig{}, 1, s1);
  batch_gradient(p, b, idx, PPOConfig{}, 3, s3);
  EXPECT_NEAR(s1.approx_kl, std::exp(d) - 1.0 - d, 1e-9);
  EXPECT_EQ(s1.approx_kl, s3.approx_kl);
}

TEST(Update, KlStopEndsUpdateAfterFirstStep) {
  policy::Policy p(small());
  auto b = random_batch(p, 8, 18);
  PPOConfig cfg;
  cfg.epochs = 2;
  cfg.minibatches = 4;
  auto adam = nk::AdamState::for_params(p.params());
  double lr = 1e-2;
  auto full = ppo_update(p, adam, b, cfg, lr, 1);
  EXPECT_EQ(full.updates, 8);

  policy::Policy q(small());
  auto b2 = random_batch(q, 8, 18);
  auto adam2 = nk::AdamState::for_params(q.params());
  cfg.kl_stop = 1e-12;
  lr = 1e-2;
  auto cut = ppo_update(q, adam2, b2, cfg, lr, 1);
  EXPECT_EQ(cut.updates, 1);
  EXPECT_TRUE(std::isfinite(cut.loss));
}

TEST(Config, NegativeKlStopIsRejected) {
  PPOConfig cfg;
  cfg.kl_stop = -0.1;
  ASSERT_EQ(cfg.problems().size(), 1u);
  EXPECT_NE(cfg.problems()[0].find("ppo.kl_stop"), std::string::npos);
}
