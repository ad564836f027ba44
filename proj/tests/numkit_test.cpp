#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "gradcheck.hpp"
#include "srmt/numkit/autodiff.hpp"
#include "srmt/numkit/params.hpp"

namespace nk = srmt::nk;
using nk::Shape;
using nk::Tensor;
using nk::Var;
using srmt::oracle::gradcheck;
using srmt::oracle::random_tensor;

namespace {

Var C(Tensor t) { return Var::constant(std::move(t)); }

void expect_tensor_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "at " << i;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  std::mt19937_64 rng(1);
  Tensor eye(Shape{3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Tensor m = random_tensor(Shape{3, 3}, rng);
  expect_tensor_near(nk::matmul(C(eye), C(m)).value(), m, 0.0);
}

TEST(Matmul, HandComputedProduct) {
  auto out = nk::matmul(C(Tensor::from_rows({{1, 2}, {3, 4}})), C(Tensor::from_rows({{1}, {1}})));
  expect_tensor_near(out.value(), Tensor::from_rows({{3}, {7}}), 0.0);
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
  std::mt19937_64 rng(2);
  Tensor a = random_tensor(Shape{4, 5}, rng), b = random_tensor(Shape{5, 2}, rng);
  auto numeric = srmt::oracle::numeric_gradients(
      [](const std::vector<Var>& v) { return nk::sum(nk::matmul(v[0], v[1])); }, {a, b});
  // ones(4×2)·bᵀ written out by hand: every row equals the row sums of b.
  Tensor expected(Shape{4, 5});
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 5; ++k) expected.at(i, k) = b.at(k, 0) + b.at(k, 1);
  expect_tensor_near(numeric[0], expected, 1e-8);

  nk::Tape tape;
  Var av = tape.leaf(a);
  auto grads = tape.backward(nk::sum(nk::matmul(av, C(b))));
  expect_tensor_near(grads.of(av), expected, 1e-12);
}

TEST(Matmul, ShapeMismatchIsDimensionError) {
  EXPECT_THROW(nk::matmul(C(Tensor(Shape{2, 3})), C(Tensor(Shape{2, 3}))), srmt::DimensionError);
}

TEST(Conv2d, ZeroInputGivesZeroOutput) {
  std::mt19937_64 rng(3);
  auto out = nk::conv2d(C(Tensor(Shape{2, 4, 4})), C(random_tensor(Shape{3, 2, 3, 3}, rng)));
  for (double v : out.value().storage()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, OnesKernelCountsOverlap) {
  auto out = nk::conv2d(C(Tensor::ones(Shape{1, 3, 3})), C(Tensor::ones(Shape{1, 1, 3, 3})));
  EXPECT_EQ(out.value()[4], 9.0);  // center
  EXPECT_EQ(out.value()[0], 4.0);  // corner
  EXPECT_EQ(out.value()[1], 6.0);  // edge
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
  EXPECT_THROW(nk::conv2d(C(Tensor(Shape{2, 4, 4})), C(Tensor(Shape{1, 3, 3, 3}))), srmt::DimensionError);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<Tensor> in{random_tensor(Shape{2, 5, 5}, rng), random_tensor(Shape{3, 2, 3, 3}, rng),
                           random_tensor(Shape{3}, rng)};
    Tensor w = random_tensor(Shape{3, 5, 5}, rng);
    double err = gradcheck(
        [&](const std::vector<Var>& v) { return nk::sum(nk::mul(nk::conv2d(v[0], v[1], v[2]), C(w))); }, in);
    EXPECT_LT(err, 1e-4) << "seed " << seed;
  }
}

TEST(Conv2d, BatchedMatchesPerSample) {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor(Shape{3, 2, 4, 4}, rng), k = random_tensor(Shape{3, 2, 3, 3}, rng);
  Tensor b = random_tensor(Shape{3}, rng);
  Tensor batched = nk::conv2d(C(x), C(k), C(b)).value();
  ASSERT_EQ(batched.shape(), (Shape{3, 3, 4, 4}));
  for (int n = 0; n < 3; ++n) {
    Tensor one(Shape{2, 4, 4}, std::vector<double>(x.storage().begin() + n * 32, x.storage().begin() + (n + 1) * 32));
    Tensor y = nk::conv2d(C(one), C(k), C(b)).value();
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(batched[n * 48 + i], y[i]);
  }
}

TEST(Conv2d, BatchedGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  std::vector<Tensor> in{random_tensor(Shape{2, 2, 3, 3}, rng), random_tensor(Shape{2, 2, 3, 3}, rng),
                         random_tensor(Shape{2}, rng)};
  Tensor w = random_tensor(Shape{2, 2, 3, 3}, rng);
  double err = gradcheck(
      [&](const std::vector<Var>& v) { return nk::sum(nk::mul(nk::conv2d(v[0], v[1], v[2]), C(w))); }, in);
  EXPECT_LT(err, 1e-4);
}

TEST(Linear, EqualsMatmulPlusBias) {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor(Shape{4, 3}, rng), w = random_tensor(Shape{3, 5}, rng), b = random_tensor(Shape{5}, rng);
  expect_tensor_near(nk::linear(C(x), C(w), C(b)).value(), nk::add_bias(nk::matmul(C(x), C(w)), C(b)).value(), 1e-14);
}

TEST(Linear, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  std::vector<Tensor> in{random_tensor(Shape{4, 3}, rng), random_tensor(Shape{3, 5}, rng), random_tensor(Shape{5}, rng)};
  EXPECT_LT(gradcheck([](const std::vector<Var>& v) { return nk::sum(nk::tanh(nk::linear(v[0], v[1], v[2]))); }, in),
            1e-4);
}

// Composition of primitive kernels, one head at a time.
Tensor composed_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
  const int dh = q.cols() / heads;
  std::vector<Var> outs;
  for (int h = 0; h < heads; ++h) {
    Var qh = nk::slice_cols(C(q), h * dh, dh), kh = nk::slice_cols(C(k), h * dh, dh), vh = nk::slice_cols(C(v), h * dh, dh);
    Var a = nk::softmax(nk::scale(nk::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh))));
    outs.push_back(nk::matmul(a, vh));
  }
  return nk::concat_cols(outs).value();
}

TEST(Attention, MatchesComposedKernels) {
  std::mt19937_64 rng(10);
  for (auto [tq, s, heads] : {std::tuple{1, 1, 1}, {3, 5, 2}, {10, 2, 4}}) {
    Tensor q = random_tensor(Shape{tq, 8}, rng), k = random_tensor(Shape{s, 8}, rng), v = random_tensor(Shape{s, 8}, rng);
    expect_tensor_near(nk::attention(C(q), C(k), C(v), heads).value(), composed_attention(q, k, v, heads), 1e-12);
  }
}

TEST(Attention, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  for (auto [tq, s, heads] : {std::tuple{1, 1, 1}, {3, 5, 2}, {4, 2, 4}}) {
    std::vector<Tensor> in{random_tensor(Shape{tq, 8}, rng), random_tensor(Shape{s, 8}, rng),
                           random_tensor(Shape{s, 8}, rng)};
    Tensor w = random_tensor(Shape{tq, 8}, rng);
    double err = gradcheck(
        [&, h = heads](const std::vector<Var>& v) { return nk::sum(nk::mul(nk::attention(v[0], v[1], v[2], h), C(w))); },
        in);
    EXPECT_LT(err, 1e-4) << tq << "x" << s << " heads " << heads;
  }
}

TEST(Attention, IndivisibleWidthIsDimensionError) {
  EXPECT_THROW(nk::attention(C(Tensor(Shape{1, 6})), C(Tensor(Shape{1, 6})), C(Tensor(Shape{1, 6})), 4),
               srmt::DimensionError);
}

TEST(Softmax, UniformOnEqualLogits) {
  auto out = nk::softmax(C(Tensor(Shape{3}, 0.0)));
  for (double v : out.value().storage()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, NoOverflowOnLargeLogits) {
  auto out = nk::softmax(C(Tensor(Shape{2}, std::vector<double>{1000.0, 0.0})));
  EXPECT_NEAR(out.value()[0], 1.0, 1e-12);
  EXPECT_NEAR(out.value()[1], 0.0, 1e-12);
}

TEST(Softmax, RowsSumToOneUpToMagnitude1e4) {
  std::mt19937_64 rng(4);
  for (double scale : {1.0, 100.0, 1e4}) {
    Tensor x = random_tensor(Shape{16, 7}, rng, scale);
    for (double& v : x.storage()) v = std::clamp(v, -1e4, 1e4);
    auto y = nk::softmax(C(x)).value();
    for (int r = 0; r < 16; ++r) {
      double total = 0.0;
      for (int c = 0; c < 7; ++c) {
        EXPECT_GE(y.at(r, c), 0.0);
        total += y.at(r, c);
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(LayerNorm, ConstantRowMapsToZeros) {
  auto out = nk::layer_norm(C(Tensor(Shape{1, 6}, 3.5)), C(Tensor::ones(Shape{6})), C(Tensor(Shape{6})));
  for (double v : out.value().storage()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(LayerNorm, OutputStatisticsFollowGainAndBias) {
  std::mt19937_64 rng(5);
  const int d = 8192;
  Tensor x = random_tensor(Shape{1, d}, rng, 3.0);
  Tensor gain = random_tensor(Shape{d}, rng);
  Tensor bias(Shape{d}, 0.25);
  auto y = nk::layer_norm(C(x), C(gain), C(bias)).value();
  double mean = 0.0, g2 = 0.0;
  for (int j = 0; j < d; ++j) {
    mean += y[j];
    g2 += gain[j] * gain[j];
  }
  mean /= d;
  g2 /= d;
  double var = 0.0;
  for (int j = 0; j < d; ++j) var += (y[j] - mean) * (y[j] - mean);
  var /= d;
  EXPECT_NEAR(mean, 0.25, 0.05);
  EXPECT_NEAR(var / g2, 1.0, 0.1);
}

TEST(Backward, SumGivesOnes) {
  nk::Tape tape;
  Var x = tape.leaf(Tensor(Shape{2, 3}, 0.7));
  auto g = tape.backward(nk::sum(x));
  expect_tensor_near(g.of(x), Tensor::ones(Shape{2, 3}), 0.0);
}

TEST(Backward, SquareGivesTwiceInput) {
  std::mt19937_64 rng(6);
  Tensor xv = random_tensor(Shape{5}, rng);
  nk::Tape tape;
  Var x = tape.leaf(xv);
  auto g = tape.backward(nk::sum(nk::mul(x, x)));
  Tensor expected = xv;
  for (double& v : expected.storage()) v *= 2.0;
  expect_tensor_near(g.of(x), expected, 1e-15);
}

TEST(Backward, NonScalarLossIsContractError) {
  nk::Tape tape;
  Var x = tape.leaf(Tensor(Shape{3}, 1.0));
  EXPECT_THROW(tape.backward(nk::scale(x, 2.0)), srmt::ContractError);
}

TEST(Backward, TapeIsSingleUse) {
  nk::Tape tape;
  Var x = tape.leaf(Tensor(Shape{3}, 1.0));
  tape.backward(nk::sum(x));
  EXPECT_THROW(tape.leaf(Tensor(Shape{1})), srmt::ContractError);
}

TEST(Backward, UnreachableLeafGetsZeroGradient) {
  nk::Tape tape;
  Var x = tape.leaf(Tensor(Shape{3}, 1.0));
  Var unused = tape.leaf(Tensor(Shape{2}, 5.0));
  auto g = tape.backward(nk::sum(x));
  expect_tensor_near(g.of(unused), Tensor::zeros(Shape{2}), 0.0);
}

TEST(Backward, ResidualConvBlockMatchesFiniteDifferencesOverTenSeeds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(100 + seed);
    std::vector<Tensor> in{random_tensor(Shape{3, 5, 5}, rng),       random_tensor(Shape{4, 3, 3, 3}, rng, 0.3),
                           random_tensor(Shape{4}, rng, 0.1),         random_tensor(Shape{4, 4, 3, 3}, rng, 0.3),
                           random_tensor(Shape{4, 4, 3, 3}, rng, 0.3), random_tensor(Shape{100, 6}, rng, 0.1)};
    auto block = [](const std::vector<Var>& v) {
      Var h = nk::relu(nk::conv2d(v[0], v[1], v[2]));
      Var r = nk::conv2d(nk::relu(nk::conv2d(h, v[3])), v[4]);
      Var out = nk::relu(nk::add(h, r));
      Var flat = nk::reshape(out, Shape{1, 100});
      return nk::sum(nk::tanh(nk::matmul(flat, v[5])));
    };
    EXPECT_LT(gradcheck(block, in), 1e-4) << "seed " << seed;
  }
}

// Every differentiable kernel against finite differences on three shapes.
TEST(GradCheck, AllKernelsOnThreeShapes) {
  using Fn = std::function<Var(const std::vector<Var>&)>;
  struct Case {
    const char* name;
    int inputs;
    Fn fn;
  };
  std::mt19937_64 wrng(7);
  const std::vector<std::pair<int, int>> shapes{{1, 4}, {3, 5}, {6, 2}};
  for (auto [r, c] : shapes) {
    Tensor w = random_tensor(Shape{r, c}, wrng);
    Var W = C(w);
    auto weighted = [W](Var y) { return nk::sum(nk::mul(y, W)); };
    std::vector<Case> cases{
        {"add", 2, [&](auto& v) { return weighted(nk::add(v[0], v[1])); }},
        {"sub", 2, [&](auto& v) { return weighted(nk::sub(v[0], v[1])); }},
        {"mul", 2, [&](auto& v) { return weighted(nk::mul(v[0], v[1])); }},
        {"scale", 1, [&](auto& v) { return weighted(nk::scale(v[0], -1.7)); }},
        {"add_scalar", 1, [&](auto& v) { return weighted(nk::add_scalar(v[0], 0.3)); }},
        {"relu", 1, [&](auto& v) { return weighted(nk::relu(v[0])); }},
        {"tanh", 1, [&](auto& v) { return weighted(nk::tanh(v[0])); }},
        {"sigmoid", 1, [&](auto& v) { return weighted(nk::sigmoid(v[0])); }},
        {"exp", 1, [&](auto& v) { return weighted(nk::exp(v[0])); }},
        {"softmax", 1, [&](auto& v) { return weighted(nk::softmax(v[0])); }},
        {"log_softmax", 1, [&](auto& v) { return weighted(nk::log_softmax(v[0])); }},
        {"transpose", 1, [&](auto& v) { return weighted(nk::transpose(nk::transpose(v[0]))); }},
        {"clamp", 1, [&](auto& v) { return weighted(nk::clamp(v[0], -0.5, 0.5)); }},
        {"minimum", 2, [&](auto& v) { return weighted(nk::minimum(v[0], v[1])); }},
        {"slice_cols", 1, [&](auto& v) { return nk::sum(nk::slice_cols(v[0], c - 1, 1)); }},
        {"slice_rows", 1, [&](auto& v) { return nk::sum(nk::tanh(nk::slice_rows(v[0], r - 1, 1))); }},
        {"gather_rows", 1, [&](auto& v) { return nk::sum(nk::tanh(nk::gather_rows(v[0], {r - 1, 0, r - 1}))); }},
        {"concat_rows", 2, [&](auto& v) { return nk::sum(nk::tanh(nk::concat_rows({v[0], v[1]}))); }},
        {"concat_cols", 2, [&](auto& v) { return nk::sum(nk::tanh(nk::concat_cols({v[0], v[1]}))); }},
        {"matmul_nt", 2, [&](auto& v) { return nk::sum(nk::tanh(nk::matmul_nt(v[0], v[1]))); }},
        {"matmul", 2, [&](auto& v) { return nk::sum(nk::tanh(nk::matmul(v[0], nk::transpose(v[1])))); }},
        {"reshape", 1, [&](auto& v) { return weighted(nk::reshape(nk::reshape(v[0], Shape{r * c}), Shape{r, c})); }},
        {"mean", 1, [&](auto& v) { return nk::mean(nk::mul(v[0], v[0])); }},
        {"pick", 1,
         [&](auto& v) {
           std::vector<int> idx(static_cast<std::size_t>(r));
           for (int i = 0; i < r; ++i) idx[static_cast<std::size_t>(i)] = i % c;
           return nk::sum(nk::tanh(nk::pick(v[0], idx)));
         }},
    };
    if (c >= 2) {
      cases.push_back({"layer_norm", 1, [&, c](auto& v) {
                         Tensor g(Shape{c}), b(Shape{c});
                         for (int j = 0; j < c; ++j) {
                           g[j] = 0.5 + 0.1 * j;
                           b[j] = -0.2 * j;
                         }
                         return weighted(nk::layer_norm(v[0], C(g), C(b)));
                       }});
      cases.push_back({"layer_norm_affine", 3, [&](auto& v) {
                         return weighted(nk::layer_norm(v[0], nk::reshape(nk::slice_rows(v[1], 0, 1), Shape{c}),
                                                        nk::reshape(nk::slice_rows(v[2], 0, 1), Shape{c})));
                       }});
      cases.push_back({"add_bias", 2, [&](auto& v) {
                         return weighted(nk::add_bias(v[0], nk::reshape(nk::slice_rows(v[1], 0, 1), Shape{c})));
                       }});
    }
    for (const auto& cs : cases) {
      std::mt19937_64 rng(11 + r * 7 + c);
      std::vector<Tensor> in;
      for (int i = 0; i < cs.inputs; ++i) in.push_back(random_tensor(Shape{r, c}, rng));
      EXPECT_LT(gradcheck(cs.fn, in), 1e-4) << cs.name << " on " << r << "x" << c;
    }
  }
}

TEST(Kernels, NonFiniteOutputIsNumericError) {
  EXPECT_THROW(nk::exp(C(Tensor(Shape{1}, 1e6))), srmt::NumericError);
}

TEST(Kernels, DeterministicGivenIdenticalInputs) {
  std::mt19937_64 rng(8);
  Tensor a = random_tensor(Shape{2, 5, 5}, rng), k = random_tensor(Shape{3, 2, 3, 3}, rng);
  auto y1 = nk::softmax(nk::reshape(nk::conv2d(C(a), C(k)), Shape{3, 25})).value();
  auto y2 = nk::softmax(nk::reshape(nk::conv2d(C(a), C(k)), Shape{3, 25})).value();
  EXPECT_EQ(y1.storage(), y2.storage());
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  nk::ParamStore ps;
  ps.add("w", Tensor(Shape{3}, std::vector<double>{1, -2, 3}));
  auto state = nk::AdamState::for_params(ps);
  std::vector<Tensor> g{Tensor::zeros(Shape{3})};
  nk::adam_step(ps, g, state, 1e-3);
  EXPECT_EQ(ps.value(0).storage(), (std::vector<double>{1, -2, 3}));
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  nk::ParamStore ps;
  ps.add("w", Tensor(Shape{4}, 0.0));
  auto state = nk::AdamState::for_params(ps);
  std::vector<Tensor> g{Tensor(Shape{4}, std::vector<double>{0.3, -2.0, 1e-3, -7.5})};
  const double lr = 0.00013;
  nk::adam_step(ps, g, state, lr);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(ps.value(0)[i], -lr * (g[0][i] > 0 ? 1.0 : -1.0), lr * 1e-4);
}

// With bias correction, a constant gradient yields m̂ = g and v̂ = g² at every
// step, so the second step equals the first; a shrinking gradient gives a
// smaller second step.
TEST(Adam, SecondStepNotLargerThanFirst) {
  for (double second_scale : {1.0, 0.25}) {
    nk::ParamStore ps;
    ps.add("w", Tensor(Shape{1}, 0.0));
    auto state = nk::AdamState::for_params(ps);
    nk::adam_step(ps, std::vector<Tensor>{Tensor(Shape{1}, 0.5)}, state, 0.01);
    const double first = std::abs(ps.value(0)[0]);
    nk::adam_step(ps, std::vector<Tensor>{Tensor(Shape{1}, 0.5 * second_scale)}, state, 0.01);
    const double second = std::abs(ps.value(0)[0]) - first;
    EXPECT_LE(second, first * (1.0 + 1e-12));
    if (second_scale < 1.0) {
      EXPECT_LT(second, first);
    } else {
      EXPECT_NEAR(second, first, 1e-12);
    }
    EXPECT_EQ(state.step, 2);
  }
}

TEST(Adam, ShapeMismatchThrows) {
  nk::ParamStore ps;
  ps.add("w", Tensor(Shape{3}));
  auto state = nk::AdamState::for_params(ps);
  EXPECT_THROW(nk::adam_step(ps, std::vector<Tensor>{Tensor(Shape{2})}, state, 1e-3), srmt::DimensionError);
}

TEST(OrthogonalInit, SquareIsOrthogonal) {
  Tensor w = nk::orthogonal_init(4, 4, 42);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 4; ++k) dot += w.at(k, i) * w.at(k, j);
      EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-6);
    }
}

TEST(OrthogonalInit, WideMatrixHasOrthonormalRows) {
  Tensor w = nk::orthogonal_init(2, 6, 9);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 6; ++k) dot += w.at(i, k) * w.at(j, k);
      EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-6);
    }
}

TEST(OrthogonalInit, TallMatrixHasOrthonormalColumns) {
  Tensor w = nk::orthogonal_init(7, 3, 10);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 7; ++k) dot += w.at(k, i) * w.at(k, j);
      EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-6);
    }
}

TEST(OrthogonalInit, DeterministicPerSeed) {
  EXPECT_EQ(nk::orthogonal_init(5, 3, 77).storage(), nk::orthogonal_init(5, 3, 77).storage());
  EXPECT_NE(nk::orthogonal_init(5, 3, 77).storage(), nk::orthogonal_init(5, 3, 78).storage());
}

TEST(Checkpoint, RoundTripsValuesBitwise) {
  nk::ParamStore ps;
  ps.add("encoder.w", nk::orthogonal_init(3, 8, 1));
  ps.add("head.b", Tensor(Shape{5}, std::vector<double>{0.1, -0.0, 1e-300, 3.14159, -2.5}));
  auto path = std::filesystem::temp_directory_path() / "srmt_numkit_ckpt.bin";
  nk::save_checkpoint(path, nk::make_checkpoint(ps, {{"note", "x"}}));
  auto loaded = nk::load_checkpoint(path);
  EXPECT_EQ(loaded.meta["note"], "x");
  nk::ParamStore other;
  other.add("encoder.w", Tensor(Shape{3, 8}));
  other.add("head.b", Tensor(Shape{5}));
  nk::restore_params(other, loaded);
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_EQ(ps.value(i).storage(), other.value(i).storage());
  std::filesystem::remove(path);
}

TEST(Checkpoint, ShapeMismatchOnRestoreIsIoError) {
  nk::ParamStore ps;
  ps.add("w", Tensor(Shape{2, 2}));
  auto path = std::filesystem::temp_directory_path() / "srmt_numkit_ckpt2.bin";
  nk::save_checkpoint(path, nk::make_checkpoint(ps));
  nk::ParamStore other;
  other.add("w", Tensor(Shape{4}));
  EXPECT_THROW(nk::restore_params(other, nk::load_checkpoint(path)), srmt::IoError);
  std::filesystem::remove(path);
}
