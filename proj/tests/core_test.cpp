#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>

#include "star/core/checkpoint.hpp"
#include "star/core/error.hpp"
#include "star/core/optimizer.hpp"
#include "star/core/rng.hpp"
#include "star/core/value_graph.hpp"
#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"

using namespace star;
using namespace star::core;
namespace gc = star::testing;

namespace {

using gc::random_tensor;
using gc::weighted_sum;

constexpr int kInstances = 100;
constexpr double kTol = 1e-5;

}  // namespace

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(ValueGraph, MatmulIdentity) {
  ValueGraph g;
  Tensor x = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  Var y = g.matmul(g.constant(Tensor::identity(3)), g.constant(x));
  EXPECT_EQ(g.value(y), x);
}

TEST(ValueGraph, SigmoidAtZero) {
  ValueGraph g;
  Var y = g.sigmoid(g.constant(Tensor::scalar(0.0)));
  EXPECT_EQ(g.value(y).item(), 0.5);
}

TEST(ValueGraph, L2NormalizeThreeFourFive) {
  ValueGraph g;
  Var y = g.l2_normalize(g.constant(Tensor::vector({3, 4})));
  EXPECT_NEAR(g.value(y)[0], 0.6, 1e-15);
  EXPECT_NEAR(g.value(y)[1], 0.8, 1e-15);
}

TEST(ValueGraph, ShapeErrorNamesOpAndShapes) {
  ValueGraph g;
  Var a = g.constant(Tensor(Shape{2, 3}));
  Var b = g.constant(Tensor(Shape{2, 3}));
  try {
    g.matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2x3] vs [2x3]"), std::string::npos);
  }
}

TEST(ValueGraph, NonFiniteIsAnError) {
  ValueGraph g;
  EXPECT_THROW(g.log(g.constant(Tensor::vector({-1.0}))), NonFiniteError);
  EXPECT_THROW(g.l2_normalize(g.constant(Tensor::vector({0.0, 0.0}))), NonFiniteError);
}

TEST(ValueGraph, BackwardSquare) {
  ParameterSet ps;
  auto x = ps.add("x", Tensor::vector({3.0}));
  ValueGraph g(&ps);
  Var xv = g.parameter(x);
  Var loss = g.sum(g.mul(xv, xv));
  g.backward(loss);
  EXPECT_DOUBLE_EQ(ps.grad(x)[0], 6.0);
}

TEST(ValueGraph, BackwardSigmoidSum) {
  ParameterSet ps;
  auto x = ps.add("x", Tensor(Shape{4}, 0.0));
  ValueGraph g(&ps);
  Var loss = g.sum(g.sigmoid(g.parameter(x)));
  g.backward(loss);
  for (double v : ps.grad(x).values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(ValueGraph, NonScalarLossRejected) {
  ParameterSet ps;
  auto x = ps.add("x", Tensor(Shape{3}, 1.0));
  ValueGraph g(&ps);
  Var y = g.scale(g.parameter(x), 2.0);
  EXPECT_THROW(g.backward(y), ShapeError);
}

TEST(ValueGraph, GradientAccumulationIsAdditive) {
  Rng rng(7);
  ParameterSet ps;
  auto w = ps.add("w", random_tensor(rng, {4, 3}));
  Tensor x = random_tensor(rng, {5, 4});
  ValueGraph g(&ps);
  Var loss = g.mean(g.sigmoid(g.matmul(g.constant(x), g.parameter(w))));
  g.backward(loss);
  const Tensor once = ps.grad(w);
  for (int k = 2; k <= 4; ++k) {
    g.backward(loss);
    for (std::size_t i = 0; i < once.numel(); ++i) EXPECT_DOUBLE_EQ(ps.grad(w)[i], k * once[i]);
  }
}

TEST(ValueGraph, ForwardIsDeterministic) {
  Rng rng(11);
  ParameterSet ps;
  auto w = ps.add("w", random_tensor(rng, {6, 6}));
  Tensor x = random_tensor(rng, {8, 6});
  auto run = [&] {
    ValueGraph g(&ps);
    Var h = g.leaky_relu(g.matmul(g.constant(x), g.parameter(w)));
    return g.value(g.row_softmax(h));
  };
  EXPECT_EQ(run(), run());
}

TEST(ValueGraph, ForwardRecomputesAfterParameterChange) {
  ParameterSet ps;
  auto w = ps.add("w", Tensor::vector({1.0, 2.0}));
  ValueGraph g(&ps);
  Var s = g.sum(g.parameter(w));
  EXPECT_EQ(g.value(s).item(), 3.0);
  ps.value(w)[0] = 5.0;
  g.forward();
  EXPECT_EQ(g.value(s).item(), 7.0);
}

TEST(ValueGraph, BatchNormEvalUsesFrozenStats) {
  Rng rng(3);
  ParameterSet ps;
  auto gamma = ps.add("gamma", Tensor(Shape{3}, 1.0));
  auto beta = ps.add("beta", Tensor(Shape{3}, 0.0));
  auto rm = ps.add("rm", Tensor(Shape{3}, 0.0), false);
  auto rv = ps.add("rv", Tensor(Shape{3}, 1.0), false);
  Tensor x = random_tensor(rng, {6, 3});
  {
    ValueGraph g(&ps);
    g.batch_norm(g.constant(x), g.parameter(gamma), g.parameter(beta), rm, rv, true);
  }
  const Tensor mean_after = ps.value(rm);
  EXPECT_NE(mean_after[0], 0.0);
  auto eval = [&] {
    ValueGraph g(&ps);
    return g.value(g.batch_norm(g.constant(x), g.parameter(gamma), g.parameter(beta), rm, rv, false));
  };
  const Tensor a = eval();
  const Tensor b = eval();
  EXPECT_EQ(a, b);
  EXPECT_EQ(ps.value(rm), mean_after);
}

TEST(ValueGraph, MaskedSoftmaxZeroesMaskedEntries) {
  ValueGraph g;
  Var y = g.row_softmax(g.constant(Tensor::matrix({{1, 2, 3}, {4, 5, 6}})), {1, 0, 1, 0, 0, 0});
  const Tensor& v = g.value(y);
  EXPECT_EQ(v.at(0, 1), 0.0);
  EXPECT_NEAR(v.at(0, 0) + v.at(0, 2), 1.0, 1e-15);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(v.at(1, c), 0.0);
}

// Every differentiable op against central differences, 100 random instances each.
TEST(ValueGraph, OpGradientsMatchFiniteDifferences) {
  const auto cases = gc::op_gradient_cases();

  Rng rng(20240601);
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int i = 0; i < kInstances; ++i) {
      ParameterSet ps;
      gc::LossBuilder build;
      c.setup(rng, ps, build);
      auto res = gc::check_gradients(ps, build, 1e-6);
      worst = std::max(worst, res.max_rel_error);
    }
    EXPECT_LE(worst, kTol) << c.name;
  }
}

TEST(ValueGraph, MlpGradientsMatchFiniteDifferences) {
  Rng rng(99);
  for (int inst = 0; inst < 20; ++inst) {
    ParameterSet ps;
    ps.add("w1", random_tensor(rng, {5, 7}));
    ps.add("b1", random_tensor(rng, {7}));
    ps.add("w2", random_tensor(rng, {7, 6}));
    ps.add("b2", random_tensor(rng, {6}));
    ps.add("w3", random_tensor(rng, {6, 1}));
    ps.add("b3", random_tensor(rng, {1}));
    Tensor x = random_tensor(rng, {8, 5});
    Tensor y(Shape{8, 1});
    for (auto& v : y.values()) v = rng.bernoulli(0.5);
    gc::LossBuilder build = [&](ValueGraph& g) {
      Var h = g.leaky_relu(g.add(g.matmul(g.constant(x), g.parameter("w1")), g.parameter("b1")));
      h = g.leaky_relu(g.add(g.matmul(h, g.parameter("w2")), g.parameter("b2")));
      Var p = g.sigmoid(g.add(g.matmul(h, g.parameter("w3")), g.parameter("b3")));
      return g.mean(g.bce(p, y));
    };
    auto res = gc::check_gradients(ps, build);
    EXPECT_LE(res.max_rel_error, kTol) << res.worst_param;
  }
}

TEST(AdamW, ZeroGradientNoDecayLeavesParams) {
  ParameterSet ps;
  auto p = ps.add("p", Tensor::vector({1.0, -2.0}));
  AdamW opt({.learning_rate = 0.1});
  opt.step(ps);
  EXPECT_EQ(ps.value(p), Tensor::vector({1.0, -2.0}));
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  ParameterSet ps;
  auto p = ps.add("p", Tensor::vector({1.0}));
  ps.grad(p)[0] = 1.0;
  AdamW opt({.learning_rate = 0.1});
  opt.step(ps);
  // m_hat = g, v_hat = g^2 -> update = lr * 1 / (1 + eps)
  EXPECT_NEAR(ps.value(p)[0], 0.9, 1e-8);
}

TEST(AdamW, LinearWarmup) {
  AdamW opt({.learning_rate = 0.2, .warmup_steps = 30});
  EXPECT_DOUBLE_EQ(opt.lr_at(15), 0.1);
  EXPECT_DOUBLE_EQ(opt.lr_at(30), 0.2);
  EXPECT_DOUBLE_EQ(opt.lr_at(100), 0.2);
}

TEST(AdamW, DecoupledWeightDecay) {
  ParameterSet ps;
  auto p = ps.add("p", Tensor::vector({2.0}));
  AdamW opt({.learning_rate = 0.1, .weight_decay = 0.5});
  opt.step(ps);
  EXPECT_NEAR(ps.value(p)[0], 2.0 * (1.0 - 0.05), 1e-15);
}

TEST(AdamW, NanGradientRejectedWithoutSideEffects) {
  ParameterSet ps;
  auto p = ps.add("p", Tensor::vector({1.0}));
  auto q = ps.add("q", Tensor::vector({1.0}));
  ps.grad(p)[0] = 1.0;
  ps.grad(q)[0] = std::nan("");
  AdamW opt({.learning_rate = 0.1});
  EXPECT_THROW(opt.step(ps), NonFiniteError);
  EXPECT_EQ(ps.value(p)[0], 1.0);
  EXPECT_EQ(opt.steps_taken(), 0);
}

TEST(AdamW, SkipsFrozenParameters) {
  ParameterSet ps;
  auto p = ps.add("p", Tensor::vector({1.0}), false);
  ps.grad(p)[0] = 1.0;
  AdamW opt({.learning_rate = 0.1});
  opt.step(ps);
  EXPECT_EQ(ps.value(p)[0], 1.0);
}

TEST(TrainConfig, EffectiveBatchSize) {
  TrainConfig cfg{.per_worker_batch_size = 16, .grad_accumulation_steps = 8, .worker_count = 1};
  EXPECT_EQ(cfg.effective_batch_size(), 128u);
  EXPECT_EQ(cfg.micro_batches_per_step(), 8u);
}

TEST(TrainConfig, LargeEffectiveBatchNeedsCompatiblePerWorkerSize) {
  // 3172 = 4 x 793 is reachable, but not with a per-worker batch of 16.
  TrainConfig cfg = TrainConfig::for_effective_batch(3172, 4, 1);
  EXPECT_EQ(cfg.grad_accumulation_steps, 793u);
  EXPECT_EQ(cfg.effective_batch_size(), 3172u);
  EXPECT_THROW(TrainConfig::for_effective_batch(3172, 16, 1), Error);
}

TEST(Checkpoint, RoundTripAndLayout) {
  NamedTensors t = {{"w", Tensor::matrix({{1.5, -2}, {3, 4}})}, {"s", Tensor::scalar(7)}};
  auto bytes = encode_checkpoint(t);
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "STNC");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].first, "w");
  EXPECT_EQ(back[0].second, t[0].second);
  EXPECT_EQ(back[1].second.rank(), 0u);
  EXPECT_EQ(back[1].second.item(), 7.0);
}

TEST(Checkpoint, RejectsCorruption) {
  auto bytes = encode_checkpoint({{"w", Tensor::vector({1, 2, 3})}});
  auto truncated = bytes;
  truncated.resize(bytes.size() - 5);
  EXPECT_THROW(decode_checkpoint(truncated), FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
}

TEST(Checkpoint, AssignChecksShapes) {
  ParameterSet ps;
  ps.add("w", Tensor(Shape{2}));
  EXPECT_THROW(assign_from(ps, {{"w", Tensor(Shape{3})}}), ShapeError);
  EXPECT_THROW(assign_from(ps, {{"v", Tensor(Shape{2})}}), FormatError);
}

TEST(Rng, ReproducibleStreams) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.below(17), b.below(17));
    EXPECT_EQ(a.normal(), b.normal());
  }
  auto s = Rng(5).sample_without_replacement(10, 4);
  std::sort(s.begin(), s.end());
  EXPECT_EQ(std::unique(s.begin(), s.end()), s.end());
}
