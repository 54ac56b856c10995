#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "star/core/error.hpp"
#include "star/core/rng.hpp"
#include "star/gnn/config.hpp"
#include "star/gnn/model.hpp"
#include "star/gnn/training.hpp"
#include "support/gnn_cases.hpp"
#include "support/gradcheck.hpp"
#include "support/toy_graph.hpp"

using namespace star;
using namespace star::gnn;
using core::Shape;
using core::Tensor;
using core::ValueGraph;
using core::Var;
using graph::NodeIndex;
using graph::NodeType;
namespace gc = star::testing;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.embedding_dim = 4;
  c.units_multiplier = 2;
  c.attention_heads = 2;
  c.num_layers = 2;
  c.feature_dim = 3;
  return c;
}

std::vector<LinkPredictionTask> two_tasks(double la = 1.0, double lb = 0.5) {
  return {{"apply", "member-job-APPLY", NodeType::member, NodeType::job, la, 1},
          {"view", "member-job-VIEW", NodeType::member, NodeType::job, lb, 2}};
}

GnnTrainOptions small_options() {
  GnnTrainOptions o;
  o.tasks = two_tasks();
  o.sampling = AdaptiveSamplingConfig::fixed(4, 0.5);
  o.batch_size = 16;
  o.epochs = 2;
  o.optimizer.learning_rate = 1e-2;
  o.optimizer.warmup_steps = 0;
  o.seed = 3;
  return o;
}

bool all_finite(const core::ParameterSet& p) {
  for (const auto& e : p.entries())
    if (!e.value.all_finite()) return false;
  return true;
}

}  // namespace

TEST(GnnConfig, ValidatesShapesAndTasks) {
  EncoderConfig c = tiny_config();
  c.attention_heads = 3;  // hidden 8
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config();
  c.use_text = c.use_id = c.use_categorical = false;
  EXPECT_THROW(c.validate(), Error);

  EXPECT_THROW(parse_task_spec(R"([{"name":"x","edge_type":"member-job-APPLY","src_type":"job","dst_type":"job"}])"),
               Error);
  EXPECT_THROW(parse_task_spec("[]"), Error);
  const auto tasks = parse_task_spec(task_spec_json(two_tasks()));
  ASSERT_EQ(tasks.size(), 2u);
  EXPECT_EQ(tasks[1].name, "view");
  EXPECT_EQ(tasks[1].neg_ratio, 2u);
  EXPECT_DOUBLE_EQ(tasks[1].lambda, 0.5);
}

TEST(AdaptiveSchedule, NeverImprovingGrowsToCap) {
  AdaptiveSchedule s({.alpha = 20, .sigma = 5, .delta = 5});
  for (int i = 0; i < 5; ++i) s.step(false);
  EXPECT_EQ(s.trace(), (std::vector<std::size_t>{5, 10, 15, 20, 20}));
}

TEST(AdaptiveSchedule, AlternatingOutcomes) {
  AdaptiveSchedule s({.alpha = 8, .sigma = 4, .delta = 3});
  for (int i = 0; i < 6; ++i) s.step(i % 2 == 0);
  EXPECT_EQ(s.trace(), (std::vector<std::size_t>{4, 4, 7, 7, 8, 8}));
}

TEST(AdaptiveSchedule, MetricThresholdDecidesImprovement) {
  AdaptiveSchedule s({.alpha = 10, .sigma = 2, .delta = 2, .improvement_threshold = 1e-3});
  EXPECT_TRUE(s.observe(0.6));     // first observation always improves
  EXPECT_FALSE(s.observe(0.6005)); // below threshold
  EXPECT_TRUE(s.observe(0.61));
  EXPECT_FALSE(s.observe(0.5));
  EXPECT_EQ(s.trace(), (std::vector<std::size_t>{2, 2, 4, 4}));
  EXPECT_EQ(s.sample_count(), 6u);
  EXPECT_DOUBLE_EQ(s.best(), 0.61);
}

TEST(AdaptiveSchedule, PropertyBoundedAndMonotone) {
  core::Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    AdaptiveSamplingConfig c;
    c.alpha = 1 + rng.below(30);
    c.sigma = 1 + rng.below(c.alpha);
    c.delta = 1 + rng.below(7);
    AdaptiveSchedule s(c);
    for (int i = 0; i < 40; ++i) s.step(rng.bernoulli(0.4));
    std::size_t prev = c.sigma;
    for (std::size_t k : s.trace()) {
      EXPECT_GE(k, prev);
      EXPECT_LE(k, c.alpha);
      prev = k;
    }
  }
  EXPECT_THROW(AdaptiveSchedule({.alpha = 3, .sigma = 4}), Error);
}

TEST(GnnLoss, ExamplesAndErrors) {
  ValueGraph g;
  Var a = g.constant(Tensor::matrix({{10.0, 0.0}, {-10.0, 0.0}}));
  Var b = g.constant(Tensor::matrix({{10.0, 0.0}, {10.0, 0.0}}));
  EXPECT_NEAR(g.value(link_loss(g, link_logits(g, a, b), {1.0, 0.0})).item(), 0.0, 1e-9);
  Var z = g.constant(Tensor(Shape{2, 2}));
  EXPECT_NEAR(g.value(link_loss(g, link_logits(g, z, z), {1.0, 0.0})).item(), std::log(2.0), 1e-12);
  EXPECT_THROW(link_loss(g, link_logits(g, a, b), {}), Error);
  EXPECT_THROW(link_loss(g, link_logits(g, a, b), {1.0}), ShapeError);

  const double l0[] = {0.0, 0.0}, l[] = {0.7, 0.2};
  EXPECT_EQ(multi_task_loss(l0, l), 0.0);
  const double w[] = {1.0, 0.5};
  EXPECT_DOUBLE_EQ(multi_task_loss(w, l), 0.8);
}

TEST(GnnModel, IdenticalNeighborsPoolToThemselves) {
  ValueGraph g;
  const std::size_t B = 3, S = 4, D = 6, H = 2;
  core::Rng rng(5);
  Tensor keys(Shape{B * S, D});
  Tensor w(Shape{B * H, S});
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> v(D);
    for (auto& x : v) x = rng.normal();
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t d = 0; d < D; ++d) keys.at(b * S + s, d) = v[d];
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t s = 0; s < S; ++s) w.at(b * H + h, s) = 1.0 / static_cast<double>(S);
  }
  const Tensor& pooled = g.value(pool_keys(g, g.constant(w), g.constant(keys), H, S));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t d = 0; d < D; ++d) EXPECT_NEAR(pooled.at(b, d), keys.at(b * S, d), 1e-12);
}

TEST(GnnModel, IsolatedNodeUsesOwnFeaturesOnly) {
  graph::GraphBuilder b;
  b.add_node(NodeType::member, 0, {.text_embedding = {0.5f, -1.0f}});
  b.add_node(NodeType::job, 0, {.text_embedding = {1.0f, 2.0f}});
  b.add_edge(NodeType::member, 0, "member-job-APPLY", NodeType::job, 0, 5, 1.0);
  b.add_node(NodeType::member, 1, {.text_embedding = {0.25f, 0.75f}});
  const auto g = b.build();

  EncoderConfig c = tiny_config();
  c.num_layers = 1;
  c.include_target_node = false;
  c.batch_norm = false;
  c.pooling = Pooling::mean;
  GnnModel m(c, GraphSchema::of(g), 9);
  const auto types = graph::all_edge_types(g);
  const NodeIndex lone = g.require(NodeType::member, 1);
  const Tensor got = embed_nodes(m, g, std::span(&lone, 1), Tower::source, inference_sampler(m, 5), types);

  // leaky(leaky(x Win + b) Wself + b1) Wout + bout
  auto& p = m.params();
  auto dense = [&](std::vector<double> x, const std::string& w, const std::string& bias, bool act) {
    const Tensor& W = p.value(p.require(w));
    const Tensor& B = p.value(p.require(bias));
    std::vector<double> y(W.cols());
    for (std::size_t j = 0; j < W.cols(); ++j) {
      double s = B[j];
      for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * W.at(i, j);
      y[j] = act && s < 0 ? s * core::kLeakySlope : s;
    }
    return y;
  };
  auto h = dense({0.25, 0.75}, "src.in.weight", "src.in.bias", true);
  h = dense(h, "src.layer0.self", "src.layer0.bias", true);
  h = dense(h, "src.out.weight", "src.out.bias", false);
  ASSERT_EQ(got.cols(), h.size());
  for (std::size_t j = 0; j < h.size(); ++j) EXPECT_NEAR(got.at(0, j), h[j], 1e-12);
}

TEST(GnnModel, GradientsMatchFiniteDifferencesOnTwoTasks) {
  const auto g = gc::gradcheck_graph();
  ASSERT_EQ(g.num_nodes(), 20u);
  core::Rng rng(21);
  int checked = 0;
  for (int instance = 0; checked < 8 && instance < 200; ++instance) {
    const auto r = gc::multitask_loss_instance(g, rng, instance);
    if (!r) continue;
    EXPECT_LT(r->max_rel_error, 1e-5) << "instance " << instance << " worst " << r->worst_param;
    ++checked;
  }
  EXPECT_EQ(checked, 8);
}

TEST(GnnTraining, ValidationCutoffHidesLatestEdges) {
  const auto g = gc::toy_graph();
  const std::int64_t cut = validation_cutoff(g, 0.1);
  std::size_t total = 0, later = 0;
  for (const char* key : {"member-job-APPLY", "member-job-VIEW"}) {
    for (const auto& e : g.edges_of_type(g.require_edge_type(key))) {
      ++total;
      later += e.timestamp > cut;
    }
  }
  EXPECT_EQ(later, total / 10);
  const auto split = split_task(g, two_tasks()[0], cut, 1);
  for (const auto& e : split.val) EXPECT_GT(e.timestamp, cut);
  for (const auto& e : split.train) EXPECT_LE(e.timestamp, cut);
  EXPECT_EQ(split.val_pairs.size(), 2 * split.val.size());
  EXPECT_EQ(validation_cutoff(g, 0.0), std::numeric_limits<std::int64_t>::max());
}

TEST(GnnTraining, InactiveTasksDoNotChangeTrajectory) {
  const auto g = gc::toy_graph();
  auto opts = small_options();
  opts.tasks = two_tasks(1.0, 0.0);
  GnnModel a(tiny_config(), GraphSchema::of(g), 4);
  const auto ra = train_gnn(a, g, opts);

  opts.tasks = {two_tasks()[0]};
  GnnModel b(tiny_config(), GraphSchema::of(g), 4);
  const auto rb = train_gnn(b, g, opts);

  ASSERT_GT(ra.steps, 0u);
  EXPECT_EQ(ra.step_loss, rb.step_loss);
  EXPECT_EQ(ra.task_loss[0], rb.task_loss[0]);
  EXPECT_TRUE(ra.task_loss[1].empty());
  for (std::size_t i = 0; i < a.params().size(); ++i)
    EXPECT_EQ(a.params().entries()[i].value, b.params().entries()[i].value) << a.params().entries()[i].name;

  opts.tasks = two_tasks(0.0, 0.0);
  GnnModel c(tiny_config(), GraphSchema::of(g), 4);
  EXPECT_THROW(train_gnn(c, g, opts), Error);
}

TEST(GnnTraining, ReproducibleWithSeed) {
  const auto g = gc::toy_graph();
  const auto opts = small_options();
  GnnModel a(tiny_config(), GraphSchema::of(g), 4), b(tiny_config(), GraphSchema::of(g), 4);
  const auto ra = train_gnn(a, g, opts);
  const auto rb = train_gnn(b, g, opts);
  EXPECT_EQ(ra.step_loss, rb.step_loss);
  EXPECT_EQ(ra.sampled_edges, rb.sampled_edges);
  ASSERT_EQ(ra.trace.size(), rb.trace.size());
  for (std::size_t i = 0; i < ra.trace.size(); ++i) EXPECT_EQ(ra.trace[i].val_auc, rb.trace[i].val_auc);
}

TEST(GnnTraining, TiedTowersStayIdenticalAtZeroLearningRate) {
  const auto g = gc::toy_graph();
  EncoderConfig c = tiny_config();
  c.batch_norm = false;
  GnnModel m(c, GraphSchema::of(g), 8);
  m.tie_towers();
  auto opts = small_options();
  opts.optimizer.learning_rate = 0.0;
  train_gnn(m, g, opts);
  auto& p = m.params();
  for (const auto& e : p.entries()) {
    if (e.name.rfind("src.", 0) != 0) continue;
    EXPECT_EQ(e.value, p.value(p.require("dst." + e.name.substr(4)))) << e.name;
  }
  const auto& members = g.nodes_of_type(NodeType::member);
  const auto types = graph::all_edge_types(g);
  const auto sc = inference_sampler(m, 4);
  EXPECT_EQ(embed_nodes(m, g, members, Tower::source, sc, types),
            embed_nodes(m, g, members, Tower::destination, sc, types));
}

TEST(GnnTraining, LearnsCommunityStructure) {
  gc::ToyGraphSpec spec;
  spec.members = 60;
  spec.jobs = 40;
  spec.applies = 600;
  spec.views = 200;
  spec.text_dim = 0;
  spec.in_community = 1.0;  // community match alone caps AUC at 0.75
  const auto g = gc::toy_graph(spec);
  EncoderConfig c = tiny_config();
  c.embedding_dim = 8;
  GnnModel m(c, GraphSchema::of(g), 2);
  auto opts = small_options();
  opts.tasks = {two_tasks()[0]};
  opts.epochs = 6;
  const auto r = train_gnn(m, g, opts);
  EXPECT_FALSE(r.diverged);
  EXPECT_GT(r.best_val_auc, 0.7);
  EXPECT_GT(r.best_val_auc, r.trace.front().val_auc);
  // best parameters are restored
  const auto split = split_task(g, opts.tasks[0], r.time_cutoff, opts.seed);
  EXPECT_DOUBLE_EQ(evaluate_task(m, g, split, inference_sampler(m, 4, r.time_cutoff), graph::all_edge_types(g)),
                   r.best_val_auc);
}

TEST(GnnTraining, AdaptiveTraceRecordsSampleCounts) {
  const auto g = gc::toy_graph();
  auto opts = small_options();
  opts.sampling = {.alpha = 6, .sigma = 2, .delta = 2, .eval_every = 0.25};
  GnnModel m(tiny_config(), GraphSchema::of(g), 4);
  const auto r = train_gnn(m, g, opts);
  ASSERT_GE(r.trace.size(), 4u);
  EXPECT_EQ(r.trace.front().sample_count, 2u);
  for (std::size_t i = 1; i < r.trace.size(); ++i) {
    const auto& prev = r.trace[i - 1];
    const std::size_t expect = prev.improving ? prev.sample_count : std::min<std::size_t>(prev.sample_count + 2, 6);
    EXPECT_EQ(r.trace[i].sample_count, expect);
    EXPECT_GE(r.trace[i].sampled_edges, prev.sampled_edges);
  }
}

TEST(GnnTraining, NonFiniteLossRestoresLastGoodParameters) {
  const auto g = gc::toy_graph();
  auto opts = small_options();
  opts.sampling.eval_every = 0.1;
  opts.after_step = [](std::size_t step, core::ParameterSet& p) {
    if (step == 4) p.entries().back().value[0] = std::nan("");
  };
  GnnModel m(tiny_config(), GraphSchema::of(g), 4);
  const auto r = train_gnn(m, g, opts);
  EXPECT_TRUE(r.diverged);
  EXPECT_EQ(r.steps, 4u);
  EXPECT_TRUE(all_finite(m.params()));
}

TEST(GnnInference, DeterministicFloatOutputAndUnknownNodes) {
  const auto g = gc::toy_graph();
  GnnModel m(tiny_config(), GraphSchema::of(g), 4);
  std::vector<std::pair<NodeType, std::uint64_t>> req = {
      {NodeType::member, 0}, {NodeType::member, 999}, {NodeType::job, 3}, {NodeType::member, 7}};
  const auto a = infer(m, g, req, Tower::source, 5);
  const auto b = infer(m, g, req, Tower::source, 5);
  EXPECT_EQ(a.unknown, 1u);
  EXPECT_EQ(a.ids, (std::vector<std::uint64_t>{0, 3, 7}));
  EXPECT_EQ(a.data.size(), 3 * a.dim);
  EXPECT_EQ(a.data, b.data);
  EXPECT_THROW(infer(m, g, req, Tower::source, 0), Error);
}

TEST(GnnInference, BatchedAndWholeGraphPathsAgree) {
  const auto g = gc::toy_graph();
  GnnModel m(tiny_config(), GraphSchema::of(g), 4);
  const auto types = graph::all_edge_types(g);
  const auto sc = inference_sampler(m, 3);
  std::vector<NodeIndex> all(g.num_nodes());
  for (NodeIndex i = 0; i < all.size(); ++i) all[i] = i;
  const Tensor whole = embed_nodes(m, g, all, Tower::destination, sc, types);
  for (NodeIndex n : {NodeIndex{0}, NodeIndex{17}, NodeIndex{40}}) {
    const Tensor one = embed_nodes(m, g, std::span(&n, 1), Tower::destination, sc, types);
    for (std::size_t j = 0; j < one.cols(); ++j) EXPECT_NEAR(one.at(0, j), whole.at(n, j), 1e-12);
  }
}

TEST(GnnInference, FeatureMismatchAndCheckpointRoundTrip) {
  const auto g = gc::toy_graph();
  GnnModel m(tiny_config(), GraphSchema::of(g), 4);
  gc::ToyGraphSpec wide;
  wide.text_dim = 5;
  EXPECT_THROW(infer(m, gc::toy_graph(wide), {}, Tower::source, 3), ShapeError);

  const auto path = std::filesystem::temp_directory_path() / "gnn_ckpt_test.stnc";
  m.save(path);
  const GnnModel back = GnnModel::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.schema(), m.schema());
  std::vector<std::pair<NodeType, std::uint64_t>> req = {{NodeType::job, 1}, {NodeType::skill, 2}};
  EXPECT_EQ(infer(m, g, req, Tower::destination, 4).data, infer(back, g, req, Tower::destination, 4).data);
}
