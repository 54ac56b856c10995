#include "star/gnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "star/core/error.hpp"
#include "star/core/rng.hpp"
#include "star/eval/auc.hpp"

namespace star::gnn {

using core::Shape;
using core::Tensor;
using core::ValueGraph;
using core::Var;
using graph::EdgeTypeId;
using graph::HeteroGraph;
using graph::NodeIndex;

namespace {

constexpr std::size_t kEmbedChunk = 256;

std::vector<EdgeTypeId> message_types(const HeteroGraph& g, std::span<const std::string> keys) {
  return keys.empty() ? graph::all_edge_types(g) : graph::resolve_edge_types(g, keys);
}

struct TaskState {
  const LinkPredictionTask* task = nullptr;
  LinkSplit split;
  std::uint64_t seed = 0;
  core::Rng rng{0};
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  bool active = false;
};

}  // namespace

Var link_logits(ValueGraph& g, Var src, Var dst) { return g.row_dot(src, dst); }

Var link_loss(ValueGraph& g, Var logits, const std::vector<double>& labels) {
  if (labels.empty()) throw Error("link_loss: empty pair set");
  if (g.value(logits).numel() != labels.size()) {
    throw ShapeError("link_loss: " + std::to_string(g.value(logits).numel()) + " logits vs " +
                     std::to_string(labels.size()) + " labels");
  }
  Tensor y(Shape{labels.size()}, labels);
  return g.mean(g.bce(g.sigmoid(logits), std::move(y)));
}

double multi_task_loss(std::span<const double> lambdas, std::span<const double> losses) {
  if (lambdas.size() != losses.size()) throw Error("multi_task_loss: lambda/loss count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i)
    if (lambdas[i] != 0.0) total += lambdas[i] * losses[i];
  return total;
}

AdaptiveSchedule::AdaptiveSchedule(AdaptiveSamplingConfig cfg) : cfg_(cfg), count_(cfg.sigma) { cfg_.validate(); }

bool AdaptiveSchedule::observe(double metric) {
  const bool improving = metric - best_ > cfg_.improvement_threshold;
  best_ = std::max(best_, metric);
  step(improving);
  return improving;
}

void AdaptiveSchedule::step(bool improving) {
  trace_.push_back(count_);
  if (!improving) count_ = std::min(count_ + cfg_.delta, cfg_.alpha);
}

std::int64_t validation_cutoff(const HeteroGraph& g, double val_fraction) {
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw Error("val_fraction must be in [0, 1)");
  std::vector<std::int64_t> ts;
  for (EdgeTypeId et = 0; et < g.num_edge_types(); ++et) {
    const auto& info = g.edge_type(et);
    if (info.reversed || info.category != graph::EdgeCategory::interaction) continue;
    for (const auto& e : g.edges_of_type(et)) ts.push_back(e.timestamp);
  }
  if (ts.empty()) return std::numeric_limits<std::int64_t>::max();
  std::sort(ts.begin(), ts.end());
  const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(ts.size())));
  if (n_val == 0) return std::numeric_limits<std::int64_t>::max();
  if (n_val == ts.size()) return ts.front() - 1;
  return ts[ts.size() - n_val - 1];
}

LinkSplit split_task(const HeteroGraph& g, const LinkPredictionTask& task, std::int64_t cutoff, std::uint64_t seed) {
  task.validate();
  LinkSplit s;
  for (const auto& e : g.edges_of_type(g.require_edge_type(task.edge_type)))
    (e.timestamp <= cutoff ? s.train : s.val).push_back(e);
  const auto& pool = g.nodes_of_type(task.dst_type);
  if (pool.empty()) throw Error("task '" + task.name + "': graph has no destination nodes");
  core::Rng rng(core::derive_seed(seed, "val:" + task.name));
  for (const auto& e : s.val) {
    s.val_pairs.emplace_back(e.src, e.dst);
    s.val_labels.push_back(1.0);
  }
  for (const auto& e : s.val) {
    s.val_pairs.emplace_back(e.src, pool[rng.below(pool.size())]);
    s.val_labels.push_back(0.0);
  }
  return s;
}

graph::SamplerConfig inference_sampler(const GnnModel& model, std::size_t alpha, std::int64_t time_cutoff) {
  graph::SamplerConfig sc;
  sc.strategy = graph::SamplingStrategy::temporal;
  sc.fanouts.assign(model.config().num_layers, alpha);
  sc.time_cutoff = time_cutoff;
  return sc;
}

Tensor embed_nodes(const GnnModel& model, const HeteroGraph& g, std::span<const NodeIndex> nodes, Tower tower,
                   const graph::SamplerConfig& sampler, std::span<const EdgeTypeId> edge_types) {
  const std::size_t dim = model.config().embedding_dim;
  Tensor out(Shape{nodes.size(), dim});
  if (nodes.empty()) return out;
  auto run = [&](std::span<const NodeIndex> seeds) {
    const auto batch = graph::subgraph_batch(g, seeds, edge_types, sampler);
    ValueGraph vg(const_cast<core::ParameterSet*>(&model.params()));
    return vg.value(model.encode(vg, g, batch, tower, false));
  };
  if (nodes.size() * 4 >= g.num_nodes()) {
    // one batch over every node: each layer is computed once per node
    std::vector<NodeIndex> all(g.num_nodes());
    std::iota(all.begin(), all.end(), NodeIndex{0});
    const Tensor full = run(all);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto src = full.row(nodes[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }
  for (std::size_t start = 0; start < nodes.size(); start += kEmbedChunk) {
    const std::size_t n = std::min(kEmbedChunk, nodes.size() - start);
    const Tensor part = run(nodes.subspan(start, n));
    std::copy(part.values().begin(), part.values().end(), out.data() + start * dim);
  }
  return out;
}

double evaluate_task(const GnnModel& model, const HeteroGraph& g, const LinkSplit& split,
                     const graph::SamplerConfig& sampler, std::span<const EdgeTypeId> edge_types) {
  if (split.val_pairs.empty()) throw Error("evaluate_task: no validation pairs");
  std::vector<NodeIndex> srcs, dsts;
  std::unordered_map<NodeIndex, std::size_t> src_row, dst_row;
  for (auto [s, d] : split.val_pairs) {
    if (src_row.emplace(s, srcs.size()).second) srcs.push_back(s);
    if (dst_row.emplace(d, dsts.size()).second) dsts.push_back(d);
  }
  const Tensor es = embed_nodes(model, g, srcs, Tower::source, sampler, edge_types);
  const Tensor ed = embed_nodes(model, g, dsts, Tower::destination, sampler, edge_types);
  std::vector<double> scores;
  scores.reserve(split.val_pairs.size());
  for (auto [s, d] : split.val_pairs) {
    const auto a = es.row(src_row[s]);
    const auto b = ed.row(dst_row[d]);
    const double v = std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
    if (!std::isfinite(v)) throw NonFiniteError("evaluate_task: non-finite link score");
    scores.push_back(v);
  }
  return eval::compute_auc(scores, split.val_labels);
}

GnnTrainResult train_gnn(GnnModel& model, const HeteroGraph& g, const GnnTrainOptions& opts) {
  if (opts.tasks.empty()) throw Error("train_gnn: no tasks");
  if (opts.batch_size == 0) throw Error("train_gnn: batch_size must be > 0");
  opts.sampling.validate();
  model.check_compatible(g);
  const auto types = message_types(g, opts.edge_types);
  const std::size_t layers = model.config().num_layers;

  GnnTrainResult res;
  res.time_cutoff = validation_cutoff(g, opts.val_fraction);
  std::vector<TaskState> tasks(opts.tasks.size());
  std::size_t max_train = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    auto& t = tasks[i];
    t.task = &opts.tasks[i];
    t.split = split_task(g, *t.task, res.time_cutoff, opts.seed);
    t.active = t.task->lambda > 0.0 && !t.split.train.empty();
    t.seed = core::derive_seed(opts.seed, "task:" + t.task->name);
    t.rng = core::Rng(t.seed);
    t.order.resize(t.split.train.size());
    std::iota(t.order.begin(), t.order.end(), std::size_t{0});
    t.rng.shuffle(t.order);
    if (t.active) max_train = std::max(max_train, t.split.train.size());
  }
  res.task_loss.resize(tasks.size());
  if (max_train == 0) throw Error("train_gnn: no task has a positive weight and training edges");

  const std::size_t steps_per_epoch = (max_train + opts.batch_size - 1) / opts.batch_size;
  const std::size_t eval_interval = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(opts.sampling.eval_every * static_cast<double>(steps_per_epoch))));
  const graph::SamplerConfig eval_sampler = inference_sampler(model, opts.sampling.alpha, res.time_cutoff);

  auto& params = model.params();
  core::AdamWConfig oc = opts.optimizer;
  oc.weight_decay = model.config().l2_reg;
  core::AdamW opt(oc);
  AdaptiveSchedule schedule(opts.sampling);
  core::ParameterSet best = params;
  bool have_best = false;
  res.best_val_auc = -1.0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;

  auto validate = [&](std::size_t epoch, std::size_t step_in_epoch) {
    EvalPoint p;
    p.step = res.steps;
    p.epoch = static_cast<double>(epoch) + static_cast<double>(step_in_epoch) / static_cast<double>(steps_per_epoch);
    p.sample_count = schedule.sample_count();
    p.sampled_edges = res.sampled_edges;
    p.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    loss_sum = 0.0;
    loss_count = 0;
    double sum = 0.0;
    std::size_t n = 0;
    for (auto& t : tasks) {
      double auc = std::numeric_limits<double>::quiet_NaN();
      if (t.active && !t.split.val_pairs.empty()) {
        auc = evaluate_task(model, g, t.split, eval_sampler, types);
        sum += auc;
        ++n;
      }
      p.task_auc.push_back(auc);
    }
    if (n == 0) return;
    p.val_auc = sum / static_cast<double>(n);
    p.improving = schedule.observe(p.val_auc);
    res.trace.push_back(p);
    if (p.val_auc > res.best_val_auc) {
      res.best_val_auc = p.val_auc;
      res.best_step = res.steps;
      best = params;
      have_best = true;
    }
  };

  auto task_step = [&](TaskState& t) {
    const auto& task = *t.task;
    const auto& pool = g.nodes_of_type(task.dst_type);
    std::vector<NodeIndex> srcs, dsts;
    std::vector<double> labels;
    graph::EdgeExclusion exclude;
    const std::size_t take = std::min(opts.batch_size, t.order.size());
    for (std::size_t k = 0; k < take; ++k) {
      if (t.cursor == t.order.size()) {
        t.rng.shuffle(t.order);
        t.cursor = 0;
      }
      const auto& e = t.split.train[t.order[t.cursor++]];
      exclude.add(e.src, e.dst);
      srcs.push_back(e.src);
      dsts.push_back(e.dst);
      labels.push_back(1.0);
      for (std::size_t j = 0; j < task.neg_ratio; ++j) {
        srcs.push_back(e.src);
        dsts.push_back(pool[t.rng.below(pool.size())]);
        labels.push_back(0.0);
      }
    }
    graph::SamplerConfig sc;
    sc.strategy = opts.strategy;
    sc.fanouts.assign(layers, schedule.sample_count());
    sc.seed = core::derive_seed(t.seed, "step" + std::to_string(res.steps));
    sc.time_cutoff = res.time_cutoff;
    const auto bs = graph::subgraph_batch(g, srcs, types, sc, &exclude);
    const auto bd = graph::subgraph_batch(g, dsts, types, sc, &exclude);
    res.sampled_edges += bs.sampled_edges + bd.sampled_edges;
    ValueGraph vg(&params);
    Var es = model.encode(vg, g, bs, Tower::source, true);
    Var ed = model.encode(vg, g, bd, Tower::destination, true);
    Var loss = link_loss(vg, link_logits(vg, es, ed), labels);
    vg.backward(vg.scale(loss, task.lambda));
    return vg.value(loss).item();
  };

  try {
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
      for (std::size_t s = 0; s < steps_per_epoch; ++s) {
        params.zero_grad();
        std::vector<double> lambdas, losses;
        for (std::size_t i = 0; i < tasks.size(); ++i) {
          if (!tasks[i].active) continue;
          const double l = task_step(tasks[i]);
          res.task_loss[i].push_back(l);
          lambdas.push_back(tasks[i].task->lambda);
          losses.push_back(l);
        }
        const double total = multi_task_loss(lambdas, losses);
        if (!std::isfinite(total)) throw NonFiniteError("non-finite training loss");
        opt.step(params);
        ++res.steps;
        res.step_loss.push_back(total);
        loss_sum += total;
        ++loss_count;
        if (opts.after_step) opts.after_step(res.steps, params);
        if ((s + 1) % eval_interval == 0 || s + 1 == steps_per_epoch) validate(epoch, s + 1);
      }
    }
  } catch (const NonFiniteError& e) {
    res.diverged = true;
    res.divergence = e.what();
  }
  if (have_best || res.diverged) params.copy_values_from(best);
  return res;
}

InferenceResult infer(const GnnModel& model, const HeteroGraph& g,
                      std::span<const std::pair<graph::NodeType, std::uint64_t>> requests, Tower tower,
                      std::size_t alpha, std::span<const std::string> edge_types) {
  if (alpha == 0) throw Error("infer: fanout must be > 0");
  model.check_compatible(g);
  InferenceResult res;
  res.dim = model.config().embedding_dim;
  std::vector<NodeIndex> nodes;
  for (auto [type, id] : requests) {
    const auto n = g.find(type, id);
    if (!n) {
      ++res.unknown;
      continue;
    }
    nodes.push_back(*n);
    res.types.push_back(type);
    res.ids.push_back(id);
  }
  const auto types = message_types(g, edge_types);
  const Tensor emb = embed_nodes(model, g, nodes, tower, inference_sampler(model, alpha), types);
  res.data.reserve(emb.numel());
  for (double v : emb.values()) res.data.push_back(static_cast<float>(v));
  return res;
}

}  // namespace star::gnn
