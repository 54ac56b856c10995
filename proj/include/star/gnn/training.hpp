#pragma once

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "star/core/optimizer.hpp"
#include "star/gnn/model.hpp"

namespace star::gnn {

/// Dot-product link score per pair: [P, E] x [P, E] -> [P].
core::Var link_logits(core::ValueGraph& g, core::Var src, core::Var dst);
/// Mean binary cross-entropy of sigmoid(logits) against labels.
core::Var link_loss(core::ValueGraph& g, core::Var logits, const std::vector<double>& labels);
/// sum_i lambda_i * L_i.
double multi_task_loss(std::span<const double> lambdas, std::span<const double> losses);

/// Grows the neighbor sample count by delta (capped at alpha) whenever the
/// validation metric fails to beat the best seen so far by more than the threshold.
class AdaptiveSchedule {
 public:
  explicit AdaptiveSchedule(AdaptiveSamplingConfig cfg);

  std::size_t sample_count() const { return count_; }
  /// Records the count in use, updates it, returns whether the metric improved.
  bool observe(double metric);
  void step(bool improving);
  const std::vector<std::size_t>& trace() const { return trace_; }
  double best() const { return best_; }

 private:
  AdaptiveSamplingConfig cfg_;
  std::size_t count_;
  double best_ = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> trace_;
};

struct GnnTrainOptions {
  std::vector<LinkPredictionTask> tasks;
  AdaptiveSamplingConfig sampling;
  graph::SamplingStrategy strategy = graph::SamplingStrategy::random;
  /// Message-passing edge types; empty means every type in the graph.
  std::vector<std::string> edge_types;
  std::size_t batch_size = 64;  // positives per task per step
  std::size_t epochs = 1;
  core::AdamWConfig optimizer{.learning_rate = 1e-3, .warmup_steps = 20};
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  /// Called after every optimizer step (test hook).
  std::function<void(std::size_t step, core::ParameterSet&)> after_step;
};

struct EvalPoint {
  std::size_t step = 0;
  double epoch = 0.0;
  double val_auc = 0.0;
  std::vector<double> task_auc;  // per task; NaN for inactive tasks
  std::size_t sample_count = 0;
  bool improving = false;
  std::uint64_t sampled_edges = 0;  // cumulative, training only
  double train_loss = 0.0;
};

struct GnnTrainResult {
  std::vector<EvalPoint> trace;
  std::vector<double> step_loss;                // weighted total per step
  std::vector<std::vector<double>> task_loss;   // [task][step]; empty for inactive tasks
  double best_val_auc = 0.0;
  std::size_t best_step = 0;
  std::size_t steps = 0;
  std::uint64_t sampled_edges = 0;
  std::int64_t time_cutoff = 0;
  bool diverged = false;
  std::string divergence;
};

/// Chronological split shared by training and evaluation: interaction edges
/// stamped after the cutoff form the validation set and are hidden from sampling.
std::int64_t validation_cutoff(const graph::HeteroGraph& g, double val_fraction);

struct LinkSplit {
  std::vector<graph::EdgeRecord> train;
  std::vector<graph::EdgeRecord> val;
  /// Validation pairs (positives then seeded negatives) and labels.
  std::vector<std::pair<graph::NodeIndex, graph::NodeIndex>> val_pairs;
  std::vector<double> val_labels;
};
LinkSplit split_task(const graph::HeteroGraph& g, const LinkPredictionTask& task, std::int64_t cutoff,
                     std::uint64_t seed);

/// Rows [nodes.size(), embedding_dim]. BN runs in inference mode, so each row
/// depends only on its own node and the sampler config.
core::Tensor embed_nodes(const GnnModel& model, const graph::HeteroGraph& g, std::span<const graph::NodeIndex> nodes,
                         Tower tower, const graph::SamplerConfig& sampler,
                         std::span<const graph::EdgeTypeId> edge_types);

/// Sampler used for validation and inference: deterministic recency, fanout alpha per hop.
graph::SamplerConfig inference_sampler(const GnnModel& model, std::size_t alpha,
                                       std::int64_t time_cutoff = std::numeric_limits<std::int64_t>::max());

double evaluate_task(const GnnModel& model, const graph::HeteroGraph& g, const LinkSplit& split,
                     const graph::SamplerConfig& sampler, std::span<const graph::EdgeTypeId> edge_types);

/// Multi-task training (weights lambda_i; tasks with lambda 0 are skipped)
/// with the adaptive neighbor-count schedule. Parameters from the best
/// validation point are restored; a non-finite loss stops training at the
/// last good parameters.
GnnTrainResult train_gnn(GnnModel& model, const graph::HeteroGraph& g, const GnnTrainOptions& opts);

struct InferenceResult {
  std::vector<graph::NodeType> types;
  std::vector<std::uint64_t> ids;
  std::vector<float> data;  // row-major [ids.size(), dim]
  std::size_t dim = 0;
  std::size_t unknown = 0;
};

/// Embeds the requested (type, local id) nodes; ids missing from the graph
/// are skipped and counted.
InferenceResult infer(const GnnModel& model, const graph::HeteroGraph& g,
                      std::span<const std::pair<graph::NodeType, std::uint64_t>> requests, Tower tower,
                      std::size_t alpha, std::span<const std::string> edge_types = {});

}  // namespace star::gnn
