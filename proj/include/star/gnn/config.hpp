#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "star/graph/hetero_graph.hpp"

namespace star::gnn {

enum class Pooling : std::uint8_t { mean, self_attention };
Pooling parse_pooling(std::string_view name);
std::string_view pooling_name(Pooling p);

enum class Tower : std::uint8_t { source, destination };
Tower parse_tower(std::string_view name);

struct EncoderConfig {
  std::size_t embedding_dim = 200;
  std::size_t units_multiplier = 4;  // hidden width = multiplier x embedding_dim
  std::size_t attention_heads = 4;
  std::size_t num_layers = 2;
  Pooling pooling = Pooling::self_attention;
  bool dual_encoder = true;
  bool include_target_node = true;
  double l2_reg = 1e-5;
  bool batch_norm = true;
  std::size_t feature_dim = 32;  // id-slot and categorical embedding width
  bool use_text = true;
  bool use_id = true;
  bool use_categorical = true;

  std::size_t hidden() const { return units_multiplier * embedding_dim; }
  void validate() const;
};

struct LinkPredictionTask {
  std::string name;
  std::string edge_type;
  graph::NodeType src_type = graph::NodeType::member;
  graph::NodeType dst_type = graph::NodeType::job;
  double lambda = 1.0;
  std::size_t neg_ratio = 1;

  void validate() const;
};

/// JSON array of {name, edge_type, src_type, dst_type, lambda, neg_ratio}.
std::vector<LinkPredictionTask> parse_task_spec(const std::string& json_text);
std::vector<LinkPredictionTask> load_task_spec(const std::filesystem::path& path);
std::string task_spec_json(const std::vector<LinkPredictionTask>& tasks);

struct AdaptiveSamplingConfig {
  std::size_t alpha = 20;  // max sampled neighbors
  std::size_t sigma = 5;   // initial
  std::size_t delta = 5;   // stride
  double improvement_threshold = 1e-3;
  double eval_every = 0.1;  // fraction of an epoch

  void validate() const;
  static AdaptiveSamplingConfig fixed(std::size_t alpha, double eval_every = 0.1);
};

}  // namespace star::gnn
