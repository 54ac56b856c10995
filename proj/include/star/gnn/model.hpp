#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "star/core/parameters.hpp"
#include "star/core/rng.hpp"
#include "star/core/value_graph.hpp"
#include "star/gnn/config.hpp"
#include "star/graph/hetero_graph.hpp"
#include "star/graph/sampler.hpp"

namespace star::gnn {

/// Feature layout a model was built for.
struct GraphSchema {
  std::size_t text_dim = 0;
  std::uint32_t id_slots = 0;
  std::vector<std::uint32_t> categorical_cardinality;

  static GraphSchema of(const graph::HeteroGraph& g);
  bool operator==(const GraphSchema&) const = default;
};

/// Attention-pooled message passing over sampled subgraphs.
///
/// Input per node: [text embedding | id-slot embedding | mean categorical
/// embedding] -> leaky(x W_in + b). Each layer pools the previous states of
/// the sampled neighbors (plus the node itself when include_target_node) per
/// head, then h' = leaky(h W_self + pooled W_nbr + b). Optional batch norm and
/// a final projection to embedding_dim. With dual_encoder the source and
/// destination towers have separate weights; id and categorical tables are
/// always shared.
class GnnModel {
 public:
  GnnModel(EncoderConfig cfg, GraphSchema schema, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  const GraphSchema& schema() const { return schema_; }
  core::ParameterSet& params() { return params_; }
  const core::ParameterSet& params() const { return params_; }

  /// Embeddings [seed_rows.size(), embedding_dim] in seed order; `g` must be bound to params().
  core::Var encode(core::ValueGraph& g, const graph::HeteroGraph& graph, const graph::SubgraphBatch& batch,
                   Tower tower, bool training) const;

  /// Throws when the graph's features do not fit this model.
  void check_compatible(const graph::HeteroGraph& graph) const;

  /// Copies source-tower weights into the destination tower.
  void tie_towers();
  std::string tower_prefix(Tower t) const;

  void save(const std::filesystem::path& path) const;
  static GnnModel load(const std::filesystem::path& path);

 private:
  GnnModel(EncoderConfig cfg, GraphSchema schema) : cfg_(std::move(cfg)), schema_(std::move(schema)) {}
  void declare(std::uint64_t seed);
  void declare_tower(const std::string& prefix, core::Rng& rng);
  core::Var input_features(core::ValueGraph& g, const graph::HeteroGraph& graph,
                           std::span<const graph::NodeIndex> nodes) const;

  EncoderConfig cfg_;
  GraphSchema schema_;
  std::vector<std::size_t> cat_offsets_;
  std::size_t cat_rows_ = 0;
  core::ParameterSet params_;
};

/// Pools key rows [B*S, D] per head with weights [B*H, S] (rows summing to 1 or 0).
core::Var pool_keys(core::ValueGraph& g, core::Var weights, core::Var keys, std::size_t heads, std::size_t slots);

}  // namespace star::gnn
