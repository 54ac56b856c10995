#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "star/graph/hetero_graph.hpp"

namespace star::graph {

enum class SamplingStrategy : std::uint8_t { random, temporal, ppr };
SamplingStrategy parse_strategy(std::string_view name);
std::string_view strategy_name(SamplingStrategy s);

struct SamplerConfig {
  SamplingStrategy strategy = SamplingStrategy::random;
  std::vector<std::size_t> fanouts{10};
  std::uint64_t seed = 0;
  std::size_t ppr_top_k = 50;
  std::size_t ppr_iterations = 5;
  double ppr_teleport = 0.15;
  /// Edges stamped later than this are invisible to every sampler.
  std::int64_t time_cutoff = std::numeric_limits<std::int64_t>::max();

  void validate() const;
};

/// Unordered node pairs hidden from sampling (the supervision edges of a batch).
class EdgeExclusion {
 public:
  void add(NodeIndex a, NodeIndex b) { keys_.insert(key(a, b)); }
  bool contains(NodeIndex a, NodeIndex b) const { return !keys_.empty() && keys_.count(key(a, b)) != 0; }
  bool empty() const { return keys_.empty(); }

 private:
  static std::uint64_t key(NodeIndex a, NodeIndex b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | b;
  }
  std::unordered_set<std::uint64_t> keys_;
};

inline constexpr EdgeTypeId kPprEdgeType = std::numeric_limits<EdgeTypeId>::max();

struct Neighbor {
  NodeIndex node = 0;
  EdgeTypeId edge_type = 0;  // kPprEdgeType for PPR picks
  std::int64_t timestamp = 0;
  bool operator==(const Neighbor&) const = default;
};

std::vector<EdgeTypeId> resolve_edge_types(const HeteroGraph& g, std::span<const std::string> keys);
std::vector<EdgeTypeId> all_edge_types(const HeteroGraph& g);

/// Up to `count` neighbors over the pooled lists of `edge_types`.
/// random: uniform without replacement, seeded by (cfg.seed, node);
/// temporal: the most recent; ppr: top-scoring nodes of ppr_scores (edge types ignored).
/// When the pool has at most `count` entries all of them are returned once.
std::vector<Neighbor> sample_neighbors(const HeteroGraph& g, NodeIndex node, std::span<const EdgeTypeId> edge_types,
                                       std::size_t count, const SamplerConfig& cfg,
                                       const EdgeExclusion* exclude = nullptr);

/// Personalized PageRank from `node` on the type-collapsed, unweighted graph:
/// p <- teleport * e_node + (1 - teleport) * A^T D^-1 p, starting from e_node.
/// Mass at dangling nodes returns to the seed. Nonzero entries, sorted by node.
std::vector<std::pair<NodeIndex, double>> ppr_scores(const HeteroGraph& g, NodeIndex node, std::size_t iterations,
                                                     double teleport,
                                                     std::int64_t time_cutoff = std::numeric_limits<std::int64_t>::max(),
                                                     const EdgeExclusion* exclude = nullptr);

/// Layered mini-batch. Row r holds node `nodes[r]` first reached at hop
/// `depth[r]`; rows with depth < hops carry their sampled neighbor rows.
struct SubgraphBatch {
  struct Link {
    std::size_t row;
    EdgeTypeId edge_type;
  };
  std::vector<NodeIndex> nodes;
  std::vector<std::uint32_t> depth;
  std::vector<std::size_t> seed_rows;  // one per requested seed, duplicates share rows
  std::vector<std::vector<Link>> neighbors;
  std::size_t hops = 0;
  std::size_t sampled_edges = 0;
};

SubgraphBatch subgraph_batch(const HeteroGraph& g, std::span<const NodeIndex> seeds,
                             std::span<const EdgeTypeId> edge_types, const SamplerConfig& cfg,
                             const EdgeExclusion* exclude = nullptr);

}  // namespace star::graph
