#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace star::graph {

enum class NodeType : std::uint8_t {
  member = 0,
  job,
  position,
  skill,
  title,
  company,
  recruiter,
  hire_project,
};
inline constexpr std::size_t kNodeTypeCount = 8;

std::string_view node_type_name(NodeType t);
NodeType parse_node_type(std::string_view name);
/// Shared attribute nodes (skill, title, company) must carry an id slot.
bool is_attribute_node(NodeType t);

using NodeIndex = std::uint32_t;
using EdgeTypeId = std::uint32_t;

enum class EdgeCategory : std::uint8_t { interaction = 0, attribute = 1 };

/// Edge type parsed from its key: "src-dst-ACTION" is an interaction,
/// "src-dst" an attribute edge. Reverse types use the key suffix "#rev".
struct EdgeTypeInfo {
  std::string key;
  NodeType src = NodeType::member;
  NodeType dst = NodeType::member;
  EdgeCategory category = EdgeCategory::attribute;
  bool reversed = false;
  EdgeTypeId reverse = 0;
  bool operator==(const EdgeTypeInfo&) const = default;
};

EdgeTypeInfo parse_edge_key(std::string_view key);
inline constexpr std::string_view kReverseSuffix = "#rev";

struct FeatureBundle {
  std::vector<float> text_embedding;  // empty when absent
  std::optional<std::uint32_t> id_slot;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> categorical;  // (feature_id, value_id)

  bool empty() const { return text_embedding.empty() && !id_slot && categorical.empty(); }
  bool operator==(const FeatureBundle&) const = default;
};

struct EdgeRecord {
  NodeIndex src = 0;
  NodeIndex dst = 0;
  std::int64_t timestamp = 0;
  double weight = 1.0;
};

/// Typed nodes with per-edge-type CSR adjacency in both directions. Each
/// adjacency list is ordered by timestamp descending (ties: neighbor index,
/// then insertion order). Immutable once built.
class HeteroGraph {
 public:
  struct Adjacency {
    std::span<const NodeIndex> neighbors;
    std::span<const std::int64_t> timestamps;
    std::span<const double> weights;
    std::size_t size() const { return neighbors.size(); }
  };

  std::size_t num_nodes() const { return types_.size(); }
  NodeType type(NodeIndex n) const { return types_.at(n); }
  std::uint64_t local_id(NodeIndex n) const { return local_ids_.at(n); }
  std::optional<NodeIndex> find(NodeType t, std::uint64_t local_id) const;
  NodeIndex require(NodeType t, std::uint64_t local_id) const;
  const std::vector<NodeIndex>& nodes_of_type(NodeType t) const { return by_type_[static_cast<std::size_t>(t)]; }

  std::size_t num_edge_types() const { return edge_types_.size(); }
  const EdgeTypeInfo& edge_type(EdgeTypeId id) const { return edge_types_.at(id); }
  const std::vector<EdgeTypeInfo>& edge_types() const { return edge_types_; }
  std::optional<EdgeTypeId> find_edge_type(std::string_view key) const;
  EdgeTypeId require_edge_type(std::string_view key) const;

  Adjacency adjacency(NodeIndex n, EdgeTypeId et) const;
  std::size_t degree(NodeIndex n, EdgeTypeId et) const;
  std::size_t edge_count(EdgeTypeId et) const;
  /// Edges stored under `et`, ordered by (timestamp, src, dst).
  std::vector<EdgeRecord> edges_of_type(EdgeTypeId et) const;

  const FeatureBundle& features(NodeIndex n) const { return features_.at(n); }
  std::size_t text_dim() const { return text_dim_; }
  std::uint32_t id_slot_count() const { return id_slot_count_; }
  /// Per categorical feature id: number of value ids (max value + 1).
  const std::vector<std::uint32_t>& categorical_cardinality() const { return cat_cardinality_; }

  bool operator==(const HeteroGraph&) const = default;

 private:
  friend class GraphBuilder;
  friend std::vector<unsigned char> encode_graph(const HeteroGraph&);
  friend HeteroGraph decode_graph(const std::vector<unsigned char>&);
  void finalize_indexes();

  std::vector<NodeType> types_;
  std::vector<std::uint64_t> local_ids_;
  std::vector<FeatureBundle> features_;
  std::vector<EdgeTypeInfo> edge_types_;
  // per edge type: offsets[num_nodes + 1] into the parallel arrays
  std::vector<std::vector<std::uint64_t>> offsets_;
  std::vector<std::vector<NodeIndex>> neighbors_;
  std::vector<std::vector<std::int64_t>> timestamps_;
  std::vector<std::vector<double>> weights_;
  std::size_t text_dim_ = 0;
  std::uint32_t id_slot_count_ = 0;
  std::vector<std::uint32_t> cat_cardinality_;

  // derived
  std::vector<std::vector<NodeIndex>> by_type_ = std::vector<std::vector<NodeIndex>>(kNodeTypeCount);
  std::vector<std::unordered_map<std::uint64_t, NodeIndex>> index_ =
      std::vector<std::unordered_map<std::uint64_t, NodeIndex>>(kNodeTypeCount);
};

class GraphBuilder {
 public:
  /// Throws on duplicate (type, local_id) or an empty feature bundle.
  NodeIndex add_node(NodeType t, std::uint64_t local_id, FeatureBundle features);
  /// Throws on unknown endpoints, endpoint types that contradict the key, or weight < 0.
  void add_edge(NodeType src_type, std::uint64_t src_id, std::string_view edge_key, NodeType dst_type,
                std::uint64_t dst_id, std::int64_t timestamp, double weight);
  void set_text_embedding(NodeIndex n, std::vector<float> emb);
  std::optional<NodeIndex> find(NodeType t, std::uint64_t local_id) const;
  std::size_t num_nodes() const { return types_.size(); }
  NodeType type(NodeIndex n) const { return types_.at(n); }
  std::uint64_t local_id(NodeIndex n) const { return local_ids_.at(n); }

  HeteroGraph build() const;

 private:
  struct PendingEdge {
    EdgeTypeId type;
    NodeIndex src, dst;
    std::int64_t ts;
    double w;
    std::size_t seq;
  };
  EdgeTypeId intern_edge_type(std::string_view key);

  std::vector<NodeType> types_;
  std::vector<std::uint64_t> local_ids_;
  std::vector<FeatureBundle> features_;
  std::vector<std::unordered_map<std::uint64_t, NodeIndex>> index_ =
      std::vector<std::unordered_map<std::uint64_t, NodeIndex>>(kNodeTypeCount);
  std::vector<EdgeTypeInfo> edge_types_;
  std::unordered_map<std::string, EdgeTypeId> edge_type_ids_;
  std::vector<PendingEdge> edges_;
};

}  // namespace star::graph
