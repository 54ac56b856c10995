#include "star/graph/hetero_graph.hpp"

#include <algorithm>
#include <numeric>

#include "star/core/error.hpp"

namespace star::graph {

namespace {

constexpr std::string_view kNodeTypeNames[kNodeTypeCount] = {"member", "job",     "position",  "skill",
                                                             "title",  "company", "recruiter", "hire_project"};

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string_view node_type_name(NodeType t) { return kNodeTypeNames[static_cast<std::size_t>(t)]; }

NodeType parse_node_type(std::string_view name) {
  for (std::size_t i = 0; i < kNodeTypeCount; ++i)
    if (kNodeTypeNames[i] == name) return static_cast<NodeType>(i);
  throw Error("unknown node type '" + std::string(name) + "'");
}

bool is_attribute_node(NodeType t) {
  return t == NodeType::skill || t == NodeType::title || t == NodeType::company;
}

EdgeTypeInfo parse_edge_key(std::string_view key) {
  EdgeTypeInfo info;
  info.key = std::string(key);
  std::string_view base = key;
  if (base.ends_with(kReverseSuffix)) {
    info.reversed = true;
    base.remove_suffix(kReverseSuffix.size());
  }
  const auto parts = split(base, '-');
  if (parts.size() != 2 && parts.size() != 3) {
    throw Error("edge type '" + std::string(key) + "' must look like src-dst or src-dst-ACTION");
  }
  info.src = parse_node_type(parts[0]);
  info.dst = parse_node_type(parts[1]);
  if (parts.size() == 3 && parts[2].empty()) throw Error("edge type '" + std::string(key) + "' has an empty action");
  info.category = parts.size() == 3 ? EdgeCategory::interaction : EdgeCategory::attribute;
  if (info.reversed) std::swap(info.src, info.dst);
  return info;
}

// ---------------------------------------------------------------------------

std::optional<NodeIndex> HeteroGraph::find(NodeType t, std::uint64_t local_id) const {
  const auto& m = index_[static_cast<std::size_t>(t)];
  auto it = m.find(local_id);
  if (it == m.end()) return std::nullopt;
  return it->second;
}

NodeIndex HeteroGraph::require(NodeType t, std::uint64_t local_id) const {
  auto n = find(t, local_id);
  if (!n) throw Error("unknown node " + std::string(node_type_name(t)) + ":" + std::to_string(local_id));
  return *n;
}

std::optional<EdgeTypeId> HeteroGraph::find_edge_type(std::string_view key) const {
  for (EdgeTypeId i = 0; i < edge_types_.size(); ++i)
    if (edge_types_[i].key == key) return i;
  return std::nullopt;
}

EdgeTypeId HeteroGraph::require_edge_type(std::string_view key) const {
  auto id = find_edge_type(key);
  if (!id) throw Error("unknown edge type '" + std::string(key) + "'");
  return *id;
}

HeteroGraph::Adjacency HeteroGraph::adjacency(NodeIndex n, EdgeTypeId et) const {
  if (et >= edge_types_.size()) throw Error("edge type id out of range");
  const auto& off = offsets_[et];
  const std::size_t lo = off.at(n), hi = off.at(n + 1);
  return {std::span<const NodeIndex>(neighbors_[et]).subspan(lo, hi - lo),
          std::span<const std::int64_t>(timestamps_[et]).subspan(lo, hi - lo),
          std::span<const double>(weights_[et]).subspan(lo, hi - lo)};
}

std::size_t HeteroGraph::degree(NodeIndex n, EdgeTypeId et) const {
  return offsets_.at(et).at(n + 1) - offsets_.at(et).at(n);
}

std::size_t HeteroGraph::edge_count(EdgeTypeId et) const { return neighbors_.at(et).size(); }

std::vector<EdgeRecord> HeteroGraph::edges_of_type(EdgeTypeId et) const {
  std::vector<EdgeRecord> out;
  out.reserve(edge_count(et));
  for (NodeIndex s = 0; s < num_nodes(); ++s) {
    auto adj = adjacency(s, et);
    for (std::size_t k = 0; k < adj.size(); ++k) out.push_back({s, adj.neighbors[k], adj.timestamps[k], adj.weights[k]});
  }
  std::stable_sort(out.begin(), out.end(), [](const EdgeRecord& a, const EdgeRecord& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    if (a.src != b.src) return a.src < b.src;
    return a.dst < b.dst;
  });
  return out;
}

void HeteroGraph::finalize_indexes() {
  by_type_.assign(kNodeTypeCount, {});
  index_.assign(kNodeTypeCount, {});
  for (NodeIndex n = 0; n < types_.size(); ++n) {
    by_type_[static_cast<std::size_t>(types_[n])].push_back(n);
    index_[static_cast<std::size_t>(types_[n])].emplace(local_ids_[n], n);
  }
  text_dim_ = 0;
  id_slot_count_ = 0;
  cat_cardinality_.clear();
  for (const auto& f : features_) {
    if (!f.text_embedding.empty()) {
      if (text_dim_ != 0 && f.text_embedding.size() != text_dim_) {
        throw Error("text embeddings have inconsistent dimensions (" + std::to_string(text_dim_) + " vs " +
                    std::to_string(f.text_embedding.size()) + ")");
      }
      text_dim_ = f.text_embedding.size();
    }
    if (f.id_slot) id_slot_count_ = std::max(id_slot_count_, *f.id_slot + 1);
    for (auto [fid, vid] : f.categorical) {
      if (cat_cardinality_.size() <= fid) cat_cardinality_.resize(fid + 1, 0);
      cat_cardinality_[fid] = std::max(cat_cardinality_[fid], vid + 1);
    }
  }
}

// ---------------------------------------------------------------------------

NodeIndex GraphBuilder::add_node(NodeType t, std::uint64_t local_id, FeatureBundle features) {
  auto& m = index_[static_cast<std::size_t>(t)];
  if (m.count(local_id)) {
    throw Error("duplicate node id " + std::string(node_type_name(t)) + ":" + std::to_string(local_id));
  }
  if (is_attribute_node(t) && !features.id_slot) {
    throw Error("attribute node " + std::string(node_type_name(t)) + ":" + std::to_string(local_id) +
                " needs an id_slot");
  }
  if (features.empty()) {
    throw Error("node " + std::string(node_type_name(t)) + ":" + std::to_string(local_id) + " has no features");
  }
  const auto n = static_cast<NodeIndex>(types_.size());
  m.emplace(local_id, n);
  types_.push_back(t);
  local_ids_.push_back(local_id);
  features_.push_back(std::move(features));
  return n;
}

std::optional<NodeIndex> GraphBuilder::find(NodeType t, std::uint64_t local_id) const {
  const auto& m = index_[static_cast<std::size_t>(t)];
  auto it = m.find(local_id);
  if (it == m.end()) return std::nullopt;
  return it->second;
}

void GraphBuilder::set_text_embedding(NodeIndex n, std::vector<float> emb) { features_.at(n).text_embedding = std::move(emb); }

EdgeTypeId GraphBuilder::intern_edge_type(std::string_view key) {
  auto it = edge_type_ids_.find(std::string(key));
  if (it != edge_type_ids_.end()) return it->second;
  EdgeTypeInfo fwd = parse_edge_key(key);
  if (fwd.reversed) throw Error("edge type '" + std::string(key) + "' is reserved for materialized reverse edges");
  EdgeTypeInfo rev = parse_edge_key(std::string(key) + std::string(kReverseSuffix));
  const auto id = static_cast<EdgeTypeId>(edge_types_.size());
  fwd.reverse = id + 1;
  rev.reverse = id;
  edge_type_ids_.emplace(fwd.key, id);
  edge_type_ids_.emplace(rev.key, id + 1);
  edge_types_.push_back(std::move(fwd));
  edge_types_.push_back(std::move(rev));
  return id;
}

void GraphBuilder::add_edge(NodeType src_type, std::uint64_t src_id, std::string_view edge_key, NodeType dst_type,
                            std::uint64_t dst_id, std::int64_t timestamp, double weight) {
  const EdgeTypeId et = intern_edge_type(edge_key);
  const auto& info = edge_types_[et];
  if (info.src != src_type || info.dst != dst_type) {
    throw Error("edge type '" + info.key + "' connects " + std::string(node_type_name(info.src)) + " to " +
                std::string(node_type_name(info.dst)) + ", got " + std::string(node_type_name(src_type)) + " to " +
                std::string(node_type_name(dst_type)));
  }
  if (!(weight >= 0.0)) throw Error("edge weight must be >= 0");
  auto s = find(src_type, src_id);
  auto d = find(dst_type, dst_id);
  if (!s) throw Error("dangling endpoint " + std::string(node_type_name(src_type)) + ":" + std::to_string(src_id));
  if (!d) throw Error("dangling endpoint " + std::string(node_type_name(dst_type)) + ":" + std::to_string(dst_id));
  edges_.push_back({et, *s, *d, timestamp, weight, edges_.size()});
}

HeteroGraph GraphBuilder::build() const {
  HeteroGraph g;
  g.types_ = types_;
  g.local_ids_ = local_ids_;
  g.features_ = features_;
  g.edge_types_ = edge_types_;
  const std::size_t n = types_.size();
  const std::size_t k = edge_types_.size();
  g.offsets_.assign(k, std::vector<std::uint64_t>(n + 1, 0));
  g.neighbors_.assign(k, {});
  g.timestamps_.assign(k, {});
  g.weights_.assign(k, {});

  // materialize both directions, then bucket by (type, source)
  std::vector<PendingEdge> all;
  all.reserve(edges_.size() * 2);
  for (const auto& e : edges_) {
    all.push_back(e);
    all.push_back({edge_types_[e.type].reverse, e.dst, e.src, e.ts, e.w, e.seq});
  }
  std::stable_sort(all.begin(), all.end(), [](const PendingEdge& a, const PendingEdge& b) {
    if (a.type != b.type) return a.type < b.type;
    if (a.src != b.src) return a.src < b.src;
    if (a.ts != b.ts) return a.ts > b.ts;
    if (a.dst != b.dst) return a.dst < b.dst;
    return a.seq < b.seq;
  });
  for (const auto& e : all) {
    g.offsets_[e.type][e.src + 1]++;
    g.neighbors_[e.type].push_back(e.dst);
    g.timestamps_[e.type].push_back(e.ts);
    g.weights_[e.type].push_back(e.w);
  }
  for (auto& off : g.offsets_) std::partial_sum(off.begin(), off.end(), off.begin());
  g.finalize_indexes();
  return g;
}

}  // namespace star::graph
