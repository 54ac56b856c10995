#include "star/graph/sampler.hpp"

#include <algorithm>
#include <unordered_map>

#include "star/core/error.hpp"
#include "star/core/rng.hpp"

namespace star::graph {

SamplingStrategy parse_strategy(std::string_view name) {
  if (name == "random") return SamplingStrategy::random;
  if (name == "temporal") return SamplingStrategy::temporal;
  if (name == "ppr") return SamplingStrategy::ppr;
  throw Error("unknown sampling strategy '" + std::string(name) + "' (random, temporal, ppr)");
}

std::string_view strategy_name(SamplingStrategy s) {
  switch (s) {
    case SamplingStrategy::random: return "random";
    case SamplingStrategy::temporal: return "temporal";
    case SamplingStrategy::ppr: return "ppr";
  }
  return "unknown";
}

void SamplerConfig::validate() const {
  for (auto f : fanouts)
    if (f < 1) throw Error("sampler fanout must be >= 1");
  if (!(ppr_teleport > 0.0 && ppr_teleport <= 1.0)) throw Error("ppr_teleport must be in (0, 1]");
  if (ppr_top_k < 1) throw Error("ppr_top_k must be >= 1");
}

std::vector<EdgeTypeId> resolve_edge_types(const HeteroGraph& g, std::span<const std::string> keys) {
  std::vector<EdgeTypeId> out;
  for (const auto& k : keys) out.push_back(g.require_edge_type(k));
  return out;
}

std::vector<EdgeTypeId> all_edge_types(const HeteroGraph& g) {
  std::vector<EdgeTypeId> out(g.num_edge_types());
  for (EdgeTypeId i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

namespace {

// Index of the first visible entry of a timestamp-descending list.
std::size_t first_visible(std::span<const std::int64_t> ts, std::int64_t cutoff) {
  return static_cast<std::size_t>(
      std::partition_point(ts.begin(), ts.end(), [&](std::int64_t t) { return t > cutoff; }) - ts.begin());
}

std::uint64_t node_seed(std::uint64_t seed, NodeIndex node) {
  std::uint64_t z = seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(node) + 1));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::vector<std::pair<NodeIndex, double>> ppr_scores(const HeteroGraph& g, NodeIndex node, std::size_t iterations,
                                                     double teleport, std::int64_t time_cutoff,
                                                     const EdgeExclusion* exclude) {
  if (node >= g.num_nodes()) throw Error("ppr: node index out of range");
  if (!(teleport > 0.0 && teleport <= 1.0)) throw Error("ppr: teleport must be in (0, 1]");
  const std::size_t n = g.num_nodes();
  const std::size_t k = g.num_edge_types();
  auto visible = [&](NodeIndex u, NodeIndex v) { return !exclude || !exclude->contains(u, v); };

  std::vector<std::uint32_t> deg(n, 0);
  for (NodeIndex u = 0; u < n; ++u) {
    for (EdgeTypeId et = 0; et < k; ++et) {
      auto adj = g.adjacency(u, et);
      for (std::size_t i = first_visible(adj.timestamps, time_cutoff); i < adj.size(); ++i)
        deg[u] += visible(u, adj.neighbors[i]);
    }
  }
  std::vector<double> p(n, 0.0), next(n, 0.0);
  p[node] = 1.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    next[node] += teleport;
    for (NodeIndex u = 0; u < n; ++u) {
      if (p[u] == 0.0) continue;
      const double mass = (1.0 - teleport) * p[u];
      if (deg[u] == 0) {
        next[node] += mass;
        continue;
      }
      const double share = mass / static_cast<double>(deg[u]);
      for (EdgeTypeId et = 0; et < k; ++et) {
        auto adj = g.adjacency(u, et);
        for (std::size_t i = first_visible(adj.timestamps, time_cutoff); i < adj.size(); ++i)
          if (visible(u, adj.neighbors[i])) next[adj.neighbors[i]] += share;
      }
    }
    p.swap(next);
  }
  std::vector<std::pair<NodeIndex, double>> out;
  for (NodeIndex u = 0; u < n; ++u)
    if (p[u] != 0.0) out.emplace_back(u, p[u]);
  return out;
}

std::vector<Neighbor> sample_neighbors(const HeteroGraph& g, NodeIndex node, std::span<const EdgeTypeId> edge_types,
                                       std::size_t count, const SamplerConfig& cfg, const EdgeExclusion* exclude) {
  if (node >= g.num_nodes()) throw Error("sample_neighbors: node index out of range");
  for (auto et : edge_types)
    if (et >= g.num_edge_types()) throw Error("sample_neighbors: unknown edge type id " + std::to_string(et));
  if (count == 0) return {};

  if (cfg.strategy == SamplingStrategy::ppr) {
    auto scores = ppr_scores(g, node, cfg.ppr_iterations, cfg.ppr_teleport, cfg.time_cutoff, exclude);
    std::erase_if(scores, [&](const auto& s) { return s.first == node; });
    std::stable_sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    const std::size_t k = std::min({count, cfg.ppr_top_k, scores.size()});
    std::vector<Neighbor> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back({scores[i].first, kPprEdgeType, 0});
    return out;
  }

  std::vector<Neighbor> pool;
  for (auto et : edge_types) {
    auto adj = g.adjacency(node, et);
    for (std::size_t i = first_visible(adj.timestamps, cfg.time_cutoff); i < adj.size(); ++i) {
      if (exclude && exclude->contains(node, adj.neighbors[i])) continue;
      pool.push_back({adj.neighbors[i], et, adj.timestamps[i]});
    }
  }
  if (pool.size() <= count) return pool;

  if (cfg.strategy == SamplingStrategy::temporal) {
    std::stable_sort(pool.begin(), pool.end(),
                     [](const Neighbor& a, const Neighbor& b) { return a.timestamp > b.timestamp; });
    pool.resize(count);
    return pool;
  }
  core::Rng rng(node_seed(cfg.seed, node));
  auto picks = rng.sample_without_replacement(pool.size(), count);
  std::sort(picks.begin(), picks.end());
  std::vector<Neighbor> out;
  out.reserve(count);
  for (auto i : picks) out.push_back(pool[i]);
  return out;
}

SubgraphBatch subgraph_batch(const HeteroGraph& g, std::span<const NodeIndex> seeds,
                             std::span<const EdgeTypeId> edge_types, const SamplerConfig& cfg,
                             const EdgeExclusion* exclude) {
  SubgraphBatch b;
  b.hops = cfg.fanouts.size();
  std::unordered_map<NodeIndex, std::size_t> row_of;
  auto row_for = [&](NodeIndex n, std::uint32_t depth) {
    auto [it, inserted] = row_of.emplace(n, b.nodes.size());
    if (inserted) {
      b.nodes.push_back(n);
      b.depth.push_back(depth);
      b.neighbors.emplace_back();
    }
    return it->second;
  };
  for (NodeIndex s : seeds) {
    if (s >= g.num_nodes()) throw Error("subgraph_batch: seed out of range");
    b.seed_rows.push_back(row_for(s, 0));
  }
  std::size_t frontier_begin = 0;
  for (std::size_t h = 0; h < b.hops; ++h) {
    const std::size_t frontier_end = b.nodes.size();
    for (std::size_t r = frontier_begin; r < frontier_end; ++r) {
      const auto picks = sample_neighbors(g, b.nodes[r], edge_types, cfg.fanouts[h], cfg, exclude);
      b.sampled_edges += picks.size();
      for (const auto& nb : picks) {
        const std::size_t row = row_for(nb.node, static_cast<std::uint32_t>(h + 1));
        b.neighbors[r].push_back({row, nb.edge_type});
      }
    }
    frontier_begin = frontier_end;
  }
  return b;
}

}  // namespace star::graph
