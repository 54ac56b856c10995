#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "star/graph/hetero_graph.hpp"

namespace star::graph {

/// Base64 of the little-endian float32 bytes.
std::string encode_embedding(const std::vector<float>& v);
std::vector<float> decode_embedding(const std::string& b64);

/// Nodes TSV: node_type, local_id, base64 text embedding, id_slot, "fid:vid;..."
/// (empty fields allowed). Lines starting with '#' are skipped.
void read_nodes_tsv(const std::filesystem::path& path, GraphBuilder& builder);
/// Edges TSV: src_type, src_id, edge_type, dst_type, dst_id, timestamp, weight.
void read_edges_tsv(const std::filesystem::path& path, GraphBuilder& builder);
HeteroGraph load_graph_tsv(const std::filesystem::path& nodes, const std::filesystem::path& edges);

std::string node_tsv_line(NodeType t, std::uint64_t local_id, const FeatureBundle& f);
std::string edge_tsv_line(NodeType st, std::uint64_t sid, const std::string& key, NodeType dt, std::uint64_t did,
                          std::int64_t ts, double w);

inline constexpr char kGraphMagic[4] = {'S', 'T', 'G', 'R'};
inline constexpr std::uint32_t kGraphVersion = 1;

// "STGR", u32 version, u32 section count, then per section {u32 id, u64 offset,
// u64 length}; sections: node table, edge types, CSR offsets, neighbors,
// timestamps, weights, features. A crc32 of everything before it closes the file.
std::vector<unsigned char> encode_graph(const HeteroGraph& g);
HeteroGraph decode_graph(const std::vector<unsigned char>& bytes);
void save_graph(const std::filesystem::path& path, const HeteroGraph& g);
HeteroGraph load_graph(const std::filesystem::path& path);

}  // namespace star::graph
