#include "star/graph/graph_io.hpp"

#include <charconv>
#include <cstring>
#include <fstream>

#include <openssl/evp.h>
#include <zlib.h>

#include "star/core/binary_io.hpp"
#include "star/core/error.hpp"

namespace star::graph {

using core::ByteReader;
using core::ByteWriter;

namespace {

std::vector<std::string_view> split_tabs(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find('\t', start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_num(std::string_view s, const char* what) {
  T v{};
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw Error(std::string("bad ") + what + " '" + std::string(s) + "'");
  return v;
}

std::string line_error(const std::filesystem::path& path, std::size_t lineno, const std::string& msg) {
  return path.string() + ":" + std::to_string(lineno) + ": " + msg;
}

enum Section : std::uint32_t { kNodes = 1, kEdgeTypes, kOffsets, kNeighbors, kTimestamps, kWeights, kFeatures };

}  // namespace

std::string encode_embedding(const std::vector<float>& v) {
  ByteWriter w;
  for (float x : v) w.put<float>(x);
  const auto& raw = w.bytes();
  std::string out(4 * ((raw.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), raw.data(), static_cast<int>(raw.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<float> decode_embedding(const std::string& b64) {
  if (b64.size() % 4 != 0) throw FormatError("base64 embedding length is not a multiple of 4");
  std::vector<unsigned char> raw(b64.size() / 4 * 3 + 1);
  const int n = EVP_DecodeBlock(raw.data(), reinterpret_cast<const unsigned char*>(b64.data()),
                                static_cast<int>(b64.size()));
  if (n < 0) throw FormatError("invalid base64 embedding");
  std::size_t len = static_cast<std::size_t>(n);
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding
  if (!b64.empty() && b64.back() == '=') --len;
  if (b64.size() >= 2 && b64[b64.size() - 2] == '=') --len;
  if (len % 4 != 0) throw FormatError("base64 embedding is not a whole number of float32 values");
  ByteReader r(raw.data(), len, "embedding");
  std::vector<float> out(len / 4);
  for (auto& x : out) x = r.get<float>();
  return out;
}

std::string node_tsv_line(NodeType t, std::uint64_t local_id, const FeatureBundle& f) {
  std::string s(node_type_name(t));
  s += '\t' + std::to_string(local_id) + '\t';
  if (!f.text_embedding.empty()) s += encode_embedding(f.text_embedding);
  s += '\t';
  if (f.id_slot) s += std::to_string(*f.id_slot);
  s += '\t';
  for (std::size_t i = 0; i < f.categorical.size(); ++i) {
    if (i) s += ';';
    s += std::to_string(f.categorical[i].first) + ':' + std::to_string(f.categorical[i].second);
  }
  return s;
}

std::string edge_tsv_line(NodeType st, std::uint64_t sid, const std::string& key, NodeType dt, std::uint64_t did,
                          std::int64_t ts, double w) {
  char wbuf[32];
  auto [p, ec] = std::to_chars(wbuf, wbuf + sizeof wbuf, w);
  (void)ec;
  return std::string(node_type_name(st)) + '\t' + std::to_string(sid) + '\t' + key + '\t' +
         std::string(node_type_name(dt)) + '\t' + std::to_string(did) + '\t' + std::to_string(ts) + '\t' +
         std::string(wbuf, p);
}

void read_nodes_tsv(const std::filesystem::path& path, GraphBuilder& builder) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open nodes file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    try {
      const auto f = split_tabs(line);
      if (f.size() < 2 || f.size() > 5) throw Error("expected 2-5 tab-separated fields, got " + std::to_string(f.size()));
      FeatureBundle fb;
      if (f.size() > 2 && !f[2].empty()) fb.text_embedding = decode_embedding(std::string(f[2]));
      if (f.size() > 3 && !f[3].empty()) fb.id_slot = parse_num<std::uint32_t>(f[3], "id_slot");
      if (f.size() > 4 && !f[4].empty()) {
        std::string_view rest = f[4];
        while (!rest.empty()) {
          const auto semi = rest.find(';');
          const auto item = rest.substr(0, semi);
          const auto colon = item.find(':');
          if (colon == std::string_view::npos) throw Error("categorical pair '" + std::string(item) + "' lacks ':'");
          fb.categorical.emplace_back(parse_num<std::uint32_t>(item.substr(0, colon), "feature id"),
                                      parse_num<std::uint32_t>(item.substr(colon + 1), "value id"));
          if (semi == std::string_view::npos) break;
          rest.remove_prefix(semi + 1);
        }
      }
      builder.add_node(parse_node_type(f[0]), parse_num<std::uint64_t>(f[1], "local_id"), std::move(fb));
    } catch (const std::exception& e) {
      throw FormatError(line_error(path, lineno, e.what()));
    }
  }
}

void read_edges_tsv(const std::filesystem::path& path, GraphBuilder& builder) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open edges file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    try {
      const auto f = split_tabs(line);
      if (f.size() != 7) throw Error("expected 7 tab-separated fields, got " + std::to_string(f.size()));
      builder.add_edge(parse_node_type(f[0]), parse_num<std::uint64_t>(f[1], "src_id"), f[2], parse_node_type(f[3]),
                       parse_num<std::uint64_t>(f[4], "dst_id"), parse_num<std::int64_t>(f[5], "timestamp"),
                       parse_num<double>(f[6], "weight"));
    } catch (const std::exception& e) {
      throw FormatError(line_error(path, lineno, e.what()));
    }
  }
}

HeteroGraph load_graph_tsv(const std::filesystem::path& nodes, const std::filesystem::path& edges) {
  GraphBuilder b;
  read_nodes_tsv(nodes, b);
  read_edges_tsv(edges, b);
  return b.build();
}

// ---------------------------------------------------------------------------

std::vector<unsigned char> encode_graph(const HeteroGraph& g) {
  std::vector<std::pair<std::uint32_t, ByteWriter>> sections;
  {
    ByteWriter w;
    w.put<std::uint64_t>(g.types_.size());
    for (std::size_t i = 0; i < g.types_.size(); ++i) {
      w.put<std::uint8_t>(static_cast<std::uint8_t>(g.types_[i]));
      w.put<std::uint64_t>(g.local_ids_[i]);
    }
    sections.emplace_back(kNodes, std::move(w));
  }
  {
    ByteWriter w;
    w.put<std::uint32_t>(static_cast<std::uint32_t>(g.edge_types_.size()));
    for (const auto& e : g.edge_types_) {
      w.put_string(e.key);
      w.put<std::uint32_t>(e.reverse);
    }
    sections.emplace_back(kEdgeTypes, std::move(w));
  }
  ByteWriter off, nb, ts, wt;
  for (std::size_t et = 0; et < g.edge_types_.size(); ++et) {
    for (auto o : g.offsets_[et]) off.put<std::uint64_t>(o);
    nb.put<std::uint64_t>(g.neighbors_[et].size());
    for (auto n : g.neighbors_[et]) nb.put<std::uint32_t>(n);
    for (auto t : g.timestamps_[et]) ts.put<std::int64_t>(t);
    for (auto x : g.weights_[et]) wt.put<double>(x);
  }
  sections.emplace_back(kOffsets, std::move(off));
  sections.emplace_back(kNeighbors, std::move(nb));
  sections.emplace_back(kTimestamps, std::move(ts));
  sections.emplace_back(kWeights, std::move(wt));
  {
    ByteWriter w;
    for (const auto& f : g.features_) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(f.text_embedding.size()));
      for (float x : f.text_embedding) w.put<float>(x);
      w.put<std::uint8_t>(f.id_slot ? 1 : 0);
      w.put<std::uint32_t>(f.id_slot.value_or(0));
      w.put<std::uint32_t>(static_cast<std::uint32_t>(f.categorical.size()));
      for (auto [a, b] : f.categorical) {
        w.put<std::uint32_t>(a);
        w.put<std::uint32_t>(b);
      }
    }
    sections.emplace_back(kFeatures, std::move(w));
  }

  ByteWriter out;
  out.put_bytes(std::string_view(kGraphMagic, 4));
  out.put<std::uint32_t>(kGraphVersion);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(sections.size()));
  std::uint64_t offset = 12 + sections.size() * 20;
  for (const auto& [id, w] : sections) {
    out.put<std::uint32_t>(id);
    out.put<std::uint64_t>(offset);
    out.put<std::uint64_t>(w.size());
    offset += w.size();
  }
  for (const auto& s : sections) out.bytes().insert(out.bytes().end(), s.second.bytes().begin(), s.second.bytes().end());
  const auto crc = static_cast<std::uint32_t>(::crc32(0L, out.bytes().data(), static_cast<uInt>(out.size())));
  out.put<std::uint32_t>(crc);
  return std::move(out.bytes());
}

HeteroGraph decode_graph(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kGraphMagic, 4) != 0) throw FormatError("not an STGR graph file");
  const std::size_t body = bytes.size() - 4;
  ByteReader tail(bytes.data() + body, 4, "graph checksum");
  const auto stored = tail.get<std::uint32_t>();
  const auto actual = static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(body)));
  if (stored != actual) throw FormatError("graph file checksum mismatch (corrupted or truncated)");

  ByteReader r(bytes.data(), body, "graph");
  r.seek(4);
  if (const auto v = r.get<std::uint32_t>(); v != kGraphVersion)
    throw FormatError("unsupported graph format version " + std::to_string(v));
  const auto nsec = r.get<std::uint32_t>();
  std::vector<std::pair<std::uint64_t, std::uint64_t>> table(kFeatures + 1, {0, 0});
  for (std::uint32_t i = 0; i < nsec; ++i) {
    const auto id = r.get<std::uint32_t>();
    const auto off = r.get<std::uint64_t>();
    const auto len = r.get<std::uint64_t>();
    if (off > body || len > body - off) throw FormatError("graph section out of bounds");
    if (id < table.size()) table[id] = {off, len};
  }
  auto section = [&](Section s) {
    return ByteReader(bytes.data() + table[s].first, table[s].second, "graph section " + std::to_string(s));
  };

  HeteroGraph g;
  {
    auto rr = section(kNodes);
    const auto n = rr.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto t = rr.get<std::uint8_t>();
      if (t >= kNodeTypeCount) throw FormatError("bad node type code");
      g.types_.push_back(static_cast<NodeType>(t));
      g.local_ids_.push_back(rr.get<std::uint64_t>());
    }
  }
  {
    auto rr = section(kEdgeTypes);
    const auto k = rr.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < k; ++i) {
      EdgeTypeInfo info = parse_edge_key(rr.get_string());
      info.reverse = rr.get<std::uint32_t>();
      g.edge_types_.push_back(std::move(info));
    }
  }
  const std::size_t n = g.types_.size(), k = g.edge_types_.size();
  auto off = section(kOffsets), nb = section(kNeighbors), ts = section(kTimestamps), wt = section(kWeights);
  g.offsets_.assign(k, {});
  g.neighbors_.assign(k, {});
  g.timestamps_.assign(k, {});
  g.weights_.assign(k, {});
  for (std::size_t et = 0; et < k; ++et) {
    g.offsets_[et].resize(n + 1);
    for (auto& o : g.offsets_[et]) o = off.get<std::uint64_t>();
    const auto m = nb.get<std::uint64_t>();
    if (g.offsets_[et].back() != m) throw FormatError("CSR offsets disagree with neighbor count");
    g.neighbors_[et].resize(m);
    for (auto& x : g.neighbors_[et]) {
      x = nb.get<std::uint32_t>();
      if (x >= n) throw FormatError("neighbor index out of range");
    }
    g.timestamps_[et].resize(m);
    for (auto& x : g.timestamps_[et]) x = ts.get<std::int64_t>();
    g.weights_[et].resize(m);
    for (auto& x : g.weights_[et]) x = wt.get<double>();
  }
  {
    auto rr = section(kFeatures);
    g.features_.resize(n);
    for (auto& f : g.features_) {
      f.text_embedding.resize(rr.get<std::uint32_t>());
      for (auto& x : f.text_embedding) x = rr.get<float>();
      const bool has_slot = rr.get<std::uint8_t>() != 0;
      const auto slot = rr.get<std::uint32_t>();
      if (has_slot) f.id_slot = slot;
      f.categorical.resize(rr.get<std::uint32_t>());
      for (auto& [a, b] : f.categorical) {
        a = rr.get<std::uint32_t>();
        b = rr.get<std::uint32_t>();
      }
    }
  }
  g.finalize_indexes();
  return g;
}

void save_graph(const std::filesystem::path& path, const HeteroGraph& g) { core::write_file_atomic(path, encode_graph(g)); }

HeteroGraph load_graph(const std::filesystem::path& path) { return decode_graph(core::read_file_bytes(path)); }

}  // namespace star::graph
