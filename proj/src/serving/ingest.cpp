#include "star/serving/ingest.hpp"

#include <charconv>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "star/core/binary_io.hpp"
#include "star/core/error.hpp"
#include "star/serving/digest.hpp"
#include "star/text/bi_encoder.hpp"

namespace star::serving {

std::vector<UpdateEvent> load_events(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<UpdateEvent> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      UpdateEvent e;
      e.entity_id = j.at("entity_id").get<std::uint64_t>();
      e.kind = text::parse_kind(j.at("kind").get<std::string>());
      e.text = j.at("text").get<std::string>();
      e.event_time = j.value("event_time", std::int64_t{0});
      out.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

std::string event_json_line(const UpdateEvent& e) {
  nlohmann::ordered_json j;
  j["entity_id"] = e.entity_id;
  j["kind"] = text::kind_name(e.kind);
  j["text"] = e.text;
  j["event_time"] = e.event_time;
  return j.dump();
}

std::uint64_t event_key(const UpdateEvent& e) { return pack_key(static_cast<std::uint8_t>(e.kind), e.entity_id); }

const std::string* DigestCache::find(std::uint64_t key) const {
  const auto it = digests_.find(key);
  return it == digests_.end() ? nullptr : &it->second;
}

DigestCache DigestCache::load(const std::filesystem::path& path) {
  DigestCache c;
  if (!std::filesystem::exists(path)) return c;
  std::istringstream in(core::read_file_text(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    std::uint64_t key = 0;
    const bool ok = tab != std::string::npos &&
                    std::from_chars(line.data(), line.data() + tab, key).ptr == line.data() + tab &&
                    line.size() - tab - 1 == 32;
    if (!ok) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected <key>\\t<32 hex digest>");
    c.set(key, line.substr(tab + 1));
  }
  return c;
}

void DigestCache::save(const std::filesystem::path& path) const {
  std::string out;
  for (const auto& [key, digest] : digests_) out += std::to_string(key) + "\t" + digest + "\n";
  core::write_file_atomic(path, out);
}

Embedder model_embedder(const text::BiEncoderModel& model) {
  return [&model](text::TextKind kind, std::span<const std::string> texts) { return model.embed_many(kind, texts); };
}

IngestStats ingest(std::span<const UpdateEvent> events, const Embedder& embed, const std::filesystem::path& store_path,
                   const std::filesystem::path& cache_path, const IngestOptions& opts) {
  IngestStats stats;
  stats.total = events.size();
  if (events.empty()) return stats;

  DigestCache cache = DigestCache::load(cache_path);
  const bool exists = std::filesystem::exists(store_path);
  EmbeddingStore store = exists ? EmbeddingStore::load(store_path)
                                : EmbeddingStore(opts.embedding_version, static_cast<std::uint32_t>(opts.dim));
  if (exists && store.version() != opts.embedding_version) {
    throw Error("ingest: store holds embedding version " + std::to_string(store.version()) + ", encoder produces " +
                std::to_string(opts.embedding_version));
  }
  // decide in stream order; later events for an entity see earlier ones
  struct Pending {
    std::uint64_t key;
    text::TextKind kind;
    const std::string* text;
  };
  std::vector<Pending> todo;
  std::set<std::uint64_t> touched;
  for (const auto& e : events) {
    const std::uint64_t key = event_key(e);
    std::string d = md5_hex(e.text);
    const std::string* cached = cache.find(key);
    // a digest without a stored vector (store replaced or lost) counts as a miss
    if (cached && *cached == d && (store.contains(key) || touched.count(key))) {
      ++stats.skipped;
      continue;
    }
    ++stats.computed;
    cache.set(key, std::move(d));
    todo.push_back({key, e.kind, &e.text});
    touched.insert(key);
  }
  stats.updated_entities = touched.size();
  if (todo.empty()) return stats;

  // only the final text per entity needs an embedding
  std::map<std::uint64_t, std::size_t> last;
  for (std::size_t i = 0; i < todo.size(); ++i) last[todo[i].key] = i;

  for (auto kind : {text::TextKind::job_description, text::TextKind::member_profile, text::TextKind::member_resume}) {
    std::vector<std::string> texts;
    std::vector<std::uint64_t> keys;
    for (const auto& [key, idx] : last) {
      if (todo[idx].kind != kind) continue;
      keys.push_back(key);
      texts.push_back(*todo[idx].text);
    }
    if (texts.empty()) continue;
    const core::Tensor emb = embed(kind, texts);
    if (emb.rank() != 2 || emb.rows() != texts.size() || emb.cols() != store.dim()) {
      throw ShapeError("ingest: embedder returned " + core::shape_str(emb.shape()) + " for " +
                       std::to_string(texts.size()) + " texts into a store of dim " + std::to_string(store.dim()));
    }
    std::vector<float> row(store.dim());
    for (std::size_t i = 0; i < keys.size(); ++i) {
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = static_cast<float>(emb.at(i, c));
      store.upsert(keys[i], row);
    }
  }

  const auto staged = staged_path(store_path);
  try {
    store.save(staged);
    swap_store(store_path, staged);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(staged, ec);
    throw;
  }
  cache.save(cache_path);
  return stats;
}

}  // namespace star::serving
