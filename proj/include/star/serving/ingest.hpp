#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "star/core/tensor.hpp"
#include "star/serving/store.hpp"
#include "star/text/records.hpp"

namespace star::text {
class BiEncoderModel;
}

namespace star::serving {

struct UpdateEvent {
  std::uint64_t entity_id = 0;
  text::TextKind kind = text::TextKind::job_description;
  std::string text;
  std::int64_t event_time = 0;
};

/// JSON lines {entity_id, kind, text, event_time}; file order is stream order.
std::vector<UpdateEvent> load_events(const std::filesystem::path& path);
std::string event_json_line(const UpdateEvent& e);

/// Store key of an event's entity: the text kind is the key namespace.
std::uint64_t event_key(const UpdateEvent& e);

/// Store key -> MD5 of the text last embedded for it. TSV "key<TAB>digest".
class DigestCache {
 public:
  const std::string* find(std::uint64_t key) const;
  void set(std::uint64_t key, std::string digest) { digests_[key] = std::move(digest); }
  std::size_t size() const { return digests_.size(); }
  const std::map<std::uint64_t, std::string>& entries() const { return digests_; }

  /// A missing file is an empty cache.
  static DigestCache load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  bool operator==(const DigestCache&) const = default;

 private:
  std::map<std::uint64_t, std::string> digests_;
};

/// Embeds a batch of texts of one kind: rows [texts.size(), dim].
using Embedder = std::function<core::Tensor(text::TextKind, std::span<const std::string>)>;
Embedder model_embedder(const text::BiEncoderModel& model);

struct IngestStats {
  std::size_t total = 0;
  std::size_t computed = 0;
  std::size_t skipped = 0;
  std::size_t updated_entities = 0;
  bool operator==(const IngestStats&) const = default;
};

struct IngestOptions {
  std::uint64_t embedding_version = 1;
  std::size_t dim = 0;  // required when the store does not exist yet
};

/// Digest-gated recompute. Events are decided in file order against the
/// cache; changed texts are embedded and upserted into a staged copy of the
/// store, which is swapped in before the cache file is rewritten. On any
/// failure the store and cache files are left as they were.
IngestStats ingest(std::span<const UpdateEvent> events, const Embedder& embed, const std::filesystem::path& store,
                   const std::filesystem::path& cache, const IngestOptions& opts);

}  // namespace star::serving
