#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace star::serving {

inline constexpr char kStoreMagic[4] = {'S', 'T', 'E', 'S'};
inline constexpr std::uint32_t kStoreFormatVersion = 1;

/// Store keys carry an 8-bit namespace above a 56-bit entity id, so text
/// kinds and graph node types can share one key space.
inline constexpr unsigned kKeyIdBits = 56;
std::uint64_t pack_key(std::uint8_t ns, std::uint64_t entity_id);
std::uint8_t key_namespace(std::uint64_t key);
std::uint64_t key_entity(std::uint64_t key);
/// Namespace of a text kind or graph node type name ("member_profile", "job", ...).
std::uint8_t parse_key_namespace(std::string_view name);
std::string_view key_namespace_name(std::uint8_t ns);

/// Embedding vectors keyed by 64-bit id, tagged with the embedding version.
///
/// File layout (little-endian): "STES", u32 format version, u64 embedding
/// version, u32 dim, u64 count, then count x (u64 key, dim x f32) in
/// ascending key order, then u32 CRC-32 of every preceding byte.
class EmbeddingStore {
 public:
  EmbeddingStore(std::uint64_t version, std::uint32_t dim);

  std::uint64_t version() const { return version_; }
  std::uint32_t dim() const { return dim_; }
  std::size_t size() const { return index_.size(); }

  void upsert(std::uint64_t key, std::span<const float> vec);
  /// Exact stored vector, or nullopt when absent.
  std::optional<std::span<const float>> lookup(std::uint64_t key) const;
  bool contains(std::uint64_t key) const { return index_.count(key) != 0; }
  std::vector<std::uint64_t> keys() const;  // ascending

  std::vector<unsigned char> encode() const;
  static EmbeddingStore decode(const std::vector<unsigned char>& bytes, const std::string& context = "store");
  void save(const std::filesystem::path& path) const;
  static EmbeddingStore load(const std::filesystem::path& path);

  bool operator==(const EmbeddingStore& other) const;

 private:
  std::uint64_t version_;
  std::uint32_t dim_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
  std::vector<float> data_;
};

/// Immutable view of the store file as it was when opened; later swaps do
/// not affect it.
class StoreSnapshot {
 public:
  static StoreSnapshot open(const std::filesystem::path& path);
  const EmbeddingStore& store() const { return *store_; }
  std::optional<std::span<const float>> lookup(std::uint64_t key) const { return store_->lookup(key); }

 private:
  std::shared_ptr<const EmbeddingStore> store_;
};

/// Staged file written next to the current store.
std::filesystem::path staged_path(const std::filesystem::path& current);

/// Validates `staged` and renames it over `current`. The staged file is
/// consumed, so a second swap of the same file is refused.
void swap_store(const std::filesystem::path& current, const std::filesystem::path& staged);

}  // namespace star::serving
