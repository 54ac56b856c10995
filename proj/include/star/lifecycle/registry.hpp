#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "star/lifecycle/compat.hpp"

namespace star::lifecycle {

enum class VersionStatus : std::uint8_t { active, deprecated };

struct EmbeddingVersion {
  std::uint64_t version_id = 0;
  std::size_t dim = 0;
  std::int64_t created_at = 0;  // unix seconds
  std::string model_checksum;
  VersionStatus status = VersionStatus::active;
  std::string store;  // optional path of the version's embedding store
  bool operator==(const EmbeddingVersion&) const = default;
};

struct TransformRecord {
  std::uint64_t from_version = 0;
  std::uint64_t to_version = 0;
  std::string weights;  // transform checkpoint path
  double residual_rms = 0.0;
  bool operator==(const TransformRecord&) const = default;
};

/// Versions with strictly increasing ids and the backward transforms between them.
class Registry {
 public:
  const std::vector<EmbeddingVersion>& versions() const { return versions_; }
  const std::vector<TransformRecord>& transforms() const { return transforms_; }
  const EmbeddingVersion* find(std::uint64_t id) const;
  std::optional<std::uint64_t> newest_active() const;

  void register_version(EmbeddingVersion v);
  /// Both endpoints must be registered, from > to, dims consistent with `dims`.
  void add_transform(TransformRecord t, std::size_t from_dim, std::size_t to_dim);

  /// Transforms leading from `from` down to `to`; empty when no chain exists.
  std::vector<TransformRecord> chain(std::uint64_t from, std::uint64_t to) const;

  /// Deprecating needs a transform chain from the newest active version to
  /// `id`, so consumers pinned to `id` can still be served, unless forced.
  void deprecate(std::uint64_t id, bool force = false);

  std::string to_json() const;
  static Registry from_json(const std::string& text);

  /// A missing file is an empty registry.
  static Registry load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  bool operator==(const Registry&) const = default;

 private:
  std::vector<EmbeddingVersion> versions_;
  std::vector<TransformRecord> transforms_;
};

/// Load-modify-save under an exclusive advisory lock on "<path>.lock".
/// The file is replaced by rename, so readers always see a committed snapshot.
Registry update_registry(const std::filesystem::path& path, const std::function<void(Registry&)>& fn);

/// Composes the stored weights along chain(from, to); relative weight paths
/// resolve against `base_dir`.
VersionTransform load_chain(const Registry& reg, std::uint64_t from, std::uint64_t to,
                            const std::filesystem::path& base_dir);

}  // namespace star::lifecycle
