#include "star/serving/store.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>

#include "star/core/binary_io.hpp"
#include "star/core/error.hpp"
#include "star/graph/hetero_graph.hpp"
#include "star/text/records.hpp"

namespace star::serving {

namespace {

constexpr std::uint8_t kNodeNamespaceBase = 0x10;
constexpr std::size_t kHeaderBytes = 4 + 4 + 8 + 4 + 8;

std::uint32_t crc_of(const unsigned char* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(0L, data, static_cast<uInt>(n)));
}

}  // namespace

std::uint64_t pack_key(std::uint8_t ns, std::uint64_t entity_id) {
  if (entity_id >> kKeyIdBits) throw Error("entity id " + std::to_string(entity_id) + " does not fit in 56 bits");
  return (static_cast<std::uint64_t>(ns) << kKeyIdBits) | entity_id;
}

std::uint8_t key_namespace(std::uint64_t key) { return static_cast<std::uint8_t>(key >> kKeyIdBits); }
std::uint64_t key_entity(std::uint64_t key) { return key & ((std::uint64_t{1} << kKeyIdBits) - 1); }

std::uint8_t parse_key_namespace(std::string_view name) {
  for (auto k : {text::TextKind::job_description, text::TextKind::member_profile, text::TextKind::member_resume})
    if (text::kind_name(k) == name) return static_cast<std::uint8_t>(k);
  try {
    return static_cast<std::uint8_t>(kNodeNamespaceBase + static_cast<std::uint8_t>(graph::parse_node_type(name)));
  } catch (const Error&) {
    throw Error("unknown key kind '" + std::string(name) + "' (a text kind or node type)");
  }
}

std::string_view key_namespace_name(std::uint8_t ns) {
  if (ns <= 2) return text::kind_name(static_cast<text::TextKind>(ns));
  if (ns >= kNodeNamespaceBase && ns < kNodeNamespaceBase + graph::kNodeTypeCount)
    return graph::node_type_name(static_cast<graph::NodeType>(ns - kNodeNamespaceBase));
  return "unknown";
}

EmbeddingStore::EmbeddingStore(std::uint64_t version, std::uint32_t dim) : version_(version), dim_(dim) {
  if (dim == 0) throw Error("embedding store: dim must be > 0");
}

void EmbeddingStore::upsert(std::uint64_t key, std::span<const float> vec) {
  if (vec.size() != dim_) {
    throw ShapeError("embedding store: vector of dim " + std::to_string(vec.size()) + " for a store of dim " +
                     std::to_string(dim_));
  }
  auto [it, inserted] = index_.emplace(key, data_.size() / dim_);
  if (inserted) data_.insert(data_.end(), vec.begin(), vec.end());
  else std::copy(vec.begin(), vec.end(), data_.begin() + static_cast<std::ptrdiff_t>(it->second * dim_));
}

std::optional<std::span<const float>> EmbeddingStore::lookup(std::uint64_t key) const {
  const auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  return std::span<const float>(data_.data() + it->second * dim_, dim_);
}

std::vector<std::uint64_t> EmbeddingStore::keys() const {
  std::vector<std::uint64_t> out;
  out.reserve(index_.size());
  for (const auto& kv : index_) out.push_back(kv.first);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<unsigned char> EmbeddingStore::encode() const {
  core::ByteWriter w;
  w.put_bytes(std::string_view(kStoreMagic, 4));
  w.put<std::uint32_t>(kStoreFormatVersion);
  w.put<std::uint64_t>(version_);
  w.put<std::uint32_t>(dim_);
  w.put<std::uint64_t>(index_.size());
  for (std::uint64_t key : keys()) {
    w.put<std::uint64_t>(key);
    const std::span<const float> vec = *lookup(key);
    for (float v : vec) w.put<float>(v);
  }
  w.put<std::uint32_t>(crc_of(w.bytes().data(), w.size()));
  return std::move(w.bytes());
}

EmbeddingStore EmbeddingStore::decode(const std::vector<unsigned char>& bytes, const std::string& context) {
  if (bytes.size() < kHeaderBytes + 4) throw FormatError(context + ": truncated store (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kStoreMagic, 4) != 0) throw FormatError(context + ": not an embedding store (bad magic)");
  const std::size_t body = bytes.size() - 4;
  core::ByteReader footer(bytes.data() + body, 4, context);
  const auto stored = footer.get<std::uint32_t>();
  const auto actual = crc_of(bytes.data(), body);
  if (stored != actual) {
    throw FormatError(context + ": checksum mismatch (stored " + std::to_string(stored) + ", computed " +
                      std::to_string(actual) + "); file is corrupted or truncated");
  }
  core::ByteReader r(bytes.data(), body, context);
  r.seek(4);
  const auto fmt = r.get<std::uint32_t>();
  if (fmt != kStoreFormatVersion) throw FormatError(context + ": unsupported store format " + std::to_string(fmt));
  const auto version = r.get<std::uint64_t>();
  const auto dim = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  if (dim == 0) throw FormatError(context + ": zero dim");
  const std::size_t record = 8 + 4 * static_cast<std::size_t>(dim);
  if (count > r.remaining() / record || r.remaining() != count * record) {
    throw FormatError(context + ": record count " + std::to_string(count) + " does not match the payload size");
  }
  EmbeddingStore s(version, dim);
  std::vector<float> vec(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto key = r.get<std::uint64_t>();
    for (auto& v : vec) v = r.get<float>();
    if (s.contains(key)) throw FormatError(context + ": duplicate key " + std::to_string(key));
    s.upsert(key, vec);
  }
  return s;
}

void EmbeddingStore::save(const std::filesystem::path& path) const { core::write_file_atomic(path, encode()); }

EmbeddingStore EmbeddingStore::load(const std::filesystem::path& path) {
  return decode(core::read_file_bytes(path), path.string());
}

bool EmbeddingStore::operator==(const EmbeddingStore& other) const {
  if (version_ != other.version_ || dim_ != other.dim_ || size() != other.size()) return false;
  for (const auto& [key, row] : index_) {
    const auto o = other.lookup(key);
    if (!o || std::memcmp(o->data(), data_.data() + row * dim_, dim_ * sizeof(float)) != 0) return false;
  }
  return true;
}

StoreSnapshot StoreSnapshot::open(const std::filesystem::path& path) {
  StoreSnapshot s;
  s.store_ = std::make_shared<const EmbeddingStore>(EmbeddingStore::load(path));
  return s;
}

std::filesystem::path staged_path(const std::filesystem::path& current) { return current.string() + ".staged"; }

void swap_store(const std::filesystem::path& current, const std::filesystem::path& staged) {
  if (!std::filesystem::exists(staged)) {
    throw Error("swap refused: staged store " + staged.string() + " does not exist (already swapped?)");
  }
  try {
    EmbeddingStore::load(staged);
  } catch (const Error& e) {
    throw Error(std::string("swap refused: staged store is invalid: ") + e.what());
  }
  std::error_code ec;
  std::filesystem::rename(staged, current, ec);
  if (ec) throw Error("swap failed: " + ec.message());
}

}  // namespace star::serving
