#include "star/lifecycle/registry.hpp"

#include <algorithm>
#include <json.hpp>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include "star/core/binary_io.hpp"
#include "star/core/error.hpp"

namespace star::lifecycle {

namespace {

std::string_view status_name(VersionStatus s) { return s == VersionStatus::active ? "active" : "deprecated"; }

VersionStatus parse_status(const std::string& s) {
  if (s == "active") return VersionStatus::active;
  if (s == "deprecated") return VersionStatus::deprecated;
  throw FormatError("registry: unknown version status '" + s + "'");
}

class FileLock {
 public:
  explicit FileLock(const std::filesystem::path& path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw Error("cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw Error("cannot lock " + path.string());
    }
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace

const EmbeddingVersion* Registry::find(std::uint64_t id) const {
  for (const auto& v : versions_)
    if (v.version_id == id) return &v;
  return nullptr;
}

std::optional<std::uint64_t> Registry::newest_active() const {
  std::optional<std::uint64_t> best;
  for (const auto& v : versions_)
    if (v.status == VersionStatus::active && (!best || v.version_id > *best)) best = v.version_id;
  return best;
}

void Registry::register_version(EmbeddingVersion v) {
  if (find(v.version_id)) throw Error("version " + std::to_string(v.version_id) + " is already registered");
  if (!versions_.empty() && v.version_id <= versions_.back().version_id) {
    throw Error("version ids must increase: " + std::to_string(v.version_id) + " is not above " +
                std::to_string(versions_.back().version_id));
  }
  if (v.dim == 0) throw Error("version " + std::to_string(v.version_id) + ": dim must be > 0");
  versions_.push_back(std::move(v));
}

void Registry::add_transform(TransformRecord t, std::size_t from_dim, std::size_t to_dim) {
  const auto* from = find(t.from_version);
  const auto* to = find(t.to_version);
  if (!from || !to) throw Error("transform endpoints must be registered versions");
  if (t.from_version <= t.to_version) throw Error("transforms map a newer version to an older one");
  if (from->dim != from_dim || to->dim != to_dim) {
    throw ShapeError("transform " + std::to_string(t.from_version) + "->" + std::to_string(t.to_version) + " is " +
                     std::to_string(to_dim) + "x" + std::to_string(from_dim) + ", versions have dims " +
                     std::to_string(from->dim) + " and " + std::to_string(to->dim));
  }
  std::erase_if(transforms_, [&](const TransformRecord& r) {
    return r.from_version == t.from_version && r.to_version == t.to_version;
  });
  transforms_.push_back(std::move(t));
}

std::vector<TransformRecord> Registry::chain(std::uint64_t from, std::uint64_t to) const {
  if (from == to) return {};
  // depth-first over strictly decreasing versions, preferring the largest step
  std::vector<TransformRecord> path;
  std::function<bool(std::uint64_t)> walk = [&](std::uint64_t at) {
    if (at == to) return true;
    std::vector<const TransformRecord*> out;
    for (const auto& t : transforms_)
      if (t.from_version == at && t.to_version >= to) out.push_back(&t);
    std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->to_version < b->to_version; });
    for (const auto* t : out) {
      path.push_back(*t);
      if (walk(t->to_version)) return true;
      path.pop_back();
    }
    return false;
  };
  return walk(from) ? path : std::vector<TransformRecord>{};
}

void Registry::deprecate(std::uint64_t id, bool force) {
  auto it = std::find_if(versions_.begin(), versions_.end(), [&](const auto& v) { return v.version_id == id; });
  if (it == versions_.end()) throw Error("version " + std::to_string(id) + " is not registered");
  if (!force) {
    const auto newest = newest_active();
    if (newest && *newest == id) {
      throw Error("refusing to deprecate version " + std::to_string(id) +
                  ": it is the newest active version (use force to override)");
    }
    if (!newest || chain(*newest, id).empty()) {
      throw Error("refusing to deprecate version " + std::to_string(id) + ": no transform chain from version " +
                  (newest ? std::to_string(*newest) : std::string("<none>")) +
                  " reaches it, so its consumers could not read newer embeddings (use force to override)");
    }
  }
  it->status = VersionStatus::deprecated;
}

std::string Registry::to_json() const {
  nlohmann::ordered_json j;
  j["versions"] = nlohmann::ordered_json::array();
  for (const auto& v : versions_) {
    nlohmann::ordered_json o;
    o["version_id"] = v.version_id;
    o["dim"] = v.dim;
    o["created_at"] = v.created_at;
    o["model_checksum"] = v.model_checksum;
    o["status"] = status_name(v.status);
    o["store"] = v.store;
    j["versions"].push_back(o);
  }
  j["transforms"] = nlohmann::ordered_json::array();
  for (const auto& t : transforms_) {
    nlohmann::ordered_json o;
    o["from_version"] = t.from_version;
    o["to_version"] = t.to_version;
    o["weights"] = t.weights;
    o["residual_rms"] = t.residual_rms;
    j["transforms"].push_back(o);
  }
  return j.dump(2) + "\n";
}

Registry Registry::from_json(const std::string& text) {
  Registry r;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& o : j.at("versions")) {
      EmbeddingVersion v;
      v.version_id = o.at("version_id").get<std::uint64_t>();
      v.dim = o.at("dim").get<std::size_t>();
      v.created_at = o.at("created_at").get<std::int64_t>();
      v.model_checksum = o.at("model_checksum").get<std::string>();
      v.status = parse_status(o.at("status").get<std::string>());
      v.store = o.value("store", std::string{});
      r.register_version(std::move(v));
    }
    for (const auto& o : j.at("transforms")) {
      TransformRecord t;
      t.from_version = o.at("from_version").get<std::uint64_t>();
      t.to_version = o.at("to_version").get<std::uint64_t>();
      t.weights = o.at("weights").get<std::string>();
      t.residual_rms = o.at("residual_rms").get<double>();
      const auto* from = r.find(t.from_version);
      const auto* to = r.find(t.to_version);
      if (!from || !to) throw FormatError("registry: transform refers to an unknown version");
      r.add_transform(std::move(t), from->dim, to->dim);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("registry: ") + e.what());
  }
  return r;
}

Registry Registry::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return {};
  return from_json(core::read_file_text(path));
}

void Registry::save(const std::filesystem::path& path) const { core::write_file_atomic(path, to_json()); }

Registry update_registry(const std::filesystem::path& path, const std::function<void(Registry&)>& fn) {
  FileLock lock(path.string() + ".lock");
  Registry r = Registry::load(path);
  fn(r);
  r.save(path);
  return r;
}

VersionTransform load_chain(const Registry& reg, std::uint64_t from, std::uint64_t to,
                            const std::filesystem::path& base_dir) {
  const auto links = reg.chain(from, to);
  if (links.empty()) {
    throw Error("no transform chain from version " + std::to_string(from) + " to " + std::to_string(to));
  }
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base_dir / fp;
  };
  VersionTransform acc = load_transform(resolve(links.front().weights));
  for (std::size_t i = 1; i < links.size(); ++i) acc = compose(acc, load_transform(resolve(links[i].weights)));
  return acc;
}

}  // namespace star::lifecycle
