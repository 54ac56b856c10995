#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace star::eval {

/// Flat key = value settings with typed reads. Every read is recorded with
/// its effective value so reports can echo the configuration they ran with.
class Settings {
 public:
  Settings() = default;

  /// "key = value" lines; blank lines and '#' comments skipped.
  static Settings parse(const std::string& text, const std::string& origin = "<settings>");
  static Settings from_file(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  /// Later values win.
  void merge(const Settings& over);
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get(const std::string& key, const std::string& fallback) const;
  double get(const std::string& key, double fallback) const;
  std::int64_t get(const std::string& key, std::int64_t fallback) const;
  std::size_t get(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get(const std::string& key, bool fallback) const;
  // int literals would otherwise be ambiguous
  std::size_t get(const std::string& key, int fallback) const { return get(key, static_cast<std::size_t>(fallback)); }

  const nlohmann::ordered_json& used() const { return used_; }
  /// Provided keys never read.
  std::vector<std::string> unused() const;

 private:
  const std::string* raw(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable nlohmann::ordered_json used_ = nlohmann::ordered_json::object();
  mutable std::set<std::string> read_;
};

}  // namespace star::eval
