#include "star/eval/settings.hpp"

#include <charconv>

#include "star/core/binary_io.hpp"
#include "star/core/error.hpp"

namespace star::eval {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw Error("setting '" + key + "': cannot parse '" + v + "' as a number");
  return out;
}

}  // namespace

Settings Settings::parse(const std::string& text, const std::string& origin) {
  Settings s;
  std::size_t lineno = 0, pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string line = trim(text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos));
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty())
      throw FormatError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    s.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return s;
}

Settings Settings::from_file(const std::filesystem::path& path) {
  return parse(core::read_file_text(path), path.string());
}

void Settings::merge(const Settings& over) {
  for (const auto& [k, v] : over.values_) values_[k] = v;
}

const std::string* Settings::raw(const std::string& key) const {
  read_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

std::string Settings::get(const std::string& key, const std::string& fallback) const {
  const auto* v = raw(key);
  const std::string out = v ? *v : fallback;
  used_[key] = out;
  return out;
}

double Settings::get(const std::string& key, double fallback) const {
  const auto* v = raw(key);
  const double out = v ? parse_number<double>(key, *v) : fallback;
  used_[key] = out;
  return out;
}

std::int64_t Settings::get(const std::string& key, std::int64_t fallback) const {
  const auto* v = raw(key);
  const std::int64_t out = v ? parse_number<std::int64_t>(key, *v) : fallback;
  used_[key] = out;
  return out;
}

std::size_t Settings::get(const std::string& key, std::size_t fallback) const {
  const auto* v = raw(key);
  const std::size_t out = v ? parse_number<std::size_t>(key, *v) : fallback;
  used_[key] = out;
  return out;
}

std::uint64_t Settings::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto* v = raw(key);
  const std::uint64_t out = v ? parse_number<std::uint64_t>(key, *v) : fallback;
  used_[key] = out;
  return out;
}

bool Settings::get(const std::string& key, bool fallback) const {
  const auto* v = raw(key);
  bool out = fallback;
  if (v) {
    if (*v == "true" || *v == "1") out = true;
    else if (*v == "false" || *v == "0") out = false;
    else throw Error("setting '" + key + "': expected true or false, got '" + *v + "'");
  }
  used_[key] = out;
  return out;
}

std::vector<std::string> Settings::unused() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (!read_.count(k)) out.push_back(k);
  return out;
}

}  // namespace star::eval
