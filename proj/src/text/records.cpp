#include "star/text/records.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "star/core/binary_io.hpp"
#include "star/core/error.hpp"

namespace star::text {

std::string_view kind_name(TextKind kind) {
  switch (kind) {
    case TextKind::job_description: return "job_description";
    case TextKind::member_profile: return "member_profile";
    case TextKind::member_resume: return "member_resume";
  }
  return "unknown";
}

TextKind parse_kind(std::string_view name) {
  if (name == "job_description") return TextKind::job_description;
  if (name == "member_profile") return TextKind::member_profile;
  if (name == "member_resume") return TextKind::member_resume;
  throw Error("unknown text kind '" + std::string(name) + "'");
}

std::string_view kind_prefix(TextKind kind) {
  switch (kind) {
    case TextKind::job_description: return "document: ";
    case TextKind::member_profile: return "profile: ";
    case TextKind::member_resume: return "resume: ";
  }
  return "";
}

std::vector<TrainingPair> load_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open pairs file " + path.string());
  std::vector<TrainingPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TrainingPair p;
      p.member_id = j.at("member_id").get<std::uint64_t>();
      p.job_id = j.at("job_id").get<std::uint64_t>();
      p.label = j.at("label").get<double>();
      p.event_time = j.value("event_time", std::int64_t{0});
      p.profile_text = j.at("profile_text").get<std::string>();
      p.resume_text = j.at("resume_text").get<std::string>();
      p.job_text = j.at("job_text").get<std::string>();
      if (p.label != 0.0 && p.label != 1.0) throw Error("label must be 0 or 1");
      out.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string pair_to_json_line(const TrainingPair& p) {
  nlohmann::ordered_json j;
  j["member_id"] = p.member_id;
  j["job_id"] = p.job_id;
  j["label"] = static_cast<int>(p.label);
  j["event_time"] = p.event_time;
  j["profile_text"] = p.profile_text;
  j["resume_text"] = p.resume_text;
  j["job_text"] = p.job_text;
  return j.dump();
}

void save_pairs(const std::filesystem::path& path, const std::vector<TrainingPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    out += pair_to_json_line(p);
    out += '\n';
  }
  core::write_file_atomic(path, out);
}

std::vector<TextRecord> load_texts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open texts file " + path.string());
  std::vector<TextRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TextRecord r;
      r.entity_id = j.at("entity_id").get<std::uint64_t>();
      r.kind = parse_kind(j.at("kind").get<std::string>());
      r.text = j.at("text").get<std::string>();
      r.snapshot_time = j.value("snapshot_time", std::int64_t{0});
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string text_to_json_line(const TextRecord& r) {
  nlohmann::ordered_json j;
  j["entity_id"] = r.entity_id;
  j["kind"] = kind_name(r.kind);
  j["text"] = r.text;
  j["snapshot_time"] = r.snapshot_time;
  return j.dump();
}

}  // namespace star::text
