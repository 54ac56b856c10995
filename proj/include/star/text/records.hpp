#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace star::text {

enum class TextKind : std::uint8_t { job_description = 0, member_profile = 1, member_resume = 2 };

std::string_view kind_name(TextKind kind);
TextKind parse_kind(std::string_view name);
/// Prompt prepended to the raw text before tokenization.
std::string_view kind_prefix(TextKind kind);

struct TextRecord {
  std::uint64_t entity_id = 0;
  TextKind kind = TextKind::job_description;
  std::string text;
  std::int64_t snapshot_time = 0;
};

/// One labelled (member, job) example with the texts as they were at event time.
struct TrainingPair {
  std::uint64_t member_id = 0;
  std::uint64_t job_id = 0;
  double label = 0.0;
  std::int64_t event_time = 0;
  std::string profile_text;
  std::string resume_text;
  std::string job_text;
};

std::vector<TrainingPair> load_pairs(const std::filesystem::path& path);
void save_pairs(const std::filesystem::path& path, const std::vector<TrainingPair>& pairs);
std::string pair_to_json_line(const TrainingPair& p);

/// JSON lines {entity_id, kind, text, snapshot_time}.
std::vector<TextRecord> load_texts(const std::filesystem::path& path);
std::string text_to_json_line(const TextRecord& r);

}  // namespace star::text
