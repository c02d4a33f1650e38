#pragma once

// Persistent formats: transcript JSONL (one SessionRecord per line) and the
// CSV tables for tutors and students. Field layouts are documented in
// docs/formats.md.

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "copilot/domain.hpp"
#include "json.hpp"

namespace copilot {

using ordered_json = nlohmann::ordered_json;

ordered_json to_json(const ChatMessage& message);
ordered_json to_json(const CopilotUseEvent& event);
ordered_json to_json(const SessionRecord& session);

ChatMessage chat_message_from_json(const nlohmann::ordered_json& j);
CopilotUseEvent event_from_json(const nlohmann::ordered_json& j);
SessionRecord session_from_json(const nlohmann::ordered_json& j);

// Writes one compact JSON object per line, fields in a fixed order.
// Stream failures throw IoError carrying the byte offset of the failed line.
void write_jsonl(std::ostream& out, std::span<const SessionRecord> sessions);
void write_jsonl_line(std::ostream& out, const SessionRecord& session);

// Reads every line; the first malformed line throws IoError.
std::vector<SessionRecord> read_jsonl(std::istream& in);

// Streams records to `on_record`. Malformed lines are reported to
// `on_error` and skipped. Returns the number of records delivered.
std::size_t for_each_jsonl(std::istream& in,
                           const std::function<void(SessionRecord&&)>& on_record,
                           const std::function<void(const IoError&)>& on_error);

// RFC-4180 style field splitting (quoted fields, doubled quotes).
std::vector<std::string> split_csv_line(std::string_view line);
std::string csv_field(std::string_view value);

// Reads a CSV whose first line is a header; returns rows as header->value
// lookups in header order. Blank lines are skipped.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;  // throws if absent
};
CsvTable read_csv(std::istream& in);

// tutor_id,gender,experience_months,quality_rating,arm
std::vector<TutorProfile> read_tutors_csv(std::istream& in);
void write_tutors_csv(std::ostream& out, std::span<const TutorProfile> tutors);

// student_id,gender,race,frl,sped,lep,baseline_math_score,end_math_score,grade,school_id
// Empty score fields mean missing.
std::vector<StudentProfile> read_students_csv(std::istream& in);
void write_students_csv(std::ostream& out, std::span<const StudentProfile> students);

}  // namespace copilot
