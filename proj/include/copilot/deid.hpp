#pragma once

// Roster-driven name redaction and the outbound context window.
//
// Matching rules:
//  * a roster display name and each of its whitespace-separated parts of at
//    least two characters is a match candidate;
//  * matching is case-insensitive (ASCII folding) and whole-word, where a
//    word boundary is any character that is not a letter (UTF-8 multibyte
//    sequences count as letters), so "Maria's" matches "Maria" but
//    "Marianne" does not;
//  * longer candidates win over shorter ones at the same position; on equal
//    length the student role wins;
//  * existing "[STUDENT]" / "[TUTOR]" placeholders are left untouched, which
//    makes redaction idempotent.
// Non-name PII (emails, phone numbers) is not detected.

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "copilot/domain.hpp"

namespace copilot {

inline constexpr std::string_view kStudentPlaceholder = "[STUDENT]";
inline constexpr std::string_view kTutorPlaceholder = "[TUTOR]";

struct RosterEntry {
  Role role = Role::student;
  std::string person_id;
  std::string display_name;
};

class Roster {
 public:
  Roster() = default;

  // Trims surrounding whitespace; an empty display name is rejected.
  void add(Role role, std::string person_id, std::string display_name);

  std::span<const RosterEntry> entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  const RosterEntry* find(std::string_view person_id) const;

  struct Candidate {
    std::string phrase;  // lowercase
    Role role;
  };
  // Candidates keyed by their lowercase leading letter run, longest first.
  const std::vector<Candidate>* candidates_for(std::string_view leading_word) const;

 private:
  void index(const RosterEntry& entry);

  std::vector<RosterEntry> entries_;
  std::unordered_map<std::string, std::vector<Candidate>> by_first_word_;
};

// CSV with header role,person_id,display_name.
Roster read_roster_csv(std::istream& in);
void write_roster_csv(std::ostream& out, const Roster& roster);

std::string deidentify(std::string_view text, const Roster& roster);

// True when `text` contains a whole-word roster name outside placeholders.
bool contains_roster_name(std::string_view text, const Roster& roster);

// The last min(k, size) messages in original order, each de-identified.
std::vector<ChatMessage> window(std::span<const ChatMessage> messages, const Roster& roster,
                                std::size_t k = kContextWindow);

}  // namespace copilot
