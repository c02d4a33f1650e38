#pragma once

// Canonical value types shared by every module: tutors, students, chat
// transcripts, exit-ticket outcomes and the copilot interaction log.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "copilot/enum_names.hpp"

namespace copilot {

enum class Arm { treatment, control };
enum class Gender { male, female, missing };
enum class Race {
  hispanic,
  white,
  black,
  asian,
  pacific_islander,
  american_indian,
  multiracial,
  missing
};
// Binary student indicator (free/reduced lunch, special education, limited
// English proficiency) with an explicit missing level.
enum class Flag { no, yes, missing };
enum class Sender { tutor, student };
enum class Role { student, tutor };

// The seven strategies offered in the copilot dropdown.
enum class StrategyKind {
  provide_solution,
  worked_example,
  minor_correction,
  similar_problem,
  simplify_question,
  affirm_correct,
  encourage_student
};

enum class CopilotAction { activate, strategy_switch, regenerate, edit, send };

enum class Outcome { passed_unconditional, passed_conditional, attempted, participation };

template <>
struct EnumNames<Arm> {
  static constexpr std::string_view type_name = "arm";
  static constexpr std::array<std::string_view, 2> names{"treatment", "control"};
};
template <>
struct EnumNames<Gender> {
  static constexpr std::string_view type_name = "gender";
  static constexpr std::array<std::string_view, 3> names{"male", "female", "missing"};
};
template <>
struct EnumNames<Race> {
  static constexpr std::string_view type_name = "race";
  static constexpr std::array<std::string_view, 8> names{
      "hispanic",        "white",           "black",       "asian",
      "pacific_islander", "american_indian", "multiracial", "missing"};
};
template <>
struct EnumNames<Flag> {
  static constexpr std::string_view type_name = "flag";
  static constexpr std::array<std::string_view, 3> names{"no", "yes", "missing"};
};
template <>
struct EnumNames<Sender> {
  static constexpr std::string_view type_name = "sender";
  static constexpr std::array<std::string_view, 2> names{"tutor", "student"};
};
template <>
struct EnumNames<Role> {
  static constexpr std::string_view type_name = "role";
  static constexpr std::array<std::string_view, 2> names{"student", "tutor"};
};
template <>
struct EnumNames<StrategyKind> {
  static constexpr std::string_view type_name = "strategy";
  static constexpr std::array<std::string_view, 7> names{
      "provide_solution",  "worked_example", "minor_correction", "similar_problem",
      "simplify_question", "affirm_correct", "encourage_student"};
};
template <>
struct EnumNames<CopilotAction> {
  static constexpr std::string_view type_name = "copilot action";
  static constexpr std::array<std::string_view, 5> names{
      "activate", "strategy_switch", "regenerate", "edit", "send"};
};
template <>
struct EnumNames<Outcome> {
  static constexpr std::string_view type_name = "outcome";
  static constexpr std::array<std::string_view, 4> names{
      "passed_unconditional", "passed_conditional", "attempted", "participation"};
};

struct TutorProfile {
  std::string tutor_id;
  Gender gender = Gender::missing;
  int experience_months = 0;
  double quality_rating = 0.0;  // [-1, 1]
  Arm arm = Arm::control;

  friend bool operator==(const TutorProfile&, const TutorProfile&) = default;
};

struct StudentProfile {
  std::string student_id;
  Gender gender = Gender::missing;
  Race race = Race::missing;
  Flag frl = Flag::missing;
  Flag sped = Flag::missing;
  Flag lep = Flag::missing;
  std::optional<double> baseline_math_score;  // mid-of-year MAP
  std::optional<double> end_math_score;       // end-of-year MAP
  int grade = 3;                              // 3..8
  std::string school_id;

  friend bool operator==(const StudentProfile&, const StudentProfile&) = default;
};

// `ordinal` is the per-session arrival order and is what orders messages;
// `wall_ms` is informational (ties in wall clock are broken by ordinal).
struct ChatMessage {
  Sender sender = Sender::tutor;
  std::uint64_t ordinal = 0;
  std::int64_t wall_ms = 0;
  std::string text;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

inline constexpr std::size_t kContextWindow = 10;

struct CopilotUseEvent {
  std::string session_id;
  std::uint64_t ordinal = 0;
  std::int64_t wall_ms = 0;
  CopilotAction action = CopilotAction::activate;
  StrategyKind strategy = StrategyKind::simplify_question;
  std::vector<ChatMessage> context_snapshot;  // <= 10, de-identified
  std::string suggestion_text;
  std::optional<std::string> final_text;

  friend bool operator==(const CopilotUseEvent&, const CopilotUseEvent&) = default;
};

struct SessionRecord {
  std::string session_id;
  std::string tutor_id;
  std::string student_id;
  std::string school_id;
  int grade = 3;
  std::string lesson_topic;
  std::vector<ChatMessage> messages;
  bool exit_ticket_attempted = false;
  bool exit_ticket_passed = false;
  double participation_points = 0.0;
  std::vector<CopilotUseEvent> copilot_uses;

  friend bool operator==(const SessionRecord&, const SessionRecord&) = default;
};

// A complete study: assigned tutors, enrolled students and their sessions.
struct StudyData {
  std::vector<TutorProfile> tutors;
  std::vector<StudentProfile> students;
  std::vector<SessionRecord> sessions;
};

// Strata key for the class fixed effect: school x grade.
std::string strata_key(std::string_view school_id, int grade);
// Cluster key: student-tutor pair.
std::string cluster_key(const SessionRecord& session);

void validate(const TutorProfile& tutor);
void validate(const StudentProfile& student);
void validate(const SessionRecord& session);

// Only activations and dropdown strategy switches count as uses.
constexpr bool is_counted_use(CopilotAction action) {
  return action == CopilotAction::activate || action == CopilotAction::strategy_switch;
}

std::size_t count_uses(std::span<const CopilotUseEvent> events);
std::size_t count_uses(const SessionRecord& session);

struct OutcomeValue {
  std::string session_id;
  double value = 0.0;

  friend bool operator==(const OutcomeValue&, const OutcomeValue&) = default;
};

// Raw (unstandardized) outcome per session. passed_conditional drops
// sessions whose exit ticket was not attempted.
std::vector<OutcomeValue> outcome_vector(std::span<const SessionRecord> sessions, Outcome outcome);

// Same, taking the outcome by name; unknown names throw InvalidArgument.
std::vector<OutcomeValue> outcome_vector(std::span<const SessionRecord> sessions,
                                         std::string_view outcome);

// Value of `outcome` for one session, or nullopt when the session is
// excluded from that outcome's sample.
std::optional<double> outcome_value(const SessionRecord& session, Outcome outcome);

}  // namespace copilot
