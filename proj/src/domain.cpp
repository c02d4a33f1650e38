#include "copilot/domain.hpp"

#include <algorithm>
#include <cmath>

namespace copilot {

std::string strata_key(std::string_view school_id, int grade) {
  return std::string(school_id) + "|g" + std::to_string(grade);
}

std::string cluster_key(const SessionRecord& session) {
  return session.student_id + "|" + session.tutor_id;
}

void validate(const TutorProfile& tutor) {
  if (tutor.tutor_id.empty()) throw InvalidArgument("tutor_id is empty");
  if (tutor.experience_months < 0) {
    throw InvalidArgument("tutor " + tutor.tutor_id + ": experience_months < 0");
  }
  if (!(tutor.quality_rating >= -1.0 && tutor.quality_rating <= 1.0)) {
    throw InvalidArgument("tutor " + tutor.tutor_id + ": quality_rating outside [-1, 1]");
  }
}

void validate(const StudentProfile& student) {
  if (student.student_id.empty()) throw InvalidArgument("student_id is empty");
  if (student.grade < 3 || student.grade > 8) {
    throw InvalidArgument("student " + student.student_id + ": grade outside 3..8");
  }
}

void validate(const SessionRecord& session) {
  if (session.session_id.empty()) throw InvalidArgument("session_id is empty");
  if (session.exit_ticket_passed && !session.exit_ticket_attempted) {
    throw InvalidArgument("session " + session.session_id + ": passed without attempting");
  }
  if (session.participation_points < 0.0 || !std::isfinite(session.participation_points)) {
    throw InvalidArgument("session " + session.session_id + ": invalid participation points");
  }
  for (std::size_t i = 1; i < session.messages.size(); ++i) {
    if (session.messages[i].ordinal <= session.messages[i - 1].ordinal) {
      throw InvalidArgument("session " + session.session_id +
                            ": message ordinals not strictly increasing");
    }
  }
  for (const auto& event : session.copilot_uses) {
    if (event.context_snapshot.size() > kContextWindow) {
      throw InvalidArgument("session " + session.session_id +
                            ": copilot context exceeds the message window");
    }
  }
}

std::size_t count_uses(std::span<const CopilotUseEvent> events) {
  return static_cast<std::size_t>(std::count_if(
      events.begin(), events.end(), [](const auto& e) { return is_counted_use(e.action); }));
}

std::size_t count_uses(const SessionRecord& session) { return count_uses(session.copilot_uses); }

std::optional<double> outcome_value(const SessionRecord& session, Outcome outcome) {
  switch (outcome) {
    case Outcome::passed_unconditional:
      return (session.exit_ticket_attempted && session.exit_ticket_passed) ? 1.0 : 0.0;
    case Outcome::passed_conditional:
      if (!session.exit_ticket_attempted) return std::nullopt;
      return session.exit_ticket_passed ? 1.0 : 0.0;
    case Outcome::attempted:
      return session.exit_ticket_attempted ? 1.0 : 0.0;
    case Outcome::participation:
      return session.participation_points;
  }
  return std::nullopt;
}

std::vector<OutcomeValue> outcome_vector(std::span<const SessionRecord> sessions, Outcome outcome) {
  std::vector<OutcomeValue> out;
  out.reserve(sessions.size());
  for (const auto& s : sessions) {
    if (auto v = outcome_value(s, outcome)) out.push_back({s.session_id, *v});
  }
  return out;
}

std::vector<OutcomeValue> outcome_vector(std::span<const SessionRecord> sessions,
                                         std::string_view outcome) {
  return outcome_vector(sessions, parse_enum<Outcome>(outcome));
}

}  // namespace copilot
