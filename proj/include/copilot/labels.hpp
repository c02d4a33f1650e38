#pragma once

// Utterance taxonomies used by the pedagogy classifiers: tutoring
// strategies and session moments. A tutor utterance may carry any subset
// of labels from either taxonomy; an empty set is the "N/A" bucket.

#include <array>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "copilot/domain.hpp"
#include "json.hpp"

namespace copilot {

enum class StrategyLabel {
  prompt_explain,
  ask_guiding_question,
  affirm_correct_attempt,
  ask_retry,
  give_answer,
  give_solution_strategy,
  generic_encouragement
};

template <>
struct EnumNames<StrategyLabel> {
  static constexpr std::string_view type_name = "strategy label";
  static constexpr std::array<std::string_view, 7> names{
      "prompt_explain", "ask_guiding_question",   "affirm_correct_attempt", "ask_retry",
      "give_answer",    "give_solution_strategy", "generic_encouragement"};
};

enum class MomentLabel {
  start_session,
  start_problem,
  during_attempt,
  after_attempt,
  start_exit_ticket,
  during_exit_ticket,
  after_exit_ticket,
  end_session
};

template <>
struct EnumNames<MomentLabel> {
  static constexpr std::string_view type_name = "moment label";
  static constexpr std::array<std::string_view, 8> names{
      "start_session",     "start_problem",      "during_attempt",    "after_attempt",
      "start_exit_ticket", "during_exit_ticket", "after_exit_ticket", "end_session"};
};

// Strategy names followed by moment names.
const std::vector<std::string>& all_label_names();
bool is_known_label(std::string_view name);
// Throws InvalidArgument for names outside both taxonomies.
void require_known_label(std::string_view name);

struct LabeledUtterance {
  std::vector<ChatMessage> context;  // up to kContextWindow prior messages
  std::string target;                // the tutor utterance being labeled
  std::set<std::string> labels;

  bool has(std::string_view label) const { return labels.count(std::string(label)) > 0; }
};

void validate(const LabeledUtterance& u);

// {"context":[{"sender","text"}...],"target":"...","labels":[...]}
nlohmann::ordered_json to_json(const LabeledUtterance& u);
LabeledUtterance labeled_from_json(const nlohmann::ordered_json& j);
std::vector<LabeledUtterance> read_labeled_jsonl(std::istream& in);
void write_labeled_jsonl(std::ostream& out, const std::vector<LabeledUtterance>& data);

}  // namespace copilot
