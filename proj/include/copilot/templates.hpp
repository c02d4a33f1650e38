#pragma once

// Surface text banks for synthetic transcripts. Placeholders: {n}, {m},
// {k} (small integers), {topic} and {student} (first name).

#include <span>
#include <string>
#include <string_view>

#include "copilot/labels.hpp"

namespace copilot::harness {

// 20 realizations per strategy label.
std::span<const std::string_view> strategy_templates(StrategyLabel label);
// Moment-only tutor messages (no strategy).
std::span<const std::string_view> moment_templates(MomentLabel label);

std::span<const std::string_view> student_greetings();
std::span<const std::string_view> student_attempts();
std::span<const std::string_view> student_working();
std::span<const std::string_view> student_farewells();

std::span<const std::string_view> lesson_topics();
std::span<const std::string_view> first_names();
std::span<const std::string_view> last_names();

struct Fill {
  int n = 0, m = 0, k = 0;
  std::string_view topic;
  std::string_view student;
};
std::string fill_template(std::string_view tmpl, const Fill& f);

}  // namespace copilot::harness
