#pragma once

// Tutor balance and attrition checks: Welch two-sample t-tests between
// arms on tutor characteristics.

#include <span>
#include <string>
#include <vector>

#include "copilot/domain.hpp"
#include "json.hpp"

namespace copilot::stats {

struct WelchTest {
  double mean_a = 0.0, mean_b = 0.0;
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
  std::size_t n_a = 0, n_b = 0;
};

// Unequal-variance t-test. Zero variance in both groups gives p = 1 when
// the means agree and p = 0 otherwise. Each group needs 2+ values.
WelchTest welch_t_test(std::span<const double> a, std::span<const double> b);

struct BalanceRow {
  std::string variable;
  WelchTest test;  // a = treatment, b = control
};

struct BalanceReport {
  std::size_t assigned_treatment = 0, assigned_control = 0;
  std::size_t analyzed_treatment = 0, analyzed_control = 0;
  double attrition_treatment = 0.0, attrition_control = 0.0;
  std::vector<BalanceRow> assigned;  // all randomized tutors
  std::vector<BalanceRow> analyzed;  // tutors with at least one session
  BalanceRow attrition;              // indicator: no sessions at all
};

// Variables: female (share among tutors with known gender), experience
// months and quality rating. An arm with fewer than two tutors throws.
BalanceReport balance_check(std::span<const TutorProfile> tutors,
                            std::span<const SessionRecord> sessions);

nlohmann::ordered_json to_json(const BalanceReport& r);

}  // namespace copilot::stats
