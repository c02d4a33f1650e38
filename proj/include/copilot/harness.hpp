#pragma once

// Synthetic trials with planted ground truth: tutors randomized by arm,
// students with covariates, sessions with exit-ticket outcomes, copilot
// event logs driven by the real engine, and templated transcripts whose
// true labels are known.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "copilot/deid.hpp"
#include "copilot/domain.hpp"
#include "copilot/labels.hpp"
#include "copilot/stats/estimators.hpp"
#include "json.hpp"

namespace copilot::harness {

inline constexpr std::size_t kStrategyCount = 7;

// Per-tutor-message probability of each strategy label, indexed by
// StrategyLabel. The rest of the mass goes to moment-only messages.
using StrategyRates = std::array<double, kStrategyCount>;

StrategyRates default_treatment_rates();
StrategyRates default_control_rates();

struct HarnessConfig {
  std::size_t n_tutors_treatment = 429;
  std::size_t n_tutors_control = 450;
  double attrition_treatment = 0.10;
  double attrition_control = 0.12;
  std::size_t n_students = 1000;
  double sessions_per_student = 4.136;
  std::size_t tutors_per_student = 3;  // each student rotates among this many tutors

  double base_pass_rate = 0.62;
  double itt_effect = 0.04;
  // When set, the effect applies to sessions that used the copilot instead
  // of to every treatment session.
  std::optional<double> late_effect;
  // When set, per-tercile effects of the moderator replace itt_effect.
  std::optional<std::array<double, 3>> tercile_effects;
  stats::Moderator tercile_moderator = stats::Moderator::quality_rating;
  double student_sd = 0.08;     // student shift on pass probability
  double attempt_rate = 0.84;   // floor on the attempt probability

  double usage_probability = 0.29;
  double mean_uses_when_used = 10.0;  // 1 + Poisson(mean - 1)

  double participation_mean = 14.07;
  double participation_sd = 6.0;

  double baseline_mean = 200.0;
  double baseline_sd = 15.0;
  double baseline_missing_rate = 0.05;
  double end_missing_rate = 0.05;
  double score_intercept = 20.0;
  double score_baseline_coef = 0.93;
  double score_pass_rate_coef = 0.06;  // per percentage point of exit tickets passed
  double score_exposure_effect = 0.0;  // per unit share of treatment sessions
  double score_noise_sd = 6.0;

  std::size_t messages_per_session = 0;  // 0: no transcripts
  StrategyRates treatment_rates = default_treatment_rates();
  StrategyRates control_rates = default_control_rates();
  double exit_ticket_label_rate = 0.3;  // annotators mark during_exit_ticket this often
  std::size_t labeled_sample = 3000;

  bool inject_misassignment = false;
  std::size_t misassigned_sessions = 6;
  std::size_t misassigned_tutors = 4;

  double cost_per_call = 0.20;
  int study_months = 2;
  std::uint64_t seed = 1;

  std::size_t n_sessions() const;
};

// Probabilities outside [0,1], pass rate + effect above 1 and similar
// infeasible settings throw InvalidArgument.
void validate(const HarnessConfig& config);

nlohmann::ordered_json to_json(const HarnessConfig& config);
// Missing keys keep their defaults; unknown keys throw.
HarnessConfig config_from_json(const nlohmann::ordered_json& j);

// Sessions per grade in the default population, and the school layout:
// grades 3-5 in eight elementary schools, grade 6 in one middle school.
inline constexpr std::array<int, 4> kGrades{3, 4, 5, 6};
inline constexpr std::array<std::size_t, 4> kGradeSessions{676, 1828, 357, 1275};

struct Trial {
  HarnessConfig config;
  StudyData data;
  Roster roster;
  // True label bits (bit i = all_label_names()[i]) for every message;
  // student messages get 0. Empty when there are no transcripts.
  std::vector<std::vector<std::uint16_t>> truth;
  std::vector<bool> used;  // per session: at least one counted use
  std::size_t generation_calls = 0;
};

Trial generate_trial(const HarnessConfig& config);

std::set<std::string> label_set(std::uint16_t bits);

// A uniform sample of tutor messages with their true labels and up to 10
// prior messages of context.
std::vector<LabeledUtterance> sample_labeled(const Trial& trial, std::size_t n, std::uint64_t seed);

// True label frequency over all tutor messages.
double true_frequency(const Trial& trial, std::string_view label);

// total_cost / n_tutors / months * 12.
double annualize_cost(double total_cost, std::size_t n_tutors, int months);

// Directory layout: config.json, tutors.csv, students.csv, roster.csv,
// sessions.jsonl and, with transcripts, labeled_sample.jsonl.
void write_trial(const std::filesystem::path& dir, const Trial& trial);

struct TrialFiles {
  HarnessConfig config;
  StudyData data;
  Roster roster;
  std::vector<LabeledUtterance> labeled_sample;
};
TrialFiles read_trial(const std::filesystem::path& dir);

}  // namespace copilot::harness
