#pragma once

// Dirichlet-smoothed log-odds comparison of label rates between two
// corpora, reported as z-scores (positive: more frequent in corpus a).

#include <map>
#include <span>
#include <string>
#include <vector>

#include "copilot/domain.hpp"
#include "json.hpp"

namespace copilot {
struct CorpusLabels;
}

namespace copilot::stats {

struct LabelCounts {
  std::map<std::string, double> counts;  // y_w
  double total = 0.0;                    // n: messages in the corpus
};

struct LogOddsRow {
  std::string label;
  double y_a = 0.0, y_b = 0.0;
  double prior = 0.0;  // a_w
  double delta = 0.0;
  double variance = 0.0;
  double z = 0.0;
};

struct LogOddsResult {
  double prior_scale = 0.0;
  double prior_total = 0.0;  // a_0
  std::vector<LogOddsRow> rows;  // label order of the union of both corpora

  const LogOddsRow& at(std::string_view label) const;
};

inline constexpr double kDefaultPriorScale = 0.01;

// a_w = prior_scale * (y_w^a + y_w^b) and a_0 = prior_scale * (n^a + n^b).
// delta_w = log((y_a + a_w) / (n_a + a_0 - y_a - a_w))
//         - log((y_b + a_w) / (n_b + a_0 - y_b - a_w)),
// var_w = 1/(y_a + a_w) + 1/(y_b + a_w), z_w = delta_w / sqrt(var_w).
// A label absent from both corpora gets z = 0.
LogOddsResult fightin_words(const LabelCounts& a, const LabelCounts& b,
                            double prior_scale = kDefaultPriorScale);

// Splits per-session label counts by the arm of each session's tutor;
// a = treatment, b = control.
LogOddsResult fightin_words_by_arm(const CorpusLabels& labels, std::span<const TutorProfile> tutors,
                                   double prior_scale = kDefaultPriorScale);

nlohmann::ordered_json to_json(const LogOddsResult& r);

}  // namespace copilot::stats
