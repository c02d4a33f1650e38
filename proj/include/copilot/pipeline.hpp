#pragma once

// End-to-end analysis of a study: effects, heterogeneity, balance, label
// log-odds, usage and cost, rendered as text, CSV and JSON.

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "copilot/classifier.hpp"
#include "copilot/labeling.hpp"
#include "copilot/stats/balance.hpp"
#include "copilot/stats/estimators.hpp"
#include "copilot/stats/fightin_words.hpp"

namespace copilot::harness {

class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage " + stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

inline constexpr std::size_t kHistogramCap = 20;

struct UsageSummary {
  std::size_t treatment_sessions = 0;
  std::size_t sessions_used = 0;  // at least one counted use
  std::size_t total_uses = 0;
  double share_used = 0.0;
  double mean_uses_all = 0.0;   // zeros included
  double mean_uses_used = 0.0;  // zeros excluded
  // histogram[k] = treatment sessions with k uses; the last bucket is
  // kHistogramCap or more.
  std::vector<std::size_t> histogram;
  std::size_t control_sessions_with_uses = 0;
  std::size_t generation_calls = 0;  // activations, switches and regenerations
};

UsageSummary usage_summary(const StudyData& data);

struct CostSummary {
  std::size_t generation_calls = 0;
  double cost_per_call = 0.0;
  double total_cost = 0.0;
  std::size_t treatment_tutors = 0;  // as assigned
  int months = 0;
  double annual_per_tutor = 0.0;
};

struct PipelineOptions {
  const ModelSet* models = nullptr;  // log-odds are skipped without models
  stats::AnalysisOptions analysis;
  double prior_scale = stats::kDefaultPriorScale;
  double cost_per_call = 0.20;
  int months = 2;
};

struct PipelineReport {
  std::vector<std::pair<Outcome, stats::FitResult>> itt;
  std::vector<std::pair<Outcome, stats::FitResult>> tot;
  std::vector<stats::HeterogeneityResult> heterogeneity;  // unconditional pass
  stats::BalanceReport balance;
  std::optional<stats::StudentLevelResult> exposure;
  std::optional<stats::StudentLevelResult> exit_ticket_predictive;
  std::optional<CorpusLabels> labels;
  std::optional<stats::LogOddsResult> log_odds;
  UsageSummary usage;
  CostSummary cost;
  std::vector<std::string> notes;
};

// Failures are rethrown as StageError naming the stage.
PipelineReport run_pipeline(const StudyData& data, const PipelineOptions& options = {});

std::string format_report(const PipelineReport& report);
// section,name,outcome,estimate,se,p,n
void write_report_csv(std::ostream& out, const PipelineReport& report);
nlohmann::ordered_json to_json(const PipelineReport& report);

}  // namespace copilot::harness
