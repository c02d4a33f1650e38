#pragma once

// Regression estimators: OLS and 2SLS over a Frame, and the study-level
// analyses built on them (ITT, TOT, tercile heterogeneity, exposure and
// exit-ticket predictive regressions).

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "copilot/domain.hpp"
#include "copilot/stats/frame.hpp"
#include "json.hpp"

namespace copilot::stats {

struct Coefficient {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p = 1.0;  // two-sided, normal approximation
};

struct FitResult {
  std::vector<Coefficient> coefficients;
  Eigen::MatrixXd vcov;
  std::size_t n = 0;
  int n_clusters = 0;      // 0 when variance is HC1
  std::string variance;    // "CR1" or "HC1"
  double r_squared = 0.0;
  std::optional<double> control_mean;
  std::optional<double> control_mean_se;
  std::optional<double> first_stage_f;  // 2SLS only
  bool weak_instrument = false;
  std::vector<std::string> notes;

  const Coefficient& at(std::string_view name) const;  // throws if absent
  std::size_t index(std::string_view name) const;
};

double normal_two_sided_p(double z);

// Rank deficiency throws RankDeficient naming the collinear columns.
FitResult fit_ols(const RegressionSpec& spec, const Frame& f);

// spec.treatment names the endogenous regressor; `instrument` takes its
// place in the first stage. Standard errors use structural residuals
// y - X b with the first-stage fitted design as scores. The first-stage F
// is the squared robust t of the instrument; F < 1 sets weak_instrument.
FitResult fit_2sls(const RegressionSpec& spec, const std::string& instrument, const Frame& f);

// Mean of `outcome` over rows where numeric column `group` equals `value`,
// with a cluster-robust (or HC1 when no cluster) standard error.
std::pair<double, double> group_mean(const Frame& f, const std::string& outcome,
                                     const std::string& group, double value,
                                     const std::optional<std::string>& cluster);

// ---------------------------------------------------------------------------
// Study-level analyses

struct ImputedStudents {
  std::vector<StudentProfile> students;  // baseline score always present
  std::vector<bool> baseline_imputed;
  std::size_t imputed = 0;
};

// Missing baseline scores get the OLS prediction from the categorical
// covariates (missing as its own level) and grade. All missing throws.
ImputedStudents impute_covariates(std::span<const StudentProfile> students);

struct AnalysisOptions {
  bool covariates = true;  // student covariates incl. imputed baseline
  bool strata = true;      // school x grade fixed effects
  bool cluster = true;     // student-tutor pairs; HC1 otherwise
};

// Session-level analysis frame. Columns: y, treatment, used, gender, race,
// frl, sped, lep, baseline, strata, cluster, tutor_id, grade. Participation
// is standardized within grade; passed_conditional keeps attempted
// sessions only. Sessions naming unknown tutors or students throw.
Frame session_frame(const StudyData& data, Outcome outcome);

RegressionSpec session_spec(const AnalysisOptions& opt, const std::string& treatment);

FitResult itt(const StudyData& data, Outcome outcome, const AnalysisOptions& opt = {});

// "used" = at least one counted copilot use, instrumented by assignment.
FitResult tot_2sls(const StudyData& data, Outcome outcome, const AnalysisOptions& opt = {});

enum class Moderator { quality_rating, experience_months };

// Terciles by order statistics: cut points are the ceil(n/3)-th and
// ceil(2n/3)-th smallest values and a value equal to a cut goes to the
// lower tercile. Returns 0, 1 or 2 per value.
std::vector<int> tercile_assignment(std::span<const double> values, double* cut_low = nullptr,
                                    double* cut_high = nullptr);

struct TercileEffect {
  int tercile = 0;
  std::size_t n_tutors = 0;
  std::size_t n_sessions = 0;
  Coefficient effect;
  double control_mean = 0.0;
  double control_mean_se = 0.0;
};

struct HeterogeneityResult {
  Moderator moderator = Moderator::quality_rating;
  double cut_low = 0.0, cut_high = 0.0;
  std::array<TercileEffect, 3> terciles;
  double equality_wald = 0.0;  // H0: equal effects, 2 df
  double equality_p = 1.0;
  FitResult fit;
};

// Tercile main effects and tercile x treatment interactions on top of the
// ITT specification; tutors are cut on the analysis sample.
HeterogeneityResult heterogeneity_by_tercile(const StudyData& data, Outcome outcome,
                                             Moderator moderator, const AnalysisOptions& opt = {});

struct StudentLevelResult {
  FitResult fit;
  std::size_t excluded_no_sessions = 0;
  std::size_t excluded_missing_scores = 0;
};

// End score on share of sessions with a treatment tutor, baseline (imputed),
// covariates and strata; HC1 errors.
StudentLevelResult exposure_regression(const StudyData& data);

// End score on exit-ticket passing rate (percent of a student's sessions)
// controlling for baseline; students lacking either score or any session
// are excluded; HC1 errors.
StudentLevelResult exit_ticket_predictive(const StudyData& data);

nlohmann::ordered_json to_json(const FitResult& r);
nlohmann::ordered_json to_json(const HeterogeneityResult& r);
nlohmann::ordered_json to_json(const StudentLevelResult& r);

}  // namespace copilot::stats

namespace copilot {
template <>
struct EnumNames<stats::Moderator> {
  static constexpr std::string_view type_name = "moderator";
  static constexpr std::array<std::string_view, 2> names{"quality_rating", "experience_months"};
};
}  // namespace copilot
