#include "copilot/stats/estimators.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

namespace copilot::stats {

const Coefficient& FitResult::at(std::string_view name) const { return coefficients[index(name)]; }

std::size_t FitResult::index(std::string_view name) const {
  for (std::size_t i = 0; i < coefficients.size(); ++i) {
    if (coefficients[i].name == name) return i;
  }
  throw InvalidArgument("no coefficient named '" + std::string(name) + "'");
}

double normal_two_sided_p(double z) {
  if (!std::isfinite(z)) return std::isnan(z) ? 1.0 : 0.0;
  return 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), std::fabs(z)));
}

namespace {

[[noreturn]] void rethrow_named(const RankDeficient& e, const std::vector<std::string>& names) {
  std::string list;
  std::vector<Eigen::Index> cols = e.columns();
  for (auto c : cols) {
    if (!list.empty()) list += ", ";
    list += names[static_cast<std::size_t>(c)];
  }
  throw RankDeficient("design matrix is rank deficient; collinear columns: " + list, std::move(cols));
}

LeastSquares<double> solve_named(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                 const std::vector<std::string>& names) {
  try {
    return solve_least_squares(X, y);
  } catch (const RankDeficient& e) {
    rethrow_named(e, names);
  }
}

Eigen::MatrixXd robust_vcov(const Eigen::MatrixXd& scores, const Eigen::VectorXd& u,
                            const Eigen::MatrixXd& bread, const Design& d, FitResult& r) {
  if (!d.clusters.empty()) {
    r.variance = "CR1";
    r.n_clusters = d.n_clusters;
    return cluster_robust_vcov(scores, u, bread, d.clusters);
  }
  r.variance = "HC1";
  return hc1_vcov(scores, u, bread);
}

void fill_coefficients(FitResult& r, const Design& d, const Eigen::VectorXd& beta) {
  r.coefficients.clear();
  for (std::size_t j = 0; j < d.columns.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    Coefficient c;
    c.name = d.columns[j];
    c.estimate = beta[jj];
    c.se = std::sqrt(std::max(0.0, r.vcov(jj, jj)));
    c.z = c.se > 0 ? c.estimate / c.se : (c.estimate == 0 ? 0.0 : std::copysign(INFINITY, c.estimate));
    c.p = normal_two_sided_p(c.z);
    r.coefficients.push_back(std::move(c));
  }
}

double r_squared(const Eigen::VectorXd& y, const Eigen::VectorXd& u) {
  const double tss = (y.array() - y.mean()).square().sum();
  return tss > 0 ? 1.0 - u.squaredNorm() / tss : 0.0;
}

}  // namespace

FitResult fit_ols(const RegressionSpec& spec, const Frame& f) {
  const Design d = build_design(spec, f);
  const auto ls = solve_named(d.X, d.y, d.columns);
  FitResult r;
  r.n = f.rows();
  r.vcov = robust_vcov(d.X, ls.residuals, ls.bread, d, r);
  fill_coefficients(r, d, ls.beta);
  r.r_squared = r_squared(d.y, ls.residuals);
  return r;
}

FitResult fit_2sls(const RegressionSpec& spec, const std::string& instrument, const Frame& f) {
  if (!spec.treatment) throw InvalidArgument("2SLS needs an endogenous regressor");
  if (f.is_categorical(*spec.treatment) || f.is_categorical(instrument)) {
    throw InvalidArgument("endogenous regressor and instrument must be numeric");
  }
  const Design d = build_design(spec, f);
  RegressionSpec first = spec;
  first.outcome = *spec.treatment;
  first.treatment = instrument;
  const Design z = build_design(first, f);
  const Eigen::Index endo = spec.intercept ? 1 : 0;

  // Stage 1: endogenous regressor on instrument + exogenous columns.
  const auto s1 = solve_named(z.X, z.y, z.columns);
  FitResult first_fit;
  first_fit.vcov = robust_vcov(z.X, s1.residuals, s1.bread, z, first_fit);
  const double t = s1.beta[endo] / std::sqrt(first_fit.vcov(endo, endo));

  // Stage 2 on the fitted design; variance from structural residuals.
  Eigen::MatrixXd Xhat = d.X;
  Xhat.col(endo) = s1.fitted;
  const auto s2 = solve_named(Xhat, d.y, d.columns);
  const Eigen::VectorXd u = d.y - d.X * s2.beta;

  FitResult r;
  r.n = f.rows();
  r.vcov = robust_vcov(Xhat, u, s2.bread, d, r);
  fill_coefficients(r, d, s2.beta);
  r.r_squared = r_squared(d.y, u);
  r.first_stage_f = t * t;
  r.weak_instrument = !(t * t >= 1.0);
  if (r.weak_instrument) r.notes.push_back("weak instrument: first-stage F below 1");
  return r;
}

std::pair<double, double> group_mean(const Frame& f, const std::string& outcome,
                                     const std::string& group, double value,
                                     const std::optional<std::string>& cluster) {
  const auto& g = f.numeric(group);
  std::vector<bool> keep(f.rows());
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = g[i] == value;
  const Frame sub = f.filter(keep);
  if (sub.rows() < 2) throw InvalidArgument("too few rows for a group mean");
  RegressionSpec spec;
  spec.outcome = outcome;
  if (cluster && sub.levels(*cluster).size() >= 2) spec.cluster = cluster;
  const auto fit = fit_ols(spec, sub);
  return {fit.coefficients[0].estimate, fit.coefficients[0].se};
}

// ---------------------------------------------------------------------------

namespace {

// Categorical covariates as (name, value) accessors.
std::vector<std::pair<std::string, std::string>> categorical_covariates(const StudentProfile& s) {
  return {{"gender", std::string(to_string(s.gender))},
          {"race", std::string(to_string(s.race))},
          {"frl", std::string(to_string(s.frl))},
          {"sped", std::string(to_string(s.sped))},
          {"lep", std::string(to_string(s.lep))}};
}

}  // namespace

ImputedStudents impute_covariates(std::span<const StudentProfile> students) {
  ImputedStudents out;
  out.students.assign(students.begin(), students.end());
  out.baseline_imputed.assign(students.size(), false);
  std::size_t present = 0;
  for (const auto& s : students) present += s.baseline_math_score.has_value();
  if (present == students.size()) return out;
  if (present == 0) throw InvalidArgument("every baseline score is missing; nothing to impute from");

  Frame f(students.size());
  std::map<std::string, std::vector<std::string>> cats;
  std::vector<std::string> grade;
  for (const auto& s : students) {
    for (auto& [k, v] : categorical_covariates(s)) cats[k].push_back(v);
    grade.push_back(std::to_string(s.grade));
  }
  std::vector<std::string> names{"(intercept)"};
  std::vector<Eigen::VectorXd> cols{Eigen::VectorXd::Ones(static_cast<Eigen::Index>(students.size()))};
  for (auto& [k, v] : cats) {
    f.add_categorical(k, std::move(v));
    append_variable(f, k, names, cols);
  }
  f.add_categorical("grade", std::move(grade));
  append_variable(f, "grade", names, cols);

  const auto n = static_cast<Eigen::Index>(students.size());
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) X.col(static_cast<Eigen::Index>(j)) = cols[j];

  Eigen::MatrixXd Xp(static_cast<Eigen::Index>(present), X.cols());
  Eigen::VectorXd yp(static_cast<Eigen::Index>(present));
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = students[static_cast<std::size_t>(i)];
    if (!s.baseline_math_score) continue;
    Xp.row(r) = X.row(i);
    yp[r++] = *s.baseline_math_score;
  }
  // Minimum-norm solution: levels seen only among missing rows stay at 0.
  const Eigen::VectorXd beta = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(Xp).solve(yp);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& s = out.students[static_cast<std::size_t>(i)];
    if (s.baseline_math_score) continue;
    s.baseline_math_score = X.row(i).dot(beta);
    out.baseline_imputed[static_cast<std::size_t>(i)] = true;
    ++out.imputed;
  }
  return out;
}

Frame session_frame(const StudyData& data, Outcome outcome) {
  std::unordered_map<std::string, const TutorProfile*> tutors;
  for (const auto& t : data.tutors) tutors[t.tutor_id] = &t;
  std::unordered_map<std::string, std::size_t> student_index;
  for (std::size_t i = 0; i < data.students.size(); ++i) student_index[data.students[i].student_id] = i;
  // With no baseline score at all the column stays NaN, which only
  // covariate-free specifications accept.
  std::optional<ImputedStudents> imputed;
  try {
    imputed = impute_covariates(data.students);
  } catch (const InvalidArgument&) {
  }

  std::vector<double> y, treat, used, baseline, grade_num;
  std::vector<std::string> gender, race, frl, sped, lep, strata, cluster, tutor_id;
  for (const auto& s : data.sessions) {
    const auto v = outcome_value(s, outcome);
    if (!v) continue;
    const auto t = tutors.find(s.tutor_id);
    if (t == tutors.end()) throw InvalidArgument("session " + s.session_id + " names unknown tutor " + s.tutor_id);
    const auto si = student_index.find(s.student_id);
    if (si == student_index.end()) {
      throw InvalidArgument("session " + s.session_id + " names unknown student " + s.student_id);
    }
    const auto& st = imputed ? imputed->students[si->second] : data.students[si->second];
    y.push_back(*v);
    treat.push_back(t->second->arm == Arm::treatment ? 1.0 : 0.0);
    used.push_back(count_uses(s) > 0 ? 1.0 : 0.0);
    baseline.push_back(st.baseline_math_score.value_or(std::nan("")));
    grade_num.push_back(s.grade);
    gender.emplace_back(to_string(st.gender));
    race.emplace_back(to_string(st.race));
    frl.emplace_back(to_string(st.frl));
    sped.emplace_back(to_string(st.sped));
    lep.emplace_back(to_string(st.lep));
    strata.push_back(strata_key(s.school_id, s.grade));
    cluster.push_back(cluster_key(s));
    tutor_id.push_back(s.tutor_id);
  }

  if (outcome == Outcome::participation) {
    std::map<int, std::pair<double, double>> moments;  // grade -> (sum, sumsq)
    std::map<int, std::size_t> counts;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const int g = static_cast<int>(grade_num[i]);
      moments[g].first += y[i];
      moments[g].second += y[i] * y[i];
      ++counts[g];
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
      const int g = static_cast<int>(grade_num[i]);
      const double n = static_cast<double>(counts[g]);
      const double mean = moments[g].first / n;
      const double var = n > 1 ? (moments[g].second - n * mean * mean) / (n - 1) : 0.0;
      y[i] = var > 0 ? (y[i] - mean) / std::sqrt(var) : 0.0;
    }
  }

  Frame f(y.size());
  f.add_numeric("y", std::move(y))
      .add_numeric("treatment", std::move(treat))
      .add_numeric("used", std::move(used))
      .add_numeric("baseline", std::move(baseline))
      .add_numeric("grade", std::move(grade_num))
      .add_categorical("gender", std::move(gender))
      .add_categorical("race", std::move(race))
      .add_categorical("frl", std::move(frl))
      .add_categorical("sped", std::move(sped))
      .add_categorical("lep", std::move(lep))
      .add_categorical("strata", std::move(strata))
      .add_categorical("cluster", std::move(cluster))
      .add_categorical("tutor_id", std::move(tutor_id));
  return f;
}

RegressionSpec session_spec(const AnalysisOptions& opt, const std::string& treatment) {
  RegressionSpec spec;
  spec.outcome = "y";
  spec.treatment = treatment;
  if (opt.covariates) spec.covariates = {"gender", "race", "frl", "sped", "lep", "baseline"};
  if (opt.strata) spec.strata = "strata";
  if (opt.cluster) spec.cluster = "cluster";
  return spec;
}

namespace {

void require_rows(const Frame& f) {
  if (f.rows() == 0) throw InvalidArgument("no sessions in the outcome sample");
}

void add_control_mean(FitResult& r, const Frame& f, const AnalysisOptions& opt) {
  const auto [m, se] = group_mean(f, "y", "treatment", 0.0,
                                  opt.cluster ? std::optional<std::string>("cluster") : std::nullopt);
  r.control_mean = m;
  r.control_mean_se = se;
}

}  // namespace

FitResult itt(const StudyData& data, Outcome outcome, const AnalysisOptions& opt) {
  const Frame f = session_frame(data, outcome);
  require_rows(f);
  auto r = fit_ols(session_spec(opt, "treatment"), f);
  add_control_mean(r, f, opt);
  return r;
}

FitResult tot_2sls(const StudyData& data, Outcome outcome, const AnalysisOptions& opt) {
  const Frame f = session_frame(data, outcome);
  require_rows(f);
  auto r = fit_2sls(session_spec(opt, "used"), "treatment", f);
  add_control_mean(r, f, opt);
  return r;
}

std::vector<int> tercile_assignment(std::span<const double> values, double* cut_low,
                                    double* cut_high) {
  if (values.empty()) throw InvalidArgument("no values to cut into terciles");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double c1 = sorted[(n + 2) / 3 - 1];
  const double c2 = sorted[(2 * n + 2) / 3 - 1];
  if (cut_low) *cut_low = c1;
  if (cut_high) *cut_high = c2;
  std::vector<int> out;
  out.reserve(n);
  for (double v : values) out.push_back(v <= c1 ? 0 : v <= c2 ? 1 : 2);
  return out;
}

HeterogeneityResult heterogeneity_by_tercile(const StudyData& data, Outcome outcome,
                                             Moderator moderator, const AnalysisOptions& opt) {
  Frame f = session_frame(data, outcome);
  require_rows(f);
  std::map<std::string, double> moderator_of;
  for (const auto& t : data.tutors) {
    moderator_of[t.tutor_id] =
        moderator == Moderator::quality_rating ? t.quality_rating : static_cast<double>(t.experience_months);
  }
  // Analysis sample of tutors: those with a session in the frame.
  const auto& tutor_col = f.categorical("tutor_id");
  const std::set<std::string> sample(tutor_col.begin(), tutor_col.end());
  std::vector<std::string> ids(sample.begin(), sample.end());
  std::vector<double> vals;
  for (const auto& id : ids) vals.push_back(moderator_of.at(id));

  HeterogeneityResult out;
  out.moderator = moderator;
  const auto terc = tercile_assignment(vals, &out.cut_low, &out.cut_high);
  std::map<std::string, int> tercile_of;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    tercile_of[ids[i]] = terc[i];
    ++out.terciles[static_cast<std::size_t>(terc[i])].n_tutors;
  }

  const auto& treat = f.numeric("treatment");
  std::vector<std::string> tercile_label(f.rows());
  std::array<std::vector<double>, 3> tx, in;
  for (auto& v : tx) v.assign(f.rows(), 0.0);
  for (auto& v : in) v.assign(f.rows(), 0.0);
  for (std::size_t i = 0; i < f.rows(); ++i) {
    const int k = tercile_of.at(tutor_col[i]);
    tercile_label[i] = "t" + std::to_string(k + 1);
    tx[static_cast<std::size_t>(k)][i] = treat[i];
    in[static_cast<std::size_t>(k)][i] = 1.0;
    ++out.terciles[static_cast<std::size_t>(k)].n_sessions;
  }
  f.add_categorical("tercile", std::move(tercile_label));
  for (int k = 0; k < 3; ++k) {
    f.add_numeric("treatment_x_t" + std::to_string(k + 1), tx[static_cast<std::size_t>(k)]);
    f.add_numeric("in_t" + std::to_string(k + 1), in[static_cast<std::size_t>(k)]);
  }

  RegressionSpec spec = session_spec(opt, "treatment");
  spec.treatment.reset();
  spec.covariates.insert(spec.covariates.begin(),
                         {"treatment_x_t1", "treatment_x_t2", "treatment_x_t3", "tercile"});
  out.fit = fit_ols(spec, f);

  std::array<Eigen::Index, 3> idx{};
  for (int k = 0; k < 3; ++k) {
    const auto name = "treatment_x_t" + std::to_string(k + 1);
    idx[static_cast<std::size_t>(k)] = static_cast<Eigen::Index>(out.fit.index(name));
    auto& te = out.terciles[static_cast<std::size_t>(k)];
    te.tercile = k + 1;
    te.effect = out.fit.at(name);
    // Control mean within the tercile.
    std::vector<bool> keep(f.rows());
    const auto& ink = f.numeric("in_t" + std::to_string(k + 1));
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = ink[i] == 1.0;
    const auto [m, se] = group_mean(f.filter(keep), "y", "treatment", 0.0,
                                    opt.cluster ? std::optional<std::string>("cluster") : std::nullopt);
    te.control_mean = m;
    te.control_mean_se = se;
  }
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(2, out.fit.vcov.cols());
  R(0, idx[0]) = 1;
  R(0, idx[1]) = -1;
  R(1, idx[1]) = 1;
  R(1, idx[2]) = -1;
  Eigen::VectorXd b(static_cast<Eigen::Index>(out.fit.coefficients.size()));
  for (std::size_t j = 0; j < out.fit.coefficients.size(); ++j) {
    b[static_cast<Eigen::Index>(j)] = out.fit.coefficients[j].estimate;
  }
  out.equality_wald = wald_statistic(R, b, out.fit.vcov);
  out.equality_p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(2.0),
                                                            std::max(0.0, out.equality_wald)));
  return out;
}

namespace {

struct StudentTotals {
  std::size_t sessions = 0;
  std::size_t treatment_sessions = 0;
  std::size_t passed = 0;
};

std::map<std::string, StudentTotals> per_student(const StudyData& data) {
  std::unordered_map<std::string, Arm> arm;
  for (const auto& t : data.tutors) arm[t.tutor_id] = t.arm;
  std::map<std::string, StudentTotals> out;
  for (const auto& s : data.sessions) {
    const auto a = arm.find(s.tutor_id);
    if (a == arm.end()) throw InvalidArgument("session " + s.session_id + " names unknown tutor " + s.tutor_id);
    auto& st = out[s.student_id];
    ++st.sessions;
    st.treatment_sessions += a->second == Arm::treatment;
    st.passed += s.exit_ticket_attempted && s.exit_ticket_passed;
  }
  return out;
}

}  // namespace

StudentLevelResult exposure_regression(const StudyData& data) {
  const auto totals = per_student(data);
  const auto imputed = impute_covariates(data.students);
  StudentLevelResult out;
  std::vector<double> y, exposure, baseline;
  std::map<std::string, std::vector<std::string>> cats;
  std::vector<std::string> strata;
  for (const auto& s : imputed.students) {
    const auto t = totals.find(s.student_id);
    if (t == totals.end() || t->second.sessions == 0) {
      ++out.excluded_no_sessions;
      continue;
    }
    if (!s.end_math_score) {
      ++out.excluded_missing_scores;
      continue;
    }
    y.push_back(*s.end_math_score);
    exposure.push_back(static_cast<double>(t->second.treatment_sessions) /
                       static_cast<double>(t->second.sessions));
    baseline.push_back(*s.baseline_math_score);
    for (auto& [k, v] : categorical_covariates(s)) cats[k].push_back(v);
    strata.push_back(strata_key(s.school_id, s.grade));
  }
  Frame f(y.size());
  f.add_numeric("end_score", std::move(y))
      .add_numeric("exposure", std::move(exposure))
      .add_numeric("baseline", std::move(baseline))
      .add_categorical("strata", std::move(strata));
  for (auto& [k, v] : cats) f.add_categorical(k, std::move(v));
  RegressionSpec spec;
  spec.outcome = "end_score";
  spec.treatment = "exposure";
  spec.covariates = {"baseline", "gender", "race", "frl", "sped", "lep"};
  spec.strata = "strata";
  out.fit = fit_ols(spec, f);
  if (out.excluded_no_sessions) {
    out.fit.notes.push_back(std::to_string(out.excluded_no_sessions) + " students without sessions excluded");
  }
  return out;
}

StudentLevelResult exit_ticket_predictive(const StudyData& data) {
  const auto totals = per_student(data);
  StudentLevelResult out;
  std::vector<double> y, rate, baseline;
  for (const auto& s : data.students) {
    const auto t = totals.find(s.student_id);
    if (t == totals.end() || t->second.sessions == 0) {
      ++out.excluded_no_sessions;
      continue;
    }
    if (!s.end_math_score || !s.baseline_math_score) {
      ++out.excluded_missing_scores;
      continue;
    }
    y.push_back(*s.end_math_score);
    rate.push_back(100.0 * static_cast<double>(t->second.passed) / static_cast<double>(t->second.sessions));
    baseline.push_back(*s.baseline_math_score);
  }
  Frame f(y.size());
  f.add_numeric("end_score", std::move(y))
      .add_numeric("pass_rate", std::move(rate))
      .add_numeric("baseline", std::move(baseline));
  RegressionSpec spec;
  spec.outcome = "end_score";
  spec.treatment = "pass_rate";
  spec.covariates = {"baseline"};
  out.fit = fit_ols(spec, f);
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json to_json(const FitResult& r) {
  nlohmann::ordered_json j;
  j["n"] = r.n;
  j["variance"] = r.variance;
  j["n_clusters"] = r.n_clusters;
  j["r_squared"] = r.r_squared;
  j["coefficients"] = nlohmann::ordered_json::array();
  for (const auto& c : r.coefficients) {
    j["coefficients"].push_back(
        {{"name", c.name}, {"estimate", c.estimate}, {"se", c.se}, {"z", c.z}, {"p", c.p}});
  }
  j["control_mean"] = r.control_mean ? nlohmann::ordered_json(*r.control_mean) : nullptr;
  j["control_mean_se"] = r.control_mean_se ? nlohmann::ordered_json(*r.control_mean_se) : nullptr;
  j["first_stage_f"] = r.first_stage_f ? nlohmann::ordered_json(*r.first_stage_f) : nullptr;
  j["weak_instrument"] = r.weak_instrument;
  j["notes"] = r.notes;
  return j;
}

nlohmann::ordered_json to_json(const HeterogeneityResult& r) {
  nlohmann::ordered_json j;
  j["moderator"] = to_string(r.moderator);
  j["cut_low"] = r.cut_low;
  j["cut_high"] = r.cut_high;
  j["terciles"] = nlohmann::ordered_json::array();
  for (const auto& t : r.terciles) {
    j["terciles"].push_back({{"tercile", t.tercile},
                             {"n_tutors", t.n_tutors},
                             {"n_sessions", t.n_sessions},
                             {"effect", t.effect.estimate},
                             {"se", t.effect.se},
                             {"p", t.effect.p},
                             {"control_mean", t.control_mean},
                             {"control_mean_se", t.control_mean_se}});
  }
  j["equality_wald"] = r.equality_wald;
  j["equality_p"] = r.equality_p;
  j["fit"] = to_json(r.fit);
  return j;
}

nlohmann::ordered_json to_json(const StudentLevelResult& r) {
  nlohmann::ordered_json j = to_json(r.fit);
  j["excluded_no_sessions"] = r.excluded_no_sessions;
  j["excluded_missing_scores"] = r.excluded_missing_scores;
  return j;
}

}  // namespace copilot::stats
