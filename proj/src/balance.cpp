#include "copilot/stats/balance.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>
#include <set>

namespace copilot::stats {

namespace {

std::pair<double, double> mean_var(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return {mean, ss / (n - 1)};
}

}  // namespace

WelchTest welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw InvalidArgument("each group needs at least two values");
  WelchTest r;
  r.n_a = a.size();
  r.n_b = b.size();
  const auto [ma, va] = mean_var(a);
  const auto [mb, vb] = mean_var(b);
  r.mean_a = ma;
  r.mean_b = mb;
  const double sa = va / static_cast<double>(a.size());
  const double sb = vb / static_cast<double>(b.size());
  const double se2 = sa + sb;
  if (se2 <= 0.0) {
    r.t = ma == mb ? 0.0 : std::copysign(INFINITY, ma - mb);
    r.df = static_cast<double>(a.size() + b.size() - 2);
    r.p = ma == mb ? 1.0 : 0.0;
    return r;
  }
  r.t = (ma - mb) / std::sqrt(se2);
  r.df = se2 * se2 /
         (sa * sa / static_cast<double>(a.size() - 1) + sb * sb / static_cast<double>(b.size() - 1));
  r.p = 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(r.df), std::fabs(r.t)));
  return r;
}

namespace {

std::vector<BalanceRow> characteristics(std::span<const TutorProfile> tutors,
                                        const std::set<std::string>* only) {
  std::vector<double> fem[2], exp[2], qual[2];
  for (const auto& t : tutors) {
    if (only && !only->count(t.tutor_id)) continue;
    const int g = t.arm == Arm::treatment ? 0 : 1;
    if (t.gender != Gender::missing) fem[g].push_back(t.gender == Gender::female ? 1.0 : 0.0);
    exp[g].push_back(t.experience_months);
    qual[g].push_back(t.quality_rating);
  }
  return {{"female", welch_t_test(fem[0], fem[1])},
          {"experience_months", welch_t_test(exp[0], exp[1])},
          {"quality_rating", welch_t_test(qual[0], qual[1])}};
}

}  // namespace

BalanceReport balance_check(std::span<const TutorProfile> tutors,
                            std::span<const SessionRecord> sessions) {
  BalanceReport r;
  std::set<std::string> active;
  for (const auto& s : sessions) active.insert(s.tutor_id);
  std::vector<double> attrited[2];
  for (const auto& t : tutors) {
    const bool treat = t.arm == Arm::treatment;
    const bool has = active.count(t.tutor_id) > 0;
    (treat ? r.assigned_treatment : r.assigned_control) += 1;
    (treat ? r.analyzed_treatment : r.analyzed_control) += has;
    attrited[treat ? 0 : 1].push_back(has ? 0.0 : 1.0);
  }
  if (r.assigned_treatment < 2 || r.assigned_control < 2) {
    throw InvalidArgument("balance check needs at least two tutors per arm");
  }
  r.attrition_treatment = 1.0 - static_cast<double>(r.analyzed_treatment) / static_cast<double>(r.assigned_treatment);
  r.attrition_control = 1.0 - static_cast<double>(r.analyzed_control) / static_cast<double>(r.assigned_control);
  r.assigned = characteristics(tutors, nullptr);
  r.analyzed = characteristics(tutors, &active);
  r.attrition = {"attrition", welch_t_test(attrited[0], attrited[1])};
  return r;
}

nlohmann::ordered_json to_json(const BalanceReport& r) {
  auto row = [](const BalanceRow& b) {
    return nlohmann::ordered_json{{"variable", b.variable},
                                  {"treatment_mean", b.test.mean_a},
                                  {"control_mean", b.test.mean_b},
                                  {"difference", b.test.mean_a - b.test.mean_b},
                                  {"t", b.test.t},
                                  {"df", b.test.df},
                                  {"p", b.test.p},
                                  {"n_treatment", b.test.n_a},
                                  {"n_control", b.test.n_b}};
  };
  nlohmann::ordered_json j;
  j["assigned_treatment"] = r.assigned_treatment;
  j["assigned_control"] = r.assigned_control;
  j["analyzed_treatment"] = r.analyzed_treatment;
  j["analyzed_control"] = r.analyzed_control;
  j["attrition_treatment"] = r.attrition_treatment;
  j["attrition_control"] = r.attrition_control;
  j["assigned"] = nlohmann::ordered_json::array();
  for (const auto& b : r.assigned) j["assigned"].push_back(row(b));
  j["analyzed"] = nlohmann::ordered_json::array();
  for (const auto& b : r.analyzed) j["analyzed"].push_back(row(b));
  j["attrition"] = row(r.attrition);
  return j;
}

}  // namespace copilot::stats
