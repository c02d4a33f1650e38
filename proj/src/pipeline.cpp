#include "copilot/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "copilot/formats.hpp"
#include "copilot/harness.hpp"

namespace copilot::harness {

UsageSummary usage_summary(const StudyData& data) {
  std::unordered_map<std::string, Arm> arm;
  for (const auto& t : data.tutors) arm[t.tutor_id] = t.arm;
  UsageSummary u;
  u.histogram.assign(kHistogramCap + 1, 0);
  for (const auto& s : data.sessions) {
    for (const auto& e : s.copilot_uses) {
      u.generation_calls += e.action == CopilotAction::activate ||
                            e.action == CopilotAction::strategy_switch ||
                            e.action == CopilotAction::regenerate;
    }
    const auto a = arm.find(s.tutor_id);
    if (a == arm.end()) throw InvalidArgument("session " + s.session_id + " names unknown tutor " + s.tutor_id);
    const auto uses = count_uses(s);
    if (a->second == Arm::control) {
      u.control_sessions_with_uses += uses > 0;
      continue;
    }
    ++u.treatment_sessions;
    u.sessions_used += uses > 0;
    u.total_uses += uses;
    ++u.histogram[std::min(uses, kHistogramCap)];
  }
  if (u.treatment_sessions) {
    u.share_used = static_cast<double>(u.sessions_used) / static_cast<double>(u.treatment_sessions);
    u.mean_uses_all = static_cast<double>(u.total_uses) / static_cast<double>(u.treatment_sessions);
  }
  if (u.sessions_used) u.mean_uses_used = static_cast<double>(u.total_uses) / static_cast<double>(u.sessions_used);
  return u;
}

namespace {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

constexpr std::array<Outcome, 4> kOutcomes{Outcome::passed_unconditional, Outcome::passed_conditional,
                                           Outcome::attempted, Outcome::participation};

}  // namespace

PipelineReport run_pipeline(const StudyData& data, const PipelineOptions& opt) {
  PipelineReport r;
  for (const auto o : kOutcomes) {
    r.itt.emplace_back(o, stage("itt", [&] { return stats::itt(data, o, opt.analysis); }));
  }
  for (const auto o : kOutcomes) {
    r.tot.emplace_back(o, stage("tot", [&] { return stats::tot_2sls(data, o, opt.analysis); }));
  }
  for (const auto m : {stats::Moderator::quality_rating, stats::Moderator::experience_months}) {
    r.heterogeneity.push_back(stage("heterogeneity", [&] {
      return stats::heterogeneity_by_tercile(data, Outcome::passed_unconditional, m, opt.analysis);
    }));
  }
  r.balance = stage("balance", [&] { return stats::balance_check(data.tutors, data.sessions); });

  // Student-level regressions need end-of-year scores; a study without
  // them simply skips these.
  bool has_scores = false;
  for (const auto& s : data.students) has_scores |= s.end_math_score.has_value();
  if (has_scores) {
    r.exposure = stage("exposure", [&] { return stats::exposure_regression(data); });
    r.exit_ticket_predictive = stage("exit_ticket_predictive", [&] { return stats::exit_ticket_predictive(data); });
  } else {
    r.notes.push_back("no end-of-year scores: student-level regressions skipped");
  }

  bool has_text = false;
  for (const auto& s : data.sessions) has_text |= !s.messages.empty();
  if (!opt.models) {
    r.notes.push_back("no classifier models: label log-odds skipped");
  } else if (!has_text) {
    r.notes.push_back("no transcripts: label log-odds skipped");
  } else {
    r.labels = stage("label", [&] { return label_sessions(*opt.models, data.sessions); });
    if (r.labels->labels.empty()) {
      r.notes.push_back("no label passed the F1 gate: log-odds skipped");
    } else {
      r.log_odds = stage("fightin_words", [&] {
        return stats::fightin_words_by_arm(*r.labels, data.tutors, opt.prior_scale);
      });
    }
    for (const auto& m : opt.models->models()) {
      if (!m.passes_gate()) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "label %s excluded: test F1 %.3f below gate %.2f", m.label.c_str(),
                      m.test_f1, kF1Gate);
        r.notes.push_back(buf);
      }
    }
  }

  r.usage = stage("usage", [&] { return usage_summary(data); });
  r.cost = stage("cost", [&] {
    CostSummary c;
    c.generation_calls = r.usage.generation_calls;
    c.cost_per_call = opt.cost_per_call;
    c.total_cost = opt.cost_per_call * static_cast<double>(c.generation_calls);
    c.treatment_tutors = r.balance.assigned_treatment;
    c.months = opt.months;
    c.annual_per_tutor = annualize_cost(c.total_cost, c.treatment_tutors, c.months);
    return c;
  });
  return r;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string est_se(double est, double se) { return fmt("%.3f", est) + " (" + fmt("%.3f", se) + ")"; }

std::string stars(double p) { return p < 0.001 ? "***" : p < 0.01 ? "**" : p < 0.05 ? "*" : ""; }

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

constexpr std::array<std::string_view, 4> kHeads{"Exit Ticket Passed", "Passed (Cond.)", "Attempted",
                                                  "Participation"};

}  // namespace

std::string format_report(const PipelineReport& r) {
  std::ostringstream o;
  constexpr std::size_t w0 = 26, w = 22;
  o << "Panel A. Session outcomes\n";
  o << pad("", w0);
  for (auto h : kHeads) o << pad(std::string(h), w);
  o << '\n';
  o << pad("Treatment (ITT)", w0);
  for (const auto& [_, f] : r.itt) {
    const auto& c = f.at("treatment");
    o << pad(est_se(c.estimate, c.se) + stars(c.p), w);
  }
  o << '\n' << pad("  p-value", w0);
  for (const auto& [_, f] : r.itt) o << pad(fmt("%.4f", f.at("treatment").p), w);
  o << '\n' << pad("Control mean", w0);
  for (const auto& [_, f] : r.itt) {
    o << pad(f.control_mean ? est_se(*f.control_mean, f.control_mean_se.value_or(0.0)) : "-", w);
  }
  o << '\n' << pad("Used copilot (TOT)", w0);
  for (const auto& [_, f] : r.tot) {
    const auto& c = f.at("used");
    o << pad(est_se(c.estimate, c.se) + stars(c.p), w);
  }
  o << '\n' << pad("  first-stage F", w0);
  for (const auto& [_, f] : r.tot) o << pad(f.first_stage_f ? fmt("%.1f", *f.first_stage_f) : "-", w);
  o << '\n' << pad("N sessions", w0);
  for (const auto& [_, f] : r.itt) o << pad(std::to_string(f.n), w);
  o << '\n' << pad("Clusters", w0);
  for (const auto& [_, f] : r.itt) o << pad(f.n_clusters ? std::to_string(f.n_clusters) : "-", w);
  o << '\n' << pad("Variance", w0);
  for (const auto& [_, f] : r.itt) o << pad(f.variance, w);
  o << "\nStandard errors in parentheses. * p<0.05, ** p<0.01, *** p<0.001.\n"
       "Participation standardized within grade.\n\n";

  o << "Heterogeneity by tutor tercile (exit ticket passed)\n";
  for (const auto& h : r.heterogeneity) {
    o << "  " << to_string(h.moderator) << " (cuts " << fmt("%.3g", h.cut_low) << ", " << fmt("%.3g", h.cut_high)
      << ")\n";
    for (const auto& t : h.terciles) {
      o << "    " << pad("tercile " + std::to_string(t.tercile), 14)
        << pad(est_se(t.effect.estimate, t.effect.se) + stars(t.effect.p), w)
        << "control " << pad(est_se(t.control_mean, t.control_mean_se), w) << "tutors " << t.n_tutors
        << ", sessions " << t.n_sessions << '\n';
    }
    o << "    equality Wald " << fmt("%.3f", h.equality_wald) << " (2 df), p = " << fmt("%.4f", h.equality_p)
      << '\n';
  }

  o << "\nTutor balance and attrition\n";
  o << "  assigned " << r.balance.assigned_treatment << " treatment / " << r.balance.assigned_control
    << " control; analyzed " << r.balance.analyzed_treatment << " / " << r.balance.analyzed_control
    << "; attrition " << fmt("%.1f%%", 100 * r.balance.attrition_treatment) << " / "
    << fmt("%.1f%%", 100 * r.balance.attrition_control) << " (p = " << fmt("%.3f", r.balance.attrition.test.p)
    << ")\n";
  for (const auto* rows : {&r.balance.assigned, &r.balance.analyzed}) {
    o << (rows == &r.balance.assigned ? "  assigned sample\n" : "  analyzed sample\n");
    for (const auto& b : *rows) {
      o << "    " << pad(b.variable, 20) << pad(fmt("%.3f", b.test.mean_a), 10) << pad(fmt("%.3f", b.test.mean_b), 10)
        << "p = " << fmt("%.3f", b.test.p) << '\n';
    }
  }

  if (r.exit_ticket_predictive) {
    const auto& c = r.exit_ticket_predictive->fit.at("pass_rate");
    o << "\nEnd-of-year score on exit-ticket pass rate (pct): " << est_se(c.estimate, c.se) << stars(c.p)
      << ", n = " << r.exit_ticket_predictive->fit.n << '\n';
  }
  if (r.exposure) {
    const auto& c = r.exposure->fit.at("exposure");
    o << "End-of-year score on treatment exposure: " << est_se(c.estimate, c.se) << stars(c.p)
      << ", n = " << r.exposure->fit.n << '\n';
  }

  if (r.log_odds) {
    o << "\nStrategy log-odds, treatment vs control (prior scale " << fmt("%.3g", r.log_odds->prior_scale) << ")\n";
    for (const auto& row : r.log_odds->rows) {
      o << "  " << pad(row.label, 26) << pad(fmt("%+.2f", row.z), 9) << "treatment " << pad(fmt("%.0f", row.y_a), 9)
        << "control " << fmt("%.0f", row.y_b) << '\n';
    }
  }

  const auto& u = r.usage;
  o << "\nCopilot usage in treatment sessions\n";
  o << "  sessions " << u.treatment_sessions << ", with a use " << u.sessions_used << " ("
    << fmt("%.1f%%", 100 * u.share_used) << ")\n";
  o << "  uses per session " << fmt("%.2f", u.mean_uses_all) << " including zeros, "
    << fmt("%.2f", u.mean_uses_used) << " excluding zeros\n";
  std::size_t peak = 1;
  for (auto h : u.histogram) peak = std::max(peak, h);
  for (std::size_t k = 0; k < u.histogram.size(); ++k) {
    const auto bar = static_cast<std::size_t>(50.0 * static_cast<double>(u.histogram[k]) / static_cast<double>(peak));
    o << "  " << pad(k == kHistogramCap ? std::to_string(k) + "+" : std::to_string(k), 5)
      << pad(std::to_string(u.histogram[k]), 7) << std::string(bar, '#') << '\n';
  }
  if (u.control_sessions_with_uses) {
    o << "  control sessions with copilot events: " << u.control_sessions_with_uses << '\n';
  }

  o << "\nCost: " << r.cost.generation_calls << " generation calls x " << fmt("%.2f", r.cost.cost_per_call) << " = "
    << fmt("%.2f", r.cost.total_cost) << "; " << fmt("%.2f", r.cost.annual_per_tutor) << " per tutor per year ("
    << r.cost.treatment_tutors << " treatment tutors, " << r.cost.months << " months)\n";

  for (const auto& n : r.notes) o << "note: " << n << '\n';
  return o.str();
}

void write_report_csv(std::ostream& out, const PipelineReport& r) {
  out << "section,name,outcome,estimate,se,p,n\n";
  auto row = [&](std::string_view section, std::string_view name, std::string_view outcome, double est, double se,
                 double p, std::size_t n) {
    out << section << ',' << csv_field(name) << ',' << outcome << ',' << fmt("%.10g", est) << ','
        << fmt("%.10g", se) << ',' << fmt("%.10g", p) << ',' << n << '\n';
  };
  for (const auto& [o, f] : r.itt) {
    const auto& c = f.at("treatment");
    row("itt", "treatment", to_string(o), c.estimate, c.se, c.p, f.n);
    if (f.control_mean) row("itt", "control_mean", to_string(o), *f.control_mean, f.control_mean_se.value_or(0), NAN, f.n);
  }
  for (const auto& [o, f] : r.tot) {
    const auto& c = f.at("used");
    row("tot", "used", to_string(o), c.estimate, c.se, c.p, f.n);
  }
  for (const auto& h : r.heterogeneity) {
    for (const auto& t : h.terciles) {
      row("heterogeneity", std::string(to_string(h.moderator)) + "_t" + std::to_string(t.tercile),
          "passed_unconditional", t.effect.estimate, t.effect.se, t.effect.p, t.n_sessions);
    }
    row("heterogeneity", std::string(to_string(h.moderator)) + "_equality", "passed_unconditional", h.equality_wald,
        NAN, h.equality_p, h.fit.n);
  }
  for (const auto& b : r.balance.analyzed) {
    row("balance", b.variable, "", b.test.mean_a - b.test.mean_b, NAN, b.test.p, b.test.n_a + b.test.n_b);
  }
  row("balance", "attrition", "", r.balance.attrition.test.mean_a - r.balance.attrition.test.mean_b, NAN,
      r.balance.attrition.test.p, r.balance.attrition.test.n_a + r.balance.attrition.test.n_b);
  if (r.exit_ticket_predictive) {
    const auto& c = r.exit_ticket_predictive->fit.at("pass_rate");
    row("student", "pass_rate", "end_score", c.estimate, c.se, c.p, r.exit_ticket_predictive->fit.n);
  }
  if (r.exposure) {
    const auto& c = r.exposure->fit.at("exposure");
    row("student", "exposure", "end_score", c.estimate, c.se, c.p, r.exposure->fit.n);
  }
  if (r.log_odds) {
    for (const auto& l : r.log_odds->rows) {
      row("log_odds", l.label, "", l.z, std::sqrt(l.variance), stats::normal_two_sided_p(l.z), static_cast<std::size_t>(l.y_a + l.y_b));
    }
  }
  for (std::size_t k = 0; k < r.usage.histogram.size(); ++k) {
    row("usage", "uses_" + std::to_string(k) + (k == kHistogramCap ? "+" : ""), "", static_cast<double>(r.usage.histogram[k]),
        NAN, NAN, r.usage.treatment_sessions);
  }
  row("usage", "share_used", "", r.usage.share_used, NAN, NAN, r.usage.treatment_sessions);
  row("usage", "mean_uses_all", "", r.usage.mean_uses_all, NAN, NAN, r.usage.treatment_sessions);
  row("usage", "mean_uses_used", "", r.usage.mean_uses_used, NAN, NAN, r.usage.sessions_used);
  row("cost", "total", "", r.cost.total_cost, NAN, NAN, r.cost.generation_calls);
  row("cost", "annual_per_tutor", "", r.cost.annual_per_tutor, NAN, NAN, r.cost.treatment_tutors);
}

nlohmann::ordered_json to_json(const PipelineReport& r) {
  nlohmann::ordered_json j;
  for (const auto& [o, f] : r.itt) j["itt"][std::string(to_string(o))] = stats::to_json(f);
  for (const auto& [o, f] : r.tot) j["tot"][std::string(to_string(o))] = stats::to_json(f);
  j["heterogeneity"] = nlohmann::ordered_json::array();
  for (const auto& h : r.heterogeneity) j["heterogeneity"].push_back(stats::to_json(h));
  j["balance"] = stats::to_json(r.balance);
  j["exposure"] = r.exposure ? stats::to_json(*r.exposure) : nlohmann::ordered_json(nullptr);
  j["exit_ticket_predictive"] =
      r.exit_ticket_predictive ? stats::to_json(*r.exit_ticket_predictive) : nlohmann::ordered_json(nullptr);
  j["log_odds"] = r.log_odds ? stats::to_json(*r.log_odds) : nlohmann::ordered_json(nullptr);
  const auto& u = r.usage;
  j["usage"] = {{"treatment_sessions", u.treatment_sessions},
                {"sessions_used", u.sessions_used},
                {"share_used", u.share_used},
                {"mean_uses_all", u.mean_uses_all},
                {"mean_uses_used", u.mean_uses_used},
                {"histogram", u.histogram},
                {"control_sessions_with_uses", u.control_sessions_with_uses},
                {"generation_calls", u.generation_calls}};
  j["cost"] = {{"generation_calls", r.cost.generation_calls}, {"cost_per_call", r.cost.cost_per_call},
               {"total_cost", r.cost.total_cost},             {"treatment_tutors", r.cost.treatment_tutors},
               {"months", r.cost.months},                     {"annual_per_tutor", r.cost.annual_per_tutor}};
  j["notes"] = r.notes;
  return j;
}

}  // namespace copilot::harness
