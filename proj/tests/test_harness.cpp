#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "copilot/harness.hpp"
#include "copilot/pipeline.hpp"
#include "copilot/templates.hpp"
#include "doctest.h"

using namespace copilot;
using namespace copilot::harness;

namespace {

HarnessConfig small_config() {
  HarnessConfig c;
  c.n_tutors_treatment = 20;
  c.n_tutors_control = 22;
  c.n_students = 60;
  c.sessions_per_student = 4;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("config validation and JSON") {
    HarnessConfig c;
    CHECK_NOTHROW(validate(c));
    CHECK(c.n_sessions() == 4136);
    auto bad = c;
    bad.base_pass_rate = 0.99;
    CHECK_THROWS_AS(validate(bad), InvalidArgument);
    bad = c;
    bad.usage_probability = 1.5;
    CHECK_THROWS_AS(validate(bad), InvalidArgument);
    bad = c;
    bad.n_tutors_control = 1;
    CHECK_THROWS_AS(validate(bad), InvalidArgument);

    c.tercile_effects = std::array<double, 3>{0.09, 0.04, 0.0};
    c.messages_per_session = 50;
    const auto back = config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(config_from_json(nlohmann::ordered_json::object()).seed == 1);
    CHECK_THROWS_AS(config_from_json({{"n_tutor", 3}}), InvalidArgument);
  }

  TEST_CASE("default rates average to the planted frequencies") {
    const auto t = default_treatment_rates(), c = default_control_rates();
    const double want[] = {0.02, 0.05, 0.09, 0.01, 0.09, 0.11, 0.12};
    for (std::size_t i = 0; i < kStrategyCount; ++i) CHECK((t[i] + c[i]) / 2 == doctest::Approx(want[i]));
  }

  TEST_CASE("full-size default structure") {
    HarnessConfig c;
    const auto trial = generate_trial(c);
    CHECK(trial.data.sessions.size() == 4136);
    CHECK(trial.data.tutors.size() == 879);
    std::map<std::string, Arm> arm;
    for (const auto& t : trial.data.tutors) arm[t.tutor_id] = t.arm;
    std::set<std::string> active_t, active_c;
    std::map<int, std::size_t> per_grade;
    std::map<std::string, int> grade_of;
    for (const auto& s : trial.data.students) grade_of[s.student_id] = s.grade;
    for (const auto& s : trial.data.sessions) {
      (arm.at(s.tutor_id) == Arm::treatment ? active_t : active_c).insert(s.tutor_id);
      ++per_grade[grade_of.at(s.student_id)];
      CHECK(s.grade == grade_of.at(s.student_id));
    }
    CHECK(active_t.size() == 386);
    CHECK(active_c.size() == 396);
    for (std::size_t g = 0; g < kGrades.size(); ++g) CHECK(per_grade[kGrades[g]] == kGradeSessions[g]);
    for (std::size_t i = 0; i < trial.data.sessions.size(); ++i) {
      const auto& s = trial.data.sessions[i];
      CHECK(trial.used[i] == (count_uses(s) > 0));
      if (arm.at(s.tutor_id) == Arm::control) CHECK(s.copilot_uses.empty());
    }
  }

  TEST_CASE("deterministic by seed") {
    auto c = small_config();
    c.messages_per_session = 30;
    const auto a = generate_trial(c), b = generate_trial(c);
    CHECK(a.data.sessions == b.data.sessions);
    CHECK(a.data.students == b.data.students);
    CHECK(a.truth == b.truth);
    c.seed = 10;
    CHECK_FALSE(generate_trial(c).data.sessions == a.data.sessions);
  }

  TEST_CASE("transcripts: truth aligned, names redacted from copilot context") {
    auto c = small_config();
    c.messages_per_session = 60;
    c.usage_probability = 0.8;
    const auto trial = generate_trial(c);
    REQUIRE(trial.truth.size() == trial.data.sessions.size());
    std::size_t tutor_msgs = 0;
    for (std::size_t i = 0; i < trial.data.sessions.size(); ++i) {
      const auto& s = trial.data.sessions[i];
      CHECK_NOTHROW(validate(s));
      REQUIRE(trial.truth[i].size() == s.messages.size());
      for (std::size_t m = 0; m < s.messages.size(); ++m) {
        if (s.messages[m].sender == Sender::student) CHECK(trial.truth[i][m] == 0);
        else ++tutor_msgs;
      }
      for (const auto& e : s.copilot_uses) {
        CHECK(e.context_snapshot.size() <= kContextWindow);
        for (const auto& m : e.context_snapshot) CHECK_FALSE(contains_roster_name(m.text, trial.roster));
      }
    }
    CHECK(tutor_msgs > 0);
    const auto sample = sample_labeled(trial, 200, 1);
    CHECK(sample.size() == 200);
    for (const auto& u : sample) CHECK(u.context.size() <= kContextWindow);
    const double f = true_frequency(trial, "give_answer");
    CHECK(f > 0.0);
    CHECK(f < 0.3);
  }

  TEST_CASE("label bits") {
    CHECK(label_set(0).empty());
    const auto s = label_set(static_cast<std::uint16_t>(1u << 3 | 1u << 8));
    CHECK(s == std::set<std::string>{"ask_retry", "start_problem"});
  }

  TEST_CASE("perfect compliance makes used equal treatment") {
    auto c = small_config();
    c.usage_probability = 1.0;
    const auto trial = generate_trial(c);
    std::map<std::string, Arm> arm;
    for (const auto& t : trial.data.tutors) arm[t.tutor_id] = t.arm;
    for (std::size_t i = 0; i < trial.data.sessions.size(); ++i) {
      CHECK(trial.used[i] == (arm.at(trial.data.sessions[i].tutor_id) == Arm::treatment));
    }
  }

  TEST_CASE("annualized cost") {
    CHECK(annualize_cost(1419.66, 429, 2) == doctest::Approx(1419.66 / 429 / 2 * 12));
    CHECK(annualize_cost(0, 10, 2) == 0);
    CHECK_THROWS_AS(annualize_cost(1, 0, 2), InvalidArgument);
  }

  TEST_CASE("trial directory round trip") {
    auto c = small_config();
    c.messages_per_session = 30;
    c.labeled_sample = 100;
    const auto trial = generate_trial(c);
    const auto dir = std::filesystem::temp_directory_path() / "copilot_trial_rt";
    std::filesystem::remove_all(dir);
    write_trial(dir, trial);
    const auto files = read_trial(dir);
    CHECK(files.data.sessions == trial.data.sessions);
    CHECK(files.data.tutors == trial.data.tutors);
    CHECK(files.data.students == trial.data.students);
    CHECK(files.labeled_sample.size() == 100);
    CHECK(files.roster.entries().size() == trial.roster.entries().size());
    CHECK(to_json(files.config) == to_json(trial.config));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("templates fill placeholders") {
    Fill f{3, 4, 7, "ratios", "Ana"};
    CHECK(fill_template("{n}+{m}={k} in {topic}, {student} {x}", f) == "3+4=7 in ratios, Ana {x}");
    for (auto l : all_values<StrategyLabel>()) CHECK(strategy_templates(l).size() == 20);
  }
}

TEST_SUITE("pipeline") {
  TEST_CASE("report without models") {
    auto c = small_config();
    c.n_students = 200;
    const auto trial = generate_trial(c);
    const auto r = run_pipeline(trial.data);
    CHECK(r.itt.size() == 4);
    CHECK(r.tot.size() == 4);
    CHECK(r.heterogeneity.size() == 2);
    CHECK_FALSE(r.log_odds.has_value());
    CHECK_FALSE(r.notes.empty());
    CHECK(r.usage.treatment_sessions > 0);
    CHECK(r.usage.control_sessions_with_uses == 0);
    const auto text = format_report(r);
    CHECK(text.find("Exit Ticket Passed") != std::string::npos);
    std::ostringstream csv;
    write_report_csv(csv, r);
    CHECK(csv.str().rfind("section,name,outcome,estimate,se,p,n", 0) == 0);
    CHECK(to_json(r).contains("itt"));
  }

  TEST_CASE("usage summary counts") {
    StudyData d;
    d.tutors = {{"T1", Gender::female, 1, 0, Arm::treatment}, {"T2", Gender::male, 1, 0, Arm::control}};
    SessionRecord a, b, e;
    a.session_id = "a";
    a.tutor_id = "T1";
    CopilotUseEvent act;
    act.action = CopilotAction::activate;
    CopilotUseEvent regen;
    regen.action = CopilotAction::regenerate;
    a.copilot_uses = {act, regen, act};
    b.session_id = "b";
    b.tutor_id = "T1";
    e.session_id = "e";
    e.tutor_id = "T2";
    d.sessions = {a, b, e};
    const auto u = usage_summary(d);
    CHECK(u.treatment_sessions == 2);
    CHECK(u.sessions_used == 1);
    CHECK(u.total_uses == 2);
    CHECK(u.share_used == doctest::Approx(0.5));
    CHECK(u.mean_uses_all == doctest::Approx(1.0));
    CHECK(u.mean_uses_used == doctest::Approx(2.0));
    CHECK(u.generation_calls == 3);
    CHECK(u.histogram[0] == 1);
    CHECK(u.histogram[2] == 1);
  }

  TEST_CASE("stage failures name the stage") {
    auto c = small_config();
    auto trial = generate_trial(c);
    trial.data.sessions[0].tutor_id = "nobody";
    try {
      run_pipeline(trial.data);
      FAIL("expected StageError");
    } catch (const StageError& e) {
      CHECK(e.stage() == "itt");
      CHECK(std::string(e.what()).rfind("stage itt: ", 0) == 0);
    }
  }

  TEST_CASE("misassignment is flagged") {
    auto c = small_config();
    c.n_students = 200;
    c.inject_misassignment = true;
    const auto trial = generate_trial(c);
    const auto r = run_pipeline(trial.data);
    CHECK(r.usage.control_sessions_with_uses > 0);
  }
}
