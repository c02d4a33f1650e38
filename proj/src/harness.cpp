#include "copilot/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <unordered_map>

#include "copilot/engine.hpp"
#include "copilot/formats.hpp"
#include "copilot/templates.hpp"

namespace copilot::harness {

// Indexed by StrategyLabel: prompt_explain, ask_guiding_question,
// affirm_correct_attempt, ask_retry, give_answer, give_solution_strategy,
// generic_encouragement. The two arms average to 2/5/9/1/9/11/12%.
StrategyRates default_treatment_rates() { return {0.026, 0.062, 0.102, 0.010, 0.080, 0.110, 0.108}; }
StrategyRates default_control_rates() { return {0.014, 0.038, 0.078, 0.010, 0.100, 0.110, 0.132}; }

std::size_t HarnessConfig::n_sessions() const {
  return static_cast<std::size_t>(std::llround(static_cast<double>(n_students) * sessions_per_student));
}

namespace {

void require_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument(std::string(name) + " must be in [0, 1]");
}

}  // namespace

void validate(const HarnessConfig& c) {
  require_probability(c.attrition_treatment, "attrition_treatment");
  require_probability(c.attrition_control, "attrition_control");
  require_probability(c.base_pass_rate, "base_pass_rate");
  require_probability(c.usage_probability, "usage_probability");
  require_probability(c.attempt_rate, "attempt_rate");
  require_probability(c.baseline_missing_rate, "baseline_missing_rate");
  require_probability(c.end_missing_rate, "end_missing_rate");
  require_probability(c.exit_ticket_label_rate, "exit_ticket_label_rate");
  auto effect_ok = [&](double e, const char* name) {
    if (!std::isfinite(e)) throw InvalidArgument(std::string(name) + " must be finite");
    require_probability(c.base_pass_rate + e, (std::string("base_pass_rate + ") + name).c_str());
  };
  effect_ok(c.itt_effect, "itt_effect");
  if (c.late_effect) effect_ok(*c.late_effect, "late_effect");
  if (c.tercile_effects) {
    for (double e : *c.tercile_effects) effect_ok(e, "tercile effect");
  }
  for (const auto* rates : {&c.treatment_rates, &c.control_rates}) {
    double sum = 0.0;
    for (double r : *rates) {
      require_probability(r, "strategy rate");
      sum += r;
    }
    if (sum > 1.0) throw InvalidArgument("strategy rates of an arm sum above 1");
  }
  if (c.n_tutors_treatment < 2 || c.n_tutors_control < 2) {
    throw InvalidArgument("need at least two tutors per arm");
  }
  const auto kept_t = c.n_tutors_treatment - static_cast<std::size_t>(std::llround(c.attrition_treatment * c.n_tutors_treatment));
  const auto kept_c = c.n_tutors_control - static_cast<std::size_t>(std::llround(c.attrition_control * c.n_tutors_control));
  if (kept_t < 1 || kept_c < 1) throw InvalidArgument("attrition leaves an arm without tutors");
  if (c.n_students < kGrades.size()) throw InvalidArgument("need at least one student per grade");
  if (!(c.sessions_per_student > 0.0)) throw InvalidArgument("sessions_per_student must be positive");
  if (c.n_sessions() < kept_t + kept_c) {
    throw InvalidArgument("fewer sessions than retained tutors");
  }
  if (c.tutors_per_student < 1) throw InvalidArgument("tutors_per_student must be at least 1");
  if (!(c.mean_uses_when_used >= 1.0)) throw InvalidArgument("mean_uses_when_used must be at least 1");
  if (!(c.student_sd >= 0.0) || !(c.participation_sd >= 0.0) || !(c.baseline_sd >= 0.0) ||
      !(c.score_noise_sd >= 0.0)) {
    throw InvalidArgument("standard deviations must be non-negative");
  }
  if (c.messages_per_session != 0 && c.messages_per_session < 12) {
    throw InvalidArgument("messages_per_session must be 0 or at least 12");
  }
  if (c.inject_misassignment &&
      (c.misassigned_tutors < 1 || c.misassigned_sessions < c.misassigned_tutors)) {
    throw InvalidArgument("misassignment needs at least one session per misassigned tutor");
  }
  if (!(c.cost_per_call >= 0.0)) throw InvalidArgument("cost_per_call must be non-negative");
  if (c.study_months < 1) throw InvalidArgument("study_months must be at least 1");
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::ordered_json to_json(const HarnessConfig& c) {
  nlohmann::ordered_json j;
  j["n_tutors_treatment"] = c.n_tutors_treatment;
  j["n_tutors_control"] = c.n_tutors_control;
  j["attrition_treatment"] = c.attrition_treatment;
  j["attrition_control"] = c.attrition_control;
  j["n_students"] = c.n_students;
  j["sessions_per_student"] = c.sessions_per_student;
  j["tutors_per_student"] = c.tutors_per_student;
  j["base_pass_rate"] = c.base_pass_rate;
  j["itt_effect"] = c.itt_effect;
  j["late_effect"] = c.late_effect ? nlohmann::ordered_json(*c.late_effect) : nullptr;
  j["tercile_effects"] = c.tercile_effects ? nlohmann::ordered_json(*c.tercile_effects) : nullptr;
  j["tercile_moderator"] = to_string(c.tercile_moderator);
  j["student_sd"] = c.student_sd;
  j["attempt_rate"] = c.attempt_rate;
  j["usage_probability"] = c.usage_probability;
  j["mean_uses_when_used"] = c.mean_uses_when_used;
  j["participation_mean"] = c.participation_mean;
  j["participation_sd"] = c.participation_sd;
  j["baseline_mean"] = c.baseline_mean;
  j["baseline_sd"] = c.baseline_sd;
  j["baseline_missing_rate"] = c.baseline_missing_rate;
  j["end_missing_rate"] = c.end_missing_rate;
  j["score_intercept"] = c.score_intercept;
  j["score_baseline_coef"] = c.score_baseline_coef;
  j["score_pass_rate_coef"] = c.score_pass_rate_coef;
  j["score_exposure_effect"] = c.score_exposure_effect;
  j["score_noise_sd"] = c.score_noise_sd;
  j["messages_per_session"] = c.messages_per_session;
  auto rates = [](const StrategyRates& r) {
    nlohmann::ordered_json o;
    for (std::size_t i = 0; i < kStrategyCount; ++i) o[std::string(EnumNames<StrategyLabel>::names[i])] = r[i];
    return o;
  };
  j["treatment_rates"] = rates(c.treatment_rates);
  j["control_rates"] = rates(c.control_rates);
  j["exit_ticket_label_rate"] = c.exit_ticket_label_rate;
  j["labeled_sample"] = c.labeled_sample;
  j["inject_misassignment"] = c.inject_misassignment;
  j["misassigned_sessions"] = c.misassigned_sessions;
  j["misassigned_tutors"] = c.misassigned_tutors;
  j["cost_per_call"] = c.cost_per_call;
  j["study_months"] = c.study_months;
  j["seed"] = c.seed;
  return j;
}

HarnessConfig config_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw InvalidArgument("harness config must be a JSON object");
  HarnessConfig c;
  const auto defaults = to_json(c);
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw InvalidArgument("unknown harness config key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("n_tutors_treatment", c.n_tutors_treatment);
    get("n_tutors_control", c.n_tutors_control);
    get("attrition_treatment", c.attrition_treatment);
    get("attrition_control", c.attrition_control);
    get("n_students", c.n_students);
    get("sessions_per_student", c.sessions_per_student);
    get("tutors_per_student", c.tutors_per_student);
    get("base_pass_rate", c.base_pass_rate);
    get("itt_effect", c.itt_effect);
    if (j.contains("late_effect") && !j.at("late_effect").is_null()) {
      c.late_effect = j.at("late_effect").get<double>();
    }
    if (j.contains("tercile_effects") && !j.at("tercile_effects").is_null()) {
      c.tercile_effects = j.at("tercile_effects").get<std::array<double, 3>>();
    }
    if (j.contains("tercile_moderator")) {
      c.tercile_moderator = parse_enum<stats::Moderator>(j.at("tercile_moderator").get<std::string>());
    }
    get("student_sd", c.student_sd);
    get("attempt_rate", c.attempt_rate);
    get("usage_probability", c.usage_probability);
    get("mean_uses_when_used", c.mean_uses_when_used);
    get("participation_mean", c.participation_mean);
    get("participation_sd", c.participation_sd);
    get("baseline_mean", c.baseline_mean);
    get("baseline_sd", c.baseline_sd);
    get("baseline_missing_rate", c.baseline_missing_rate);
    get("end_missing_rate", c.end_missing_rate);
    get("score_intercept", c.score_intercept);
    get("score_baseline_coef", c.score_baseline_coef);
    get("score_pass_rate_coef", c.score_pass_rate_coef);
    get("score_exposure_effect", c.score_exposure_effect);
    get("score_noise_sd", c.score_noise_sd);
    get("messages_per_session", c.messages_per_session);
    auto rates = [&](const char* key, StrategyRates& r) {
      if (!j.contains(key)) return;
      const auto& o = j.at(key);
      if (!o.is_object()) throw InvalidArgument(std::string(key) + " must be an object");
      for (const auto& [name, v] : o.items()) {
        r[static_cast<std::size_t>(parse_enum<StrategyLabel>(name))] = v.get<double>();
      }
    };
    rates("treatment_rates", c.treatment_rates);
    rates("control_rates", c.control_rates);
    get("exit_ticket_label_rate", c.exit_ticket_label_rate);
    get("labeled_sample", c.labeled_sample);
    get("inject_misassignment", c.inject_misassignment);
    get("misassigned_sessions", c.misassigned_sessions);
    get("misassigned_tutors", c.misassigned_tutors);
    get("cost_per_call", c.cost_per_call);
    get("study_months", c.study_months);
    get("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad harness config: ") + e.what());
  }
  validate(c);
  return c;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }
bool bernoulli(Rng& rng, double p) { return uniform(rng) < p; }
std::size_t pick(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}
template <typename T>
const T& pick(Rng& rng, std::span<const T> bank) {
  return bank[pick(rng, bank.size())];
}

// Largest-remainder apportionment of `total` by `weights`.
std::vector<std::size_t> apportion(std::size_t total, std::span<const std::size_t> weights) {
  const double sum = static_cast<double>(std::accumulate(weights.begin(), weights.end(), std::size_t{0}));
  std::vector<std::size_t> out(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t given = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * static_cast<double>(weights[i]) / sum;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    given += out[i];
    rem.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; given < total; ++k, ++given) ++out[rem[k % rem.size()].second];
  return out;
}

template <typename E, std::size_t N>
E categorical(Rng& rng, const std::array<std::pair<E, double>, N>& dist) {
  double u = uniform(rng);
  for (const auto& [v, p] : dist) {
    if (u < p) return v;
    u -= p;
  }
  return dist.back().first;
}

Flag flag(Rng& rng, double yes, double missing) {
  const double u = uniform(rng);
  if (u < missing) return Flag::missing;
  return u < missing + yes ? Flag::yes : Flag::no;
}

std::string display_name(Rng& rng) {
  return std::string(pick(rng, first_names())) + " " + std::string(pick(rng, last_names()));
}

std::string first_word(const std::string& name) { return name.substr(0, name.find(' ')); }

std::uint16_t bit(std::size_t label_index) { return static_cast<std::uint16_t>(1u << label_index); }
std::uint16_t strategy_bit(StrategyLabel l) { return bit(static_cast<std::size_t>(l)); }
std::uint16_t moment_bit(MomentLabel l) { return bit(kStrategyCount + static_cast<std::size_t>(l)); }

class TranscriptWriter {
 public:
  TranscriptWriter(Rng& rng, const HarnessConfig& c, const StrategyRates& rates,
                   std::string_view topic, std::string_view student, std::int64_t start_ms)
      : rng_(rng), c_(c), rates_(rates), topic_(topic), student_(student), start_ms_(start_ms) {}

  void build(std::vector<ChatMessage>& messages, std::vector<std::uint16_t>& truth) {
    const std::size_t total = c_.messages_per_session;
    const std::size_t exit_len = std::max<std::size_t>(6, total / 6);
    const std::size_t problem_end = total - exit_len;

    // Plan the turns first so strategy rates can be scaled to the share of
    // tutor turns that are free to carry a strategy.
    plan_.clear();
    plan_.push_back({Sender::tutor, Slot::fixed, MomentLabel::start_session});
    plan_.push_back({Sender::student, Slot::greeting, {}});
    while (plan_.size() + 1 < problem_end) {
      plan_.push_back({Sender::tutor, Slot::fixed, MomentLabel::start_problem});
      const std::size_t exchanges = 3 + pick(rng_, 4);
      for (std::size_t e = 0; e < exchanges && plan_.size() + 1 < problem_end; ++e) {
        plan_.push_back({Sender::student, Slot::student_turn, {}});
        plan_.push_back({Sender::tutor, Slot::reply, MomentLabel::during_attempt});
      }
    }
    plan_.push_back({Sender::tutor, Slot::fixed, MomentLabel::start_exit_ticket});
    while (plan_.size() + 3 < total) {
      plan_.push_back({Sender::student, Slot::student_turn, {}});
      plan_.push_back({Sender::tutor, Slot::exit_reply, MomentLabel::during_exit_ticket});
    }
    plan_.push_back({Sender::tutor, Slot::fixed, MomentLabel::after_exit_ticket});
    plan_.push_back({Sender::student, Slot::farewell, {}});
    plan_.push_back({Sender::tutor, Slot::fixed, MomentLabel::end_session});

    std::size_t tutor_turns = 0, free_turns = 0;
    for (const auto& p : plan_) {
      tutor_turns += p.sender == Sender::tutor;
      free_turns += p.slot == Slot::reply || p.slot == Slot::exit_reply;
    }
    double scale = free_turns ? static_cast<double>(tutor_turns) / static_cast<double>(free_turns) : 0.0;
    const double mass = std::accumulate(rates_.begin(), rates_.end(), 0.0);
    if (mass * scale > 1.0) scale = 1.0 / mass;

    bool last_attempt = false;
    for (const auto& p : plan_) {
      ChatMessage m;
      m.sender = p.sender;
      m.ordinal = messages.size() + 1;
      m.wall_ms = start_ms_ + static_cast<std::int64_t>(m.ordinal) * 15000;
      std::uint16_t labels = 0;
      switch (p.slot) {
        case Slot::greeting:
          m.text = fill(pick(rng_, student_greetings()));
          break;
        case Slot::farewell:
          m.text = fill(pick(rng_, student_farewells()));
          break;
        case Slot::student_turn:
          last_attempt = bernoulli(rng_, 0.5);
          m.text = fill(last_attempt ? pick(rng_, student_attempts()) : pick(rng_, student_working()));
          break;
        case Slot::fixed:
          m.text = fill(pick(rng_, moment_templates(p.moment)));
          labels = moment_bit(p.moment);
          break;
        case Slot::reply:
        case Slot::exit_reply: {
          MomentLabel moment = p.moment;
          if (p.slot == Slot::reply) {
            moment = last_attempt ? MomentLabel::after_attempt : MomentLabel::during_attempt;
            labels = moment_bit(moment);
          } else if (bernoulli(rng_, c_.exit_ticket_label_rate)) {
            labels = moment_bit(moment);
          }
          const auto strategy = draw_strategy(scale);
          if (strategy) {
            m.text = fill(pick(rng_, strategy_templates(*strategy)));
            labels |= strategy_bit(*strategy);
          } else {
            const auto bank = p.slot == Slot::reply ? moment : MomentLabel::during_attempt;
            m.text = fill(pick(rng_, moment_templates(bank)));
          }
          break;
        }
      }
      messages.push_back(std::move(m));
      truth.push_back(labels);
    }
  }

 private:
  enum class Slot { fixed, reply, exit_reply, greeting, student_turn, farewell };
  struct Turn {
    Sender sender;
    Slot slot;
    MomentLabel moment;
  };

  std::optional<StrategyLabel> draw_strategy(double scale) {
    double u = uniform(rng_);
    for (std::size_t i = 0; i < kStrategyCount; ++i) {
      const double p = rates_[i] * scale;
      if (u < p) return static_cast<StrategyLabel>(i);
      u -= p;
    }
    return std::nullopt;
  }

  std::string fill(std::string_view tmpl) {
    Fill f;
    f.n = static_cast<int>(2 + pick(rng_, 98));
    f.m = static_cast<int>(2 + pick(rng_, 98));
    f.k = f.n + f.m;
    f.topic = topic_;
    f.student = student_;
    return fill_template(tmpl, f);
  }

  Rng& rng_;
  const HarnessConfig& c_;
  const StrategyRates& rates_;
  std::string_view topic_;
  std::string_view student_;
  std::int64_t start_ms_;
  std::vector<Turn> plan_;
};

constexpr std::int64_t kEpochMs = 1'700'000'000'000;

// Drives a real engine through `uses` counted uses, grouped into bursts of
// activate, optional strategy switches, optional regenerate and usually a
// send. Returns the number of backend calls.
std::size_t simulate_copilot(Rng& rng, SessionRecord& s, std::size_t uses, const Roster& roster,
                             LMBackend& backend, const std::vector<std::size_t>& tutor_turns) {
  std::int64_t tick = 0;
  const std::int64_t start = s.messages.empty() ? kEpochMs : s.messages.front().wall_ms;
  CopilotEngine engine(s.session_id, roster, backend, [&] { return start + 1000 * (++tick); });

  std::size_t calls = 0;
  std::size_t remaining = uses;
  auto random_strategy = [&] { return static_cast<StrategyKind>(pick(rng, 7)); };
  while (remaining > 0) {
    // Each burst is anchored to a tutor turn when there is a transcript.
    std::optional<std::size_t> turn;
    if (!tutor_turns.empty()) turn = tutor_turns[pick(rng, tutor_turns.size())];
    const std::span<const ChatMessage> history =
        turn ? std::span<const ChatMessage>(s.messages.data(), *turn) : std::span<const ChatMessage>();
    std::optional<StrategyKind> chosen;
    if (bernoulli(rng, 0.5)) chosen = random_strategy();
    auto current = engine.activate(history, s.lesson_topic, chosen);
    ++calls;
    --remaining;
    while (remaining > 0 && bernoulli(rng, 0.25)) {
      StrategyKind next = random_strategy();
      while (next == current.request.strategy()) next = random_strategy();
      current = engine.switch_strategy(current, next);
      ++calls;
      --remaining;
    }
    if (bernoulli(rng, 0.3)) {
      current = engine.regenerate(current);
      ++calls;
    }
    if (bernoulli(rng, 0.6)) {
      std::optional<std::string> edited;
      if (turn) {
        edited = s.messages[*turn].text;
      } else if (bernoulli(rng, 0.5)) {
        edited = current.text + " Take your time.";
      }
      engine.finalize(current, edited);
    }
  }
  s.copilot_uses = engine.events();
  return calls;
}

}  // namespace

Trial generate_trial(const HarnessConfig& c) {
  validate(c);
  Rng rng(c.seed);
  Trial trial;
  trial.config = c;
  auto& data = trial.data;

  // Tutors: fixed arm sizes, randomly permuted over ids.
  const std::size_t n_tutors = c.n_tutors_treatment + c.n_tutors_control;
  std::vector<Arm> arms(n_tutors, Arm::control);
  std::fill(arms.begin(), arms.begin() + static_cast<std::ptrdiff_t>(c.n_tutors_treatment), Arm::treatment);
  std::shuffle(arms.begin(), arms.end(), rng);
  std::vector<std::string> tutor_names;
  for (std::size_t i = 0; i < n_tutors; ++i) {
    TutorProfile t;
    char id[32];
    std::snprintf(id, sizeof id, "T%04zu", i + 1);
    t.tutor_id = id;
    t.arm = arms[i];
    const double g = uniform(rng);
    t.gender = g < 0.03 ? Gender::missing : (g < 0.03 + 0.6 * 0.97 ? Gender::female : Gender::male);
    t.experience_months =
        std::min(60, static_cast<int>(std::exponential_distribution<double>(1.0 / 14.0)(rng)));
    t.quality_rating =
        std::round(std::clamp(std::normal_distribution<double>(0.2, 0.35)(rng), -1.0, 1.0) * 100.0) / 100.0;
    data.tutors.push_back(t);
    tutor_names.push_back(display_name(rng));
  }

  // Attrition: an exact share of each arm never runs a session.
  std::vector<std::size_t> active;
  for (const Arm arm : {Arm::treatment, Arm::control}) {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < n_tutors; ++i) {
      if (data.tutors[i].arm == arm) ids.push_back(i);
    }
    const double rate = arm == Arm::treatment ? c.attrition_treatment : c.attrition_control;
    const auto drop = static_cast<std::size_t>(std::llround(rate * static_cast<double>(ids.size())));
    std::shuffle(ids.begin(), ids.end(), rng);
    active.insert(active.end(), ids.begin() + static_cast<std::ptrdiff_t>(drop), ids.end());
  }
  std::sort(active.begin(), active.end());

  // Students by grade, weighted like the session counts.
  const auto students_per_grade = apportion(c.n_students, kGradeSessions);
  const auto sessions_per_grade = apportion(c.n_sessions(), kGradeSessions);
  std::vector<std::vector<std::size_t>> grade_students(kGrades.size());
  std::vector<std::string> student_names;
  std::vector<double> shift, true_baseline;
  std::vector<std::vector<std::size_t>> student_tutors;
  constexpr std::array<std::pair<Race, double>, 8> race_dist{{{Race::hispanic, 0.805},
                                                               {Race::black, 0.09},
                                                               {Race::white, 0.05},
                                                               {Race::asian, 0.03},
                                                               {Race::multiracial, 0.01},
                                                               {Race::american_indian, 0.005},
                                                               {Race::pacific_islander, 0.005},
                                                               {Race::missing, 0.005}}};
  for (std::size_t g = 0; g < kGrades.size(); ++g) {
    for (std::size_t k = 0; k < std::max<std::size_t>(1, students_per_grade[g]); ++k) {
      StudentProfile s;
      char id[32];
      std::snprintf(id, sizeof id, "S%05zu", data.students.size() + 1);
      s.student_id = id;
      s.grade = kGrades[g];
      s.school_id = s.grade == 6 ? "M1" : "E" + std::to_string(1 + pick(rng, 8));
      const double gu = uniform(rng);
      s.gender = gu < 0.02 ? Gender::missing : (gu < 0.51 ? Gender::female : Gender::male);
      s.race = categorical(rng, race_dist);
      s.frl = flag(rng, 0.67, 0.02);
      s.sped = flag(rng, 0.12, 0.02);
      s.lep = flag(rng, 0.25, 0.02);
      const double base = std::normal_distribution<double>(c.baseline_mean + 8.0 * (s.grade - 3), c.baseline_sd)(rng);
      true_baseline.push_back(base);
      if (!bernoulli(rng, c.baseline_missing_rate)) s.baseline_math_score = std::round(base);
      shift.push_back(std::normal_distribution<double>(0.0, c.student_sd)(rng));
      std::vector<std::size_t> tutors;
      const std::size_t want = std::min(c.tutors_per_student, active.size());
      while (tutors.size() < want) {
        const auto t = active[pick(rng, active.size())];
        if (std::find(tutors.begin(), tutors.end(), t) == tutors.end()) tutors.push_back(t);
      }
      student_tutors.push_back(std::move(tutors));
      grade_students[g].push_back(data.students.size());
      data.students.push_back(std::move(s));
      student_names.push_back(display_name(rng));
    }
  }

  // Roster for de-identification of copilot context.
  for (std::size_t i = 0; i < n_tutors; ++i) trial.roster.add(Role::tutor, data.tutors[i].tutor_id, tutor_names[i]);
  for (std::size_t i = 0; i < data.students.size(); ++i) {
    trial.roster.add(Role::student, data.students[i].student_id, student_names[i]);
  }

  // Session allocation.
  struct Draft {
    std::size_t student, tutor;
  };
  std::vector<Draft> drafts;
  for (std::size_t g = 0; g < kGrades.size(); ++g) {
    for (std::size_t k = 0; k < sessions_per_grade[g]; ++k) {
      const auto st = grade_students[g][pick(rng, grade_students[g].size())];
      const auto& list = student_tutors[st];
      drafts.push_back({st, list[pick(rng, list.size())]});
    }
  }
  // Every retained tutor runs at least one session, so the analyzed sample
  // matches the attrition targets exactly.
  {
    std::vector<std::size_t> load(n_tutors, 0);
    for (const auto& d : drafts) ++load[d.tutor];
    for (const auto t : active) {
      if (load[t] > 0) continue;
      for (std::size_t tries = 0;; ++tries) {
        auto& d = drafts[pick(rng, drafts.size())];
        if (load[d.tutor] > 1) {
          --load[d.tutor];
          d.tutor = t;
          ++load[t];
          break;
        }
        if (tries > 100 * drafts.size()) throw InvalidArgument("cannot give every tutor a session");
      }
    }
  }

  // Moderator terciles over tutors that ran sessions.
  std::vector<int> tercile(n_tutors, -1);
  if (c.tercile_effects) {
    std::vector<double> values;
    for (const auto t : active) {
      values.push_back(c.tercile_moderator == stats::Moderator::quality_rating
                           ? data.tutors[t].quality_rating
                           : static_cast<double>(data.tutors[t].experience_months));
    }
    const auto assign = stats::tercile_assignment(values);
    for (std::size_t i = 0; i < active.size(); ++i) tercile[active[i]] = assign[i];
  }

  // Control tutors receiving the injected misassignment.
  std::vector<std::size_t> misassigned;
  if (c.inject_misassignment) {
    std::map<std::size_t, std::vector<std::size_t>> by_tutor;
    for (std::size_t i = 0; i < drafts.size(); ++i) {
      if (data.tutors[drafts[i].tutor].arm == Arm::control) by_tutor[drafts[i].tutor].push_back(i);
    }
    std::vector<std::size_t> candidates;
    for (const auto& [t, _] : by_tutor) candidates.push_back(t);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    if (candidates.size() < c.misassigned_tutors) throw InvalidArgument("not enough control tutors to misassign");
    std::vector<std::size_t> pool;
    for (std::size_t k = 0; k < c.misassigned_tutors; ++k) {
      auto sessions = by_tutor[candidates[k]];
      std::shuffle(sessions.begin(), sessions.end(), rng);
      misassigned.push_back(sessions.front());
      pool.insert(pool.end(), sessions.begin() + 1, sessions.end());
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    if (pool.size() < c.misassigned_sessions - c.misassigned_tutors) {
      throw InvalidArgument("not enough control sessions to misassign");
    }
    misassigned.insert(misassigned.end(), pool.begin(),
                       pool.begin() + static_cast<std::ptrdiff_t>(c.misassigned_sessions - c.misassigned_tutors));
    std::sort(misassigned.begin(), misassigned.end());
  }

  SeededBackend backend(c.seed);
  const auto topics = lesson_topics();
  std::vector<std::size_t> sessions_of(data.students.size(), 0), treated_of(data.students.size(), 0),
      passed_of(data.students.size(), 0);
  trial.used.reserve(drafts.size());
  for (std::size_t i = 0; i < drafts.size(); ++i) {
    const auto& d = drafts[i];
    const auto& tutor = data.tutors[d.tutor];
    const auto& student = data.students[d.student];
    const bool treat = tutor.arm == Arm::treatment;
    SessionRecord s;
    char id[32];
    std::snprintf(id, sizeof id, "s-%06zu", i + 1);
    s.session_id = id;
    s.tutor_id = tutor.tutor_id;
    s.student_id = student.student_id;
    s.school_id = student.school_id;
    s.grade = student.grade;
    s.lesson_topic = std::string(pick(rng, topics));
    const std::int64_t start_ms = kEpochMs + static_cast<std::int64_t>(i) * 3'600'000;

    std::vector<std::uint16_t> truth;
    if (c.messages_per_session > 0) {
      TranscriptWriter writer(rng, c, treat ? c.treatment_rates : c.control_rates, s.lesson_topic,
                              first_word(student_names[d.student]), start_ms);
      writer.build(s.messages, truth);
    }

    const bool misassign = std::binary_search(misassigned.begin(), misassigned.end(), i);
    bool used = false;
    if ((treat && bernoulli(rng, c.usage_probability)) || misassign) {
      const std::size_t uses =
          misassign ? 1
                    : 1 + static_cast<std::size_t>(
                              std::poisson_distribution<int>(c.mean_uses_when_used - 1.0)(rng));
      std::vector<std::size_t> turns;
      for (std::size_t t = 0; t < s.messages.size(); ++t) {
        if (s.messages[t].sender == Sender::tutor && t > 0) turns.push_back(t);
      }
      trial.generation_calls += simulate_copilot(rng, s, uses, trial.roster, backend, turns);
      used = true;
    }

    double effect = 0.0;
    if (c.tercile_effects) {
      effect = treat ? (*c.tercile_effects)[static_cast<std::size_t>(tercile[d.tutor])] : 0.0;
    } else if (c.late_effect) {
      effect = used ? *c.late_effect : 0.0;
    } else {
      effect = treat ? c.itt_effect : 0.0;
    }
    const double p = std::clamp(c.base_pass_rate + effect + shift[d.student], 0.0, 1.0);
    const double u = uniform(rng);
    s.exit_ticket_passed = u < p;
    s.exit_ticket_attempted = u < std::max(p, c.attempt_rate);
    s.participation_points =
        std::round(std::max(0.0, std::normal_distribution<double>(c.participation_mean, c.participation_sd)(rng)) *
                   100.0) / 100.0;

    ++sessions_of[d.student];
    treated_of[d.student] += treat;
    passed_of[d.student] += s.exit_ticket_passed;
    trial.used.push_back(used);
    trial.truth.push_back(std::move(truth));
    data.sessions.push_back(std::move(s));
  }
  if (c.messages_per_session == 0) trial.truth.clear();

  // End-of-year scores from the true baseline, exit-ticket record and
  // exposure to treatment tutors.
  for (std::size_t i = 0; i < data.students.size(); ++i) {
    const double n = static_cast<double>(sessions_of[i]);
    const double rate_pct = n > 0 ? 100.0 * static_cast<double>(passed_of[i]) / n : 0.0;
    const double exposure = n > 0 ? static_cast<double>(treated_of[i]) / n : 0.0;
    const double end = c.score_intercept + c.score_baseline_coef * true_baseline[i] +
                       c.score_pass_rate_coef * rate_pct + c.score_exposure_effect * exposure +
                       std::normal_distribution<double>(0.0, c.score_noise_sd)(rng);
    if (!bernoulli(rng, c.end_missing_rate)) data.students[i].end_math_score = std::round(end * 10.0) / 10.0;
  }
  return trial;
}

std::set<std::string> label_set(std::uint16_t bits) {
  std::set<std::string> out;
  const auto& names = all_label_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (bits & bit(i)) out.insert(names[i]);
  }
  return out;
}

std::vector<LabeledUtterance> sample_labeled(const Trial& trial, std::size_t n, std::uint64_t seed) {
  if (trial.truth.empty()) throw InvalidArgument("trial has no transcripts to sample");
  std::vector<std::pair<std::uint32_t, std::uint32_t>> slots;
  for (std::size_t s = 0; s < trial.data.sessions.size(); ++s) {
    const auto& msgs = trial.data.sessions[s].messages;
    for (std::size_t t = 0; t < msgs.size(); ++t) {
      if (msgs[t].sender == Sender::tutor) slots.emplace_back(static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(t));
    }
  }
  if (n > slots.size()) throw InvalidArgument("asked for more labeled utterances than tutor messages");
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) std::swap(slots[i], slots[i + pick(rng, slots.size() - i)]);
  std::vector<LabeledUtterance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [s, t] = slots[i];
    const auto& msgs = trial.data.sessions[s].messages;
    LabeledUtterance u;
    u.context.assign(msgs.begin() + (t > kContextWindow ? t - kContextWindow : 0), msgs.begin() + t);
    u.target = msgs[t].text;
    u.labels = label_set(trial.truth[s][t]);
    out.push_back(std::move(u));
  }
  return out;
}

double true_frequency(const Trial& trial, std::string_view label) {
  const auto& names = all_label_names();
  const auto it = std::find(names.begin(), names.end(), label);
  if (it == names.end()) throw InvalidArgument("unknown label '" + std::string(label) + "'");
  const auto b = bit(static_cast<std::size_t>(it - names.begin()));
  std::size_t hits = 0, total = 0;
  for (std::size_t s = 0; s < trial.truth.size(); ++s) {
    const auto& msgs = trial.data.sessions[s].messages;
    for (std::size_t t = 0; t < msgs.size(); ++t) {
      if (msgs[t].sender != Sender::tutor) continue;
      ++total;
      hits += (trial.truth[s][t] & b) != 0;
    }
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

double annualize_cost(double total_cost, std::size_t n_tutors, int months) {
  if (n_tutors == 0) throw InvalidArgument("annualize_cost needs at least one tutor");
  if (months < 1) throw InvalidArgument("annualize_cost needs at least one month");
  if (!(total_cost >= 0.0)) throw InvalidArgument("total cost must be non-negative");
  return total_cost / static_cast<double>(n_tutors) / static_cast<double>(months) * 12.0;
}

// ---------------------------------------------------------------------------
// Trial directories

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string(), 0);
  return out;
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string(), 0);
  return in;
}

}  // namespace

void write_trial(const std::filesystem::path& dir, const Trial& trial) {
  std::filesystem::create_directories(dir);
  open_out(dir / "config.json") << to_json(trial.config).dump(2) << '\n';
  {
    auto out = open_out(dir / "tutors.csv");
    write_tutors_csv(out, trial.data.tutors);
  }
  {
    auto out = open_out(dir / "students.csv");
    write_students_csv(out, trial.data.students);
  }
  {
    auto out = open_out(dir / "roster.csv");
    write_roster_csv(out, trial.roster);
  }
  {
    auto out = open_out(dir / "sessions.jsonl");
    write_jsonl(out, trial.data.sessions);
  }
  if (!trial.truth.empty() && trial.config.labeled_sample > 0) {
    auto out = open_out(dir / "labeled_sample.jsonl");
    write_labeled_jsonl(out, sample_labeled(trial, trial.config.labeled_sample, trial.config.seed ^ 0x1abe1ULL));
  }
}

TrialFiles read_trial(const std::filesystem::path& dir) {
  TrialFiles t;
  {
    auto in = open_in(dir / "config.json");
    try {
      t.config = config_from_json(nlohmann::ordered_json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("config.json: " + std::string(e.what()), 0);
    }
  }
  {
    auto in = open_in(dir / "tutors.csv");
    t.data.tutors = read_tutors_csv(in);
  }
  {
    auto in = open_in(dir / "students.csv");
    t.data.students = read_students_csv(in);
  }
  {
    auto in = open_in(dir / "roster.csv");
    t.roster = read_roster_csv(in);
  }
  {
    auto in = open_in(dir / "sessions.jsonl");
    t.data.sessions = read_jsonl(in);
  }
  if (std::filesystem::exists(dir / "labeled_sample.jsonl")) {
    auto in = open_in(dir / "labeled_sample.jsonl");
    t.labeled_sample = read_labeled_jsonl(in);
  }
  return t;
}

}  // namespace copilot::harness
