// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when
// any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "copilot/engine.hpp"
#include "copilot/harness.hpp"
#include "copilot/labeling.hpp"
#include "copilot/pipeline.hpp"
#include "copilot/templates.hpp"
#include "oracles.hpp"

using namespace copilot;
using namespace copilot::harness;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Verdict estimator_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240611);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> coef(0.5, 2.0);
  double worst_beta = 0, worst_hc1 = 0, worst_cr1 = 0, worst_single = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 50 + rng() % 150;
    const std::size_t k = 1 + rng() % 6;
    const int groups = 3;
    const int g = 5 + static_cast<int>(rng() % 20);
    stats::Frame f(n);
    stats::RegressionSpec spec;
    spec.outcome = "y";
    oracle::Mat X(n, oracle::Vec(1 + k + groups - 1, 0.0L));
    std::vector<double> yv(n);
    oracle::Vec y(n);
    std::vector<std::vector<double>> cols(k, std::vector<double>(n));
    std::vector<std::string> cat(n), cl(n), single(n);
    std::vector<int> ids(n);
    std::vector<double> b(k + 1);
    for (auto& v : b) v = (rng() % 2 ? 1 : -1) * coef(rng);
    for (std::size_t i = 0; i < n; ++i) {
      X[i][0] = 1;
      double mu = b[0];
      for (std::size_t j = 0; j < k; ++j) {
        cols[j][i] = nd(rng) * (1 + j);
        X[i][1 + j] = cols[j][i];
        mu += b[j + 1] * cols[j][i];
      }
      const int level = static_cast<int>(rng() % groups);
      cat[i] = "L" + std::to_string(level);
      for (int l = 1; l < groups; ++l) X[i][k + static_cast<std::size_t>(l)] = level == l ? 1 : 0;
      ids[i] = static_cast<int>(rng() % static_cast<unsigned>(g));
      cl[i] = "c" + std::to_string(100 + ids[i]);  // sorted order matches numeric order
      single[i] = "s" + std::to_string(100000 + i);
      yv[i] = mu + 0.3 * level + nd(rng) * (0.5 + std::abs(cols[0][i]));
      y[i] = yv[i];
    }
    for (std::size_t j = 0; j < k; ++j) {
      f.add_numeric("x" + std::to_string(j), cols[j]);
      spec.covariates.push_back("x" + std::to_string(j));
    }
    f.add_numeric("y", yv);
    f.add_categorical("grp", cat);
    f.add_categorical("cl", cl);
    f.add_categorical("one", single);
    spec.covariates.push_back("grp");
    // Clusters that did not occur shift ids; compact them.
    std::vector<int> present(static_cast<std::size_t>(g), -1);
    int next = 0;
    for (int id = 0; id < g; ++id) {
      if (std::find(ids.begin(), ids.end(), id) != ids.end()) present[static_cast<std::size_t>(id)] = next++;
    }
    for (auto& id : ids) id = present[static_cast<std::size_t>(id)];

    const auto o = oracle::ols(X, y);
    const auto hc = oracle::hc1(X, o);
    const auto cr = oracle::cr1(X, o, ids, next);
    const auto fit = stats::fit_ols(spec, f);
    spec.cluster = "cl";
    const auto cfit = stats::fit_ols(spec, f);
    spec.cluster = "one";
    const auto sfit = stats::fit_ols(spec, f);
    for (std::size_t j = 0; j < X[0].size(); ++j) {
      worst_beta = std::max(worst_beta, oracle::rel_err(fit.coefficients[j].estimate, o.beta[j]));
      worst_hc1 = std::max(worst_hc1, oracle::rel_err(fit.coefficients[j].se, std::sqrt(hc[j][j])));
      worst_cr1 = std::max(worst_cr1, oracle::rel_err(cfit.coefficients[j].se, std::sqrt(cr[j][j])));
      worst_single = std::max(worst_single, std::abs(sfit.coefficients[j].se - fit.coefficients[j].se) /
                                                fit.coefficients[j].se);
    }
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = worst_beta < 1e-8 && worst_hc1 < 1e-8 && worst_cr1 < 1e-8 && worst_single < 1e-10 && secs < 1.0;
  v.detail = fmt("100 systems: max rel err beta %.1e, HC1 se %.1e, CR1 se %.1e; singleton vs HC1 %.1e; %.2fs",
                 worst_beta, worst_hc1, worst_cr1, worst_single, secs);
  return v;
}

// ITT recovery and the TOT numbers share the same 200 trials.
struct ReplicationRun {
  std::vector<double> itt, itt_se, tot_plain, itt_plain, usage_gap;
  double secs = 0;
};

const ReplicationRun& replications() {
  static const ReplicationRun run = [] {
    ReplicationRun r;
    const auto t0 = Clock::now();
    stats::AnalysisOptions plain{false, false, false};
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
      HarnessConfig c;
      c.seed = seed;
      const auto trial = generate_trial(c);
      const auto fit = stats::itt(trial.data, Outcome::passed_unconditional);
      r.itt.push_back(fit.at("treatment").estimate);
      r.itt_se.push_back(fit.at("treatment").se);
      r.itt_plain.push_back(stats::itt(trial.data, Outcome::passed_unconditional, plain).at("treatment").estimate);
      r.tot_plain.push_back(stats::tot_2sls(trial.data, Outcome::passed_unconditional, plain).at("used").estimate);
      std::set<std::string> treated;
      for (const auto& t : trial.data.tutors) {
        if (t.arm == Arm::treatment) treated.insert(t.tutor_id);
      }
      double used_t = 0, n_t = 0, used_c = 0, n_c = 0;
      for (std::size_t i = 0; i < trial.data.sessions.size(); ++i) {
        if (treated.count(trial.data.sessions[i].tutor_id)) {
          ++n_t;
          used_t += trial.used[i];
        } else {
          ++n_c;
          used_c += trial.used[i];
        }
      }
      r.usage_gap.push_back(used_t / n_t - used_c / n_c);
    }
    r.secs = seconds_since(t0);
    return r;
  }();
  return run;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

Verdict itt_recovery() {
  const auto& r = replications();
  std::size_t covered = 0;
  for (std::size_t i = 0; i < r.itt.size(); ++i) covered += std::abs(r.itt[i] - 0.04) <= 1.959963984540054 * r.itt_se[i];
  const double m = mean(r.itt);
  const double coverage = static_cast<double>(covered) / static_cast<double>(r.itt.size());
  Verdict v;
  v.pass = std::abs(m - 0.04) <= 0.005 && coverage >= 0.92 && coverage <= 0.98 && r.secs < 120;
  v.detail = fmt("200 seeds x 4136 sessions: mean %.4f, 95%% CI coverage %.3f, %.1fs (includes TOT fits)", m,
                 coverage, r.secs);
  return v;
}

Verdict itt_tot_consistency() {
  const auto& r = replications();
  double worst_identity = 0;
  for (std::size_t i = 0; i < r.itt.size(); ++i) {
    worst_identity = std::max(worst_identity, std::abs(r.tot_plain[i] - r.itt_plain[i] / r.usage_gap[i]));
  }
  const double usage = mean(r.usage_gap);
  const double tot = mean(r.tot_plain);
  const double reported_ratio = 0.04 / 0.29;
  Verdict v;
  v.pass = worst_identity < 1e-10 && std::abs(usage - 0.29) < 0.01 && std::abs(tot - 0.14) <= 0.01 &&
           std::abs(reported_ratio - 0.14) <= 0.01;
  v.detail = fmt("max |TOT - ITT/usage| %.1e; mean usage %.4f; mean TOT %.4f; 0.04/0.29 = %.4f", worst_identity,
                 usage, tot, reported_ratio);
  return v;
}

Verdict perfect_compliance() {
  HarnessConfig c;
  c.usage_probability = 1.0;
  const auto trial = generate_trial(c);
  double worst = 0;
  for (auto o : all_values<Outcome>()) {
    const auto a = stats::itt(trial.data, o);
    const auto b = stats::tot_2sls(trial.data, o);
    worst = std::max(worst, std::abs(a.at("treatment").estimate - b.at("used").estimate));
    worst = std::max(worst, std::abs(a.at("treatment").se - b.at("used").se));
  }
  Verdict v;
  v.pass = worst <= 1e-10;
  v.detail = fmt("used == treatment: max |TOT - ITT| over 4 outcomes (estimates and SEs) %.1e", worst);
  return v;
}

Verdict heterogeneity() {
  const auto t0 = Clock::now();
  HarnessConfig c;
  c.tercile_effects = std::array<double, 3>{0.09, 0.04, 0.00};
  const auto trial = generate_trial(c);
  const auto h = stats::heterogeneity_by_tercile(trial.data, Outcome::passed_unconditional,
                                                 stats::Moderator::quality_rating);
  bool all_within = true;
  std::string parts;
  for (std::size_t t = 0; t < 3; ++t) {
    const auto& e = h.terciles[t].effect;
    const double planted = (*c.tercile_effects)[t];
    const bool ok = std::abs(e.estimate - planted) <= 2 * e.se;
    all_within = all_within && ok;
    parts += fmt(" T%d %.3f (se %.3f, planted %.2f)", h.terciles[t].tercile, e.estimate, e.se, planted);
  }
  std::size_t quiet = 0;
  const std::size_t seeds = 200;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    HarnessConfig n;
    n.seed = seed;
    const auto null_trial = generate_trial(n);
    const auto hn = stats::heterogeneity_by_tercile(null_trial.data, Outcome::passed_unconditional,
                                                    stats::Moderator::quality_rating);
    quiet += hn.equality_p >= 0.05;
  }
  const double share = static_cast<double>(quiet) / seeds;
  Verdict v;
  v.pass = all_within && share >= 0.90;
  v.detail = "planted:" + parts + fmt("; null: no significant difference in %.3f of %zu seeds; %.1fs", share,
                                      seeds, seconds_since(t0));
  return v;
}

// ---------------------------------------------------------------------------
// Classifier corpus shared by the classifier, log-odds and throughput checks.

constexpr std::size_t kMessagesPerSession = 133;
constexpr std::size_t kAcceptanceLabeled = 10000;

struct ClassifierRun {
  Trial trial;
  ModelSet models;
  std::vector<LabelTraining> details;
  double train_secs = 0;
};

const ClassifierRun& classifier_run() {
  static const ClassifierRun run = [] {
    ClassifierRun r;
    HarnessConfig c;
    c.messages_per_session = kMessagesPerSession;
    c.labeled_sample = kAcceptanceLabeled;
    r.trial = generate_trial(c);
    const auto sample = sample_labeled(r.trial, kAcceptanceLabeled, c.seed ^ 0x1abe1);
    const auto t0 = Clock::now();
    r.models = train_all_labels(sample, c.seed, {}, &r.details);
    r.train_secs = seconds_since(t0);
    return r;
  }();
  return run;
}

Verdict classifier_protocol() {
  Verdict v;
  bool ok = true;

  // Weight limits.
  const std::size_t counts[] = {5000, 300, 17, 1};
  const auto flat = class_balanced_weights(counts, 0.0);
  const bool flat_ok = std::all_of(flat.begin(), flat.end(), [](double w) { return w == 1.0; });
  const double near_one = std::nextafter(1.0, 0.0);
  const auto raw = class_balanced_raw_weights(counts, near_one);
  double worst_inv = 0;
  for (std::size_t i = 0; i < 4; ++i) worst_inv = std::max(worst_inv, std::abs(raw[i] * static_cast<double>(counts[i]) - 1));
  ok = ok && flat_ok && worst_inv < 1e-12;

  // Gradient check on a real training problem.
  const auto& run = classifier_run();
  const auto sample = sample_labeled(run.trial, 300, 77);
  const auto ex = make_examples(sample, "give_answer");
  CompactProblem p(ex);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0, 0.5);
  Eigen::VectorXd theta(static_cast<Eigen::Index>(p.cols()) + 1);
  for (auto& x : theta) x = nd(rng);
  const LossWeights lw = loss_weights(ex.size() - p.positives(), p.positives(), 0.99);
  const auto g = balanced_loss_gradient(p, theta, lw, 1e-3);
  double worst_grad = 0;
  const double h = 1e-5;
  for (Eigen::Index j = 0; j < theta.size(); j += std::max<Eigen::Index>(1, theta.size() / 200)) {
    auto up = theta, dn = theta;
    up[j] += h;
    dn[j] -= h;
    const double fd = (balanced_loss(p, up, lw, 1e-3) - balanced_loss(p, dn, lw, 1e-3)) / (2 * h);
    worst_grad = std::max(worst_grad, std::abs(fd - g[j]));
  }
  ok = ok && worst_grad < 1e-6;

  // Per-label F1 and recovered frequencies on the planted corpus.
  const auto labels = label_sessions(run.models, run.trial.data.sessions);
  const double planted[] = {0.02, 0.05, 0.09, 0.01, 0.09, 0.11, 0.12};
  double min_f1 = 1, worst_freq = 0, worst_plant = 0;
  std::string per_label;
  for (auto l : all_values<StrategyLabel>()) {
    const std::string name(to_string(l));
    const auto* m = run.models.find(name);
    const double f1 = m ? m->test_f1 : 0.0;
    min_f1 = std::min(min_f1, f1);
    const double truth = true_frequency(run.trial, name);
    const double got = m && m->passes_gate() ? labels.frequency(name) : 0.0;
    worst_freq = std::max(worst_freq, std::abs(got - truth));
    worst_plant = std::max(worst_plant, std::abs(got - planted[static_cast<std::size_t>(l)]));
    per_label += fmt(" %s F1=%.3f freq=%.4f/%.4f;", name.c_str(), f1, got, truth);
  }
  ok = ok && min_f1 >= 0.9 && worst_freq <= 0.01 && worst_plant <= 0.01;

  // Gate: labels below 0.60 never reach the counts or the log-odds.
  std::vector<std::string> gated_out;
  for (const auto& m : run.models.models()) {
    if (!m.passes_gate()) gated_out.push_back(m.label);
  }
  PipelineOptions opt;
  opt.models = &run.models;
  bool gate_ok = !gated_out.empty();
  const auto report = run_pipeline(run.trial.data, opt);
  for (const auto& name : gated_out) {
    const bool in_counts = std::find(labels.labels.begin(), labels.labels.end(), name) != labels.labels.end();
    bool in_log_odds = false;
    if (report.log_odds) {
      for (const auto& row : report.log_odds->rows) in_log_odds = in_log_odds || row.label == name;
    }
    gate_ok = gate_ok && !in_counts && !in_log_odds;
  }
  ok = ok && gate_ok && report.log_odds.has_value();

  std::string gated;
  for (const auto& s : gated_out) gated += (gated.empty() ? "" : ",") + s;
  v.pass = ok;
  v.detail = fmt("beta=0 all ones: %s; |w*n - 1| at beta->1: %.1e; grad vs FD max %.1e; labeled sample %zu, "
                 "training %.1fs; min strategy F1 %.3f; max |freq - truth| %.4f; max |freq - planted| %.4f;",
                 flat_ok ? "yes" : "no", worst_inv, worst_grad, kAcceptanceLabeled, run.train_secs, min_f1,
                 worst_freq, worst_plant) +
             per_label + " excluded by gate: " + (gated.empty() ? "none" : gated) +
             (gate_ok ? " (absent from counts and log-odds)" : " (LEAKED)");
  return v;
}

Verdict fightin_words() {
  const auto& run = classifier_run();
  const auto t0 = Clock::now();
  const auto labels = label_sessions(run.models, run.trial.data.sessions);
  const auto fw = stats::fightin_words_by_arm(labels, run.trial.data.tutors);

  // Symmetry and exact antisymmetry on the labeled corpus counts.
  stats::LabelCounts a, b;
  std::set<std::string> treated;
  for (const auto& t : run.trial.data.tutors) {
    if (t.arm == Arm::treatment) treated.insert(t.tutor_id);
  }
  for (const auto& s : labels.sessions) {
    auto& side = treated.count(s.tutor_id) ? a : b;
    side.total += static_cast<double>(s.tutor_messages);
    for (std::size_t i = 0; i < labels.labels.size(); ++i) side.counts[labels.labels[i]] += static_cast<double>(s.counts[i]);
  }
  bool sym = true, anti = true;
  for (const auto& row : stats::fightin_words(a, a).rows) sym = sym && row.z == 0.0;
  const auto ab = stats::fightin_words(a, b), ba = stats::fightin_words(b, a);
  for (const auto& row : ab.rows) anti = anti && ba.at(row.label).z == -row.z;

  // Sign recovery across seeds, labeled by the trained models.
  const std::vector<std::pair<std::string, int>> pattern{{"prompt_explain", 1},
                                                         {"ask_guiding_question", 1},
                                                         {"affirm_correct_attempt", 1},
                                                         {"give_answer", -1},
                                                         {"generic_encouragement", -1}};
  const std::size_t seeds = 100;
  std::size_t matched = 0;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    HarnessConfig c;
    c.seed = 1000 + seed;
    c.messages_per_session = 20;
    const auto trial = generate_trial(c);
    const auto counts = label_sessions(run.models, trial.data.sessions);
    const auto r = stats::fightin_words_by_arm(counts, trial.data.tutors);
    bool all = true;
    for (const auto& [label, sign] : pattern) all = all && r.at(label).z * sign > 0;
    matched += all;
  }
  const double share = static_cast<double>(matched) / seeds;
  std::string zs;
  for (const auto& [label, sign] : pattern) zs += fmt(" %s z=%.1f", label.c_str(), fw.at(label).z);
  Verdict v;
  v.pass = sym && anti && share >= 0.95;
  v.detail = fmt("identical corpora z=0: %s; swap antisymmetric: %s; full sign pattern in %.3f of %zu seeds; %.1fs;",
                 sym ? "yes" : "no", anti ? "yes" : "no", share, seeds, seconds_since(t0)) +
             zs;
  return v;
}

// ---------------------------------------------------------------------------

class RecordingBackend : public LMBackend {
 public:
  std::string generate(const SuggestionRequest& request) override {
    requests.push_back(request);
    return "Let's think about it together.";
  }
  std::vector<SuggestionRequest> requests;
};

// Lowercased maximal letter runs; bytes >= 0x80 count as letters.
std::vector<std::string> letter_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80) {
      cur += static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Verdict privacy() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(8675309);
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  const auto firsts = first_names();
  const auto lasts = last_names();

  Roster roster;
  std::vector<std::string> students, tutors;
  for (std::size_t i = 0; i < 300; ++i) {
    const std::string name = std::string(firsts[pick(firsts.size())]) + " " + std::string(lasts[pick(lasts.size())]);
    (i < 240 ? students : tutors).push_back(name);
    roster.add(i < 240 ? Role::student : Role::tutor, (i < 240 ? "S" : "T") + std::to_string(i), name);
  }
  std::set<std::string> name_tokens;
  for (const auto& e : roster.entries()) {
    for (auto& t : letter_tokens(e.display_name)) name_tokens.insert(t);
  }

  const char* filler[] = {"what", "is", "the", "answer", "to", "problem", "can", "you", "try", "again",
                          "good", "job", "let's", "look", "at", "this", "fraction", "7", "x", "8", "=",
                          "56", "?", "!", "ok", "i", "think", "so", "hmm", "wait"};
  auto mangle = [&](std::string name) {
    switch (pick(8)) {
      case 0: for (auto& c : name) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c))); break;
      case 1: for (auto& c : name) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c))); break;
      case 2: name += "'s"; break;
      case 3: name = "(" + name + ")"; break;
      case 4: name += ","; break;
      case 5: name = "@" + name + "!"; break;
      default: break;
    }
    return name;
  };

  std::size_t requests = 0, violations = 0, max_context = 0, injected = 0;
  const StrategyKind strategies[] = {StrategyKind::provide_solution, StrategyKind::worked_example,
                                     StrategyKind::minor_correction, StrategyKind::similar_problem};
  for (std::size_t s = 0; s < 10000; ++s) {
    const auto& student = students[pick(students.size())];
    const auto& tutor = tutors[pick(tutors.size())];
    const auto space = student.find(' ');
    std::vector<ChatMessage> history;
    const std::size_t n = 1 + pick(30);
    for (std::size_t m = 0; m < n; ++m) {
      std::string text;
      const std::size_t words = 1 + pick(12);
      for (std::size_t w = 0; w < words; ++w) {
        if (!text.empty()) text += ' ';
        if (pick(5) == 0) {
          ++injected;
          std::string name;
          switch (pick(5)) {
            case 0: name = student.substr(0, space); break;
            case 1: name = student.substr(space + 1); break;
            case 2: name = student; break;
            case 3: name = tutor.substr(0, tutor.find(' ')); break;
            default: name = students[pick(students.size())]; break;
          }
          text += mangle(name);
        } else {
          text += filler[pick(std::size(filler))];
        }
      }
      history.push_back({m % 2 ? Sender::student : Sender::tutor, m + 1, 0, text});
    }
    RecordingBackend backend;
    CopilotEngine engine("p-" + std::to_string(s), roster, backend, [] { return std::int64_t{0}; });
    try {
      auto sug = engine.activate(history, "fractions", std::nullopt);
      if (pick(2)) sug = engine.regenerate(sug);
      if (pick(2)) sug = engine.switch_strategy(sug, strategies[pick(4)]);
      engine.finalize(sug, std::nullopt);
    } catch (const PrivacyViolation&) {
      ++violations;  // redaction let a name through and the request guard caught it
    }
    for (const auto& req : backend.requests) {
      ++requests;
      max_context = std::max(max_context, req.context().size());
      const auto body = request_payload(req).dump();
      for (const auto& tok : letter_tokens(body)) violations += name_tokens.count(tok);
    }
    for (const auto& e : engine.events()) {
      max_context = std::max(max_context, e.context_snapshot.size());
      for (const auto& m : e.context_snapshot)
        for (const auto& tok : letter_tokens(m.text)) violations += name_tokens.count(tok);
    }
  }
  Verdict v;
  v.pass = violations == 0 && max_context <= kContextWindow && requests >= 10000;
  v.detail = fmt("10000 sessions, %zu injected names, %zu requests: %zu roster-name tokens sent, max context %zu; %.1fs",
                 injected, requests, violations, max_context, seconds_since(t0));
  return v;
}

Verdict cost() {
  const double annual = annualize_cost(1419.66, 429, 2);
  const double rounded = std::round(annual * 100) / 100;
  Verdict v;
  v.pass = rounded == 19.86 && std::abs(annual - 20.0) <= 0.20;
  v.detail = fmt("annualize_cost(1419.66, 429, 2) = %.4f (rounds to %.2f), %.2f from $20", annual, rounded,
                 std::abs(annual - 20.0));
  return v;
}

Verdict throughput() {
  const auto& run = classifier_run();
  std::size_t messages = 0;
  for (const auto& s : run.trial.data.sessions) messages += s.messages.size();
  const auto dir = std::filesystem::temp_directory_path() / "copilot_acceptance_throughput";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  const auto t0 = Clock::now();
  {
    std::ofstream out(dir / "sessions.jsonl");
    write_jsonl(out, run.trial.data.sessions);
  }
  const double t_export = seconds_since(t0);
  StudyData data;
  data.tutors = run.trial.data.tutors;
  data.students = run.trial.data.students;
  {
    std::ifstream in(dir / "sessions.jsonl");
    data.sessions = read_jsonl(in);
  }
  std::size_t labeled = 0;
  {
    std::ifstream in(dir / "sessions.jsonl");
    const auto counts = label_corpus(run.models, in);
    labeled = counts.total_tutor_messages();
    std::ofstream out(dir / "labels.csv");
    write_label_counts_csv(out, counts);
  }
  const double t_label = seconds_since(t0);
  PipelineOptions opt;
  opt.models = &run.models;
  const auto report = run_pipeline(data, opt);
  {
    std::ofstream out(dir / "report.txt");
    out << format_report(report);
  }
  const double total = seconds_since(t0);
  std::filesystem::remove_all(dir);

  Verdict v;
  v.pass = run.trial.data.sessions.size() == 4136 && messages >= 550000 && total < 180 &&
           data.sessions.size() == 4136 && labeled > 0;
  v.detail = fmt("%zu sessions, %zu messages: export %.1fs, read+label %.1fs, full analysis %.1fs; total %.1fs",
                 data.sessions.size(), messages, t_export, t_label - t_export, total - t_label, total);
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"estimator-oracle equivalence", estimator_oracle},
      {"ITT recovery", itt_recovery},
      {"ITT/TOT consistency", itt_tot_consistency},
      {"perfect-compliance identity", perfect_compliance},
      {"tercile heterogeneity", heterogeneity},
      {"log-odds properties", fightin_words},
      {"classifier protocol", classifier_protocol},
      {"privacy", privacy},
      {"cost", cost},
      {"throughput", throughput},
  };
  int failed = 0;
  int index = 0;
  for (const auto& [name, check] : criteria) {
    ++index;
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    failed += !v.pass;
    std::printf("%s [%d] %s: %s\n", v.pass ? "PASS" : "FAIL", index, name.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", index - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
