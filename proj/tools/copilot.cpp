// copilot: serve, label, trainlabel, analyze, simulate, report.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "copilot/classifier.hpp"
#include "copilot/formats.hpp"
#include "copilot/harness.hpp"
#include "copilot/labeling.hpp"
#include "copilot/pipeline.hpp"
#include "copilot/session_service.hpp"
#include "copilot/stats/balance.hpp"
#include "copilot/stats/estimators.hpp"
#include "copilot/stats/fightin_words.hpp"
#include "copilot/tcp_server.hpp"

namespace fs = std::filesystem;
using namespace copilot;

namespace {

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string(), 0);
  return in;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string(), 0);
  return out;
}

StudyData load_study(const fs::path& sessions, const fs::path& tutors, const fs::path& students) {
  StudyData d;
  {
    auto in = open_in(tutors);
    d.tutors = read_tutors_csv(in);
  }
  if (!students.empty()) {
    auto in = open_in(students);
    d.students = read_students_csv(in);
  }
  auto in = open_in(sessions);
  for_each_jsonl(
      in, [&](SessionRecord&& s) { d.sessions.push_back(std::move(s)); },
      [](const IoError& e) { std::cerr << "skipping malformed transcript line: " << e.what() << '\n'; });
  return d;
}

// ---------------------------------------------------------------------------

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

int cmd_serve(const std::string& listen, const fs::path& roster_csv, const std::string& backend_spec,
              const fs::path& log_dir, const fs::path& tutors_csv, const fs::path& students_csv) {
  auto in = open_in(roster_csv);
  Roster roster = read_roster_csv(in);
  ServiceOptions opt;
  opt.log_dir = log_dir;
  SessionService service(opt, std::move(roster), make_backend(backend_spec));
  if (!tutors_csv.empty()) {
    auto t = open_in(tutors_csv);
    for (auto& tutor : read_tutors_csv(t)) service.add_tutor(std::move(tutor));
  }
  if (!students_csv.empty()) {
    auto s = open_in(students_csv);
    for (auto& student : read_students_csv(s)) service.add_student(std::move(student));
  }
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos) throw InvalidArgument("--listen wants host:port");
  const auto port = static_cast<std::uint16_t>(std::stoul(listen.substr(colon + 1)));
  TcpServer server(service, listen.substr(0, colon), port);
  server.start();
  std::cerr << "listening on " << listen.substr(0, colon) << ':' << server.port() << '\n';
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

int cmd_label(const fs::path& models_dir, const fs::path& transcripts, const fs::path& out_csv) {
  const auto models = load_models(models_dir);
  for (const auto& m : models.models()) {
    if (!m.passes_gate()) {
      std::cerr << "excluding " << m.label << ": test F1 " << m.test_f1 << " below " << kF1Gate << '\n';
    }
  }
  auto in = open_in(transcripts);
  const auto labels = label_corpus(models, in);
  auto out = open_out(out_csv);
  write_label_counts_csv(out, labels);
  std::cerr << labels.sessions.size() << " sessions, " << labels.total_tutor_messages() << " tutor messages";
  if (labels.skipped_lines) std::cerr << ", " << labels.skipped_lines << " malformed lines skipped";
  std::cerr << '\n';
  return 0;
}

int cmd_trainlabel(const fs::path& data_path, const std::string& label, std::uint64_t seed, const fs::path& out_dir) {
  auto in = open_in(data_path);
  const auto data = read_labeled_jsonl(in);
  std::vector<std::string> labels;
  if (label == "all") {
    labels = all_label_names();
  } else {
    require_known_label(label);
    labels.push_back(label);
  }
  fs::create_directories(out_dir);
  for (const auto& l : labels) {
    const auto t = train_label(data, l, seed);
    for (const auto& w : t.result.warnings) std::cerr << "warning: " << w << '\n';
    const auto& m = t.result.model;
    std::cout << l << ": beta " << m.hyper.beta << " lr " << m.hyper.learning_rate << " val loss "
              << m.validation_loss << " threshold " << m.threshold << " test F1 " << t.test.f1
              << (m.passes_gate() ? "" : "  (below gate)") << '\n';
    auto out = open_out(out_dir / (l + ".tclm"));
    save_model(out, m);
  }
  return 0;
}

void write_json_or_csv(const fs::path& out_path, const nlohmann::ordered_json& j,
                       const std::function<void(std::ostream&)>& csv) {
  if (out_path.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  auto out = open_out(out_path);
  if (out_path.extension() == ".csv") {
    csv(out);
  } else {
    out << j.dump(2) << '\n';
  }
}

void fit_csv(std::ostream& out, const stats::FitResult& f) {
  out << "name,estimate,se,z,p\n";
  for (const auto& c : f.coefficients) {
    out << csv_field(c.name) << ',' << c.estimate << ',' << c.se << ',' << c.z << ',' << c.p << '\n';
  }
}

struct AnalyzeArgs {
  std::string what;
  fs::path sessions, tutors, students, out, labels, models;
  std::string outcome = "passed_unconditional";
  std::string moderator = "quality_rating";
  double prior_scale = stats::kDefaultPriorScale;
  bool no_covariates = false, no_strata = false, no_cluster = false;
};

int cmd_analyze(const AnalyzeArgs& a) {
  stats::AnalysisOptions opt;
  opt.covariates = !a.no_covariates;
  opt.strata = !a.no_strata;
  opt.cluster = !a.no_cluster;
  const auto outcome = parse_enum<Outcome>(a.outcome);

  if (a.what == "fw") {
    auto tin = open_in(a.tutors);
    const auto tutors = read_tutors_csv(tin);
    CorpusLabels labels;
    if (!a.labels.empty()) {
      auto in = open_in(a.labels);
      labels = read_label_counts_csv(in);
    } else if (!a.models.empty() && !a.sessions.empty()) {
      const auto models = load_models(a.models);
      auto in = open_in(a.sessions);
      labels = label_corpus(models, in);
    } else {
      throw InvalidArgument("fw needs --labels, or --models with --sessions");
    }
    const auto r = stats::fightin_words_by_arm(labels, tutors, a.prior_scale);
    write_json_or_csv(a.out, stats::to_json(r), [&](std::ostream& out) {
      out << "label,count_treatment,count_control,delta,variance,z\n";
      for (const auto& row : r.rows) {
        out << row.label << ',' << row.y_a << ',' << row.y_b << ',' << row.delta << ',' << row.variance << ','
            << row.z << '\n';
      }
    });
    return 0;
  }

  const auto data = load_study(a.sessions, a.tutors, a.students);
  if (a.what == "itt" || a.what == "tot") {
    const auto r = a.what == "itt" ? stats::itt(data, outcome, opt) : stats::tot_2sls(data, outcome, opt);
    write_json_or_csv(a.out, stats::to_json(r), [&](std::ostream& out) { fit_csv(out, r); });
  } else if (a.what == "het") {
    const auto r = stats::heterogeneity_by_tercile(data, outcome, parse_enum<stats::Moderator>(a.moderator), opt);
    write_json_or_csv(a.out, stats::to_json(r), [&](std::ostream& out) {
      out << "tercile,estimate,se,p,control_mean,control_mean_se,n_tutors,n_sessions\n";
      for (const auto& t : r.terciles) {
        out << t.tercile << ',' << t.effect.estimate << ',' << t.effect.se << ',' << t.effect.p << ','
            << t.control_mean << ',' << t.control_mean_se << ',' << t.n_tutors << ',' << t.n_sessions << '\n';
      }
      out << "equality,," << ',' << r.equality_p << ",,,,\n";
    });
  } else if (a.what == "balance") {
    const auto r = stats::balance_check(data.tutors, data.sessions);
    write_json_or_csv(a.out, stats::to_json(r), [&](std::ostream& out) {
      out << "sample,variable,treatment_mean,control_mean,t,df,p\n";
      auto rows = [&](const char* sample, const std::vector<stats::BalanceRow>& v) {
        for (const auto& b : v) {
          out << sample << ',' << b.variable << ',' << b.test.mean_a << ',' << b.test.mean_b << ',' << b.test.t
              << ',' << b.test.df << ',' << b.test.p << '\n';
        }
      };
      rows("assigned", r.assigned);
      rows("analyzed", r.analyzed);
      rows("all", {r.attrition});
    });
  } else if (a.what == "exposure") {
    const auto r = stats::exposure_regression(data);
    write_json_or_csv(a.out, stats::to_json(r), [&](std::ostream& out) { fit_csv(out, r.fit); });
  } else {
    throw InvalidArgument("unknown analysis '" + a.what + "'");
  }
  return 0;
}

int cmd_simulate(const fs::path& config_path, std::optional<std::uint64_t> seed, const fs::path& out_dir) {
  harness::HarnessConfig config;
  if (!config_path.empty()) {
    auto in = open_in(config_path);
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(config_path.string() + ": " + e.what(), 0);
    }
    config = harness::config_from_json(j);
  }
  if (seed) config.seed = *seed;
  const auto trial = harness::generate_trial(config);
  harness::write_trial(out_dir, trial);
  std::size_t messages = 0;
  for (const auto& s : trial.data.sessions) messages += s.messages.size();
  std::cerr << "wrote " << trial.data.sessions.size() << " sessions (" << messages << " messages) to "
            << out_dir.string() << '\n';
  return 0;
}

int cmd_report(const fs::path& trial_dir, const fs::path& models_dir, const fs::path& out_dir) {
  const auto files = harness::read_trial(trial_dir);
  std::optional<ModelSet> models;
  if (!models_dir.empty()) {
    models = load_models(models_dir);
  } else if (!files.labeled_sample.empty()) {
    std::vector<LabelTraining> details;
    models = train_all_labels(files.labeled_sample, files.config.seed, {}, &details);
    for (const auto& d : details) {
      for (const auto& w : d.result.warnings) std::cerr << "warning: " << w << '\n';
    }
  }
  harness::PipelineOptions opt;
  opt.models = models ? &*models : nullptr;
  opt.cost_per_call = files.config.cost_per_call;
  opt.months = files.config.study_months;
  const auto report = harness::run_pipeline(files.data, opt);
  const auto text = harness::format_report(report);
  const fs::path dir = out_dir.empty() ? trial_dir : out_dir;
  open_out(dir / "report.txt") << text;
  {
    auto out = open_out(dir / "report.csv");
    harness::write_report_csv(out, report);
  }
  open_out(dir / "report.json") << harness::to_json(report).dump(2) << '\n';
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tutoring copilot: session service, utterance labeling, trial analysis and simulation"};
  app.require_subcommand(1);

  auto* serve = app.add_subcommand("serve", "Run the session service over framed TCP");
  std::string listen = "127.0.0.1:7070", backend = "mock";
  fs::path roster, log_dir, tutors_csv, students_csv;
  serve->add_option("--listen", listen, "host:port to bind (port 0 picks one)");
  serve->add_option("--roster", roster, "Roster CSV (role,person_id,display_name)")->required();
  serve->add_option("--backend", backend, "Backend URL, or mock[:seed]");
  serve->add_option("--log-dir", log_dir, "Directory for closed-session transcripts");
  serve->add_option("--tutors", tutors_csv, "Tutor profiles CSV");
  serve->add_option("--students", students_csv, "Student profiles CSV");

  auto* label = app.add_subcommand("label", "Count classifier labels per session");
  fs::path models_dir, transcripts, label_out;
  label->add_option("--models", models_dir, "Directory of .tclm models")->required();
  label->add_option("--transcripts", transcripts, "Transcript JSONL")->required();
  label->add_option("--out", label_out, "Per-session counts CSV")->required();

  auto* trainlabel = app.add_subcommand("trainlabel", "Train one label classifier (or all)");
  fs::path train_data, train_out = "models";
  std::string train_label_name;
  std::uint64_t train_seed = 1;
  trainlabel->add_option("--data", train_data, "Labeled utterances JSONL")->required();
  trainlabel->add_option("--label", train_label_name, "Label name, or 'all'")->required();
  trainlabel->add_option("--seed", train_seed, "Split and SGD seed");
  trainlabel->add_option("--out", train_out, "Model output directory");

  auto* analyze = app.add_subcommand("analyze", "Run one analysis over a study");
  AnalyzeArgs aa;
  analyze->add_option("what", aa.what, "itt|tot|het|balance|exposure|fw")
      ->required()
      ->check(CLI::IsMember({"itt", "tot", "het", "balance", "exposure", "fw"}));
  analyze->add_option("--sessions", aa.sessions, "Transcript JSONL");
  analyze->add_option("--tutors", aa.tutors, "Tutors CSV")->required();
  analyze->add_option("--students", aa.students, "Students CSV");
  analyze->add_option("--outcome", aa.outcome, "passed_unconditional|passed_conditional|attempted|participation");
  analyze->add_option("--moderator", aa.moderator, "quality_rating|experience_months (het)");
  analyze->add_option("--labels", aa.labels, "Per-session label counts CSV (fw)");
  analyze->add_option("--models", aa.models, "Model directory, to label --sessions (fw)");
  analyze->add_option("--prior-scale", aa.prior_scale, "Dirichlet prior scale (fw)");
  analyze->add_flag("--no-covariates", aa.no_covariates, "Drop student covariates");
  analyze->add_flag("--no-strata", aa.no_strata, "Drop school x grade fixed effects");
  analyze->add_flag("--no-cluster", aa.no_cluster, "HC1 instead of clustered errors");
  analyze->add_option("--out", aa.out, "Output path (.csv for CSV, JSON otherwise; stdout if omitted)");

  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic trial");
  fs::path sim_config, sim_out;
  std::optional<std::uint64_t> sim_seed;
  simulate->add_option("--config", sim_config, "Harness config JSON (defaults when omitted)");
  simulate->add_option("--seed", sim_seed, "Override the config seed");
  simulate->add_option("--out", sim_out, "Trial directory")->required();

  auto* report = app.add_subcommand("report", "Analyze a trial directory");
  fs::path trial_dir, report_models, report_out;
  report->add_option("--trial", trial_dir, "Trial directory")->required();
  report->add_option("--models", report_models, "Model directory (trained from the trial's sample otherwise)");
  report->add_option("--out", report_out, "Output directory (the trial directory by default)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) return cmd_serve(listen, roster, backend, log_dir, tutors_csv, students_csv);
    if (*label) return cmd_label(models_dir, transcripts, label_out);
    if (*trainlabel) return cmd_trainlabel(train_data, train_label_name, train_seed, train_out);
    if (*analyze) {
      if (aa.what != "fw" && aa.sessions.empty()) throw InvalidArgument("--sessions is required");
      return cmd_analyze(aa);
    }
    if (*simulate) return cmd_simulate(sim_config, sim_seed, sim_out);
    if (*report) return cmd_report(trial_dir, report_models, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
