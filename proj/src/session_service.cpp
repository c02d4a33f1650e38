#include "copilot/session_service.hpp"

#include <boost/asio/post.hpp>
#include <boost/asio/strand.hpp>
#include <boost/asio/thread_pool.hpp>
#include <fstream>
#include <future>
#include <set>

#include "copilot/formats.hpp"

namespace copilot {

namespace asio = boost::asio;

struct SessionService::Pools {
  Pools(std::size_t session_threads, std::size_t backend_threads)
      : sessions(session_threads), backend(backend_threads) {}
  asio::thread_pool sessions;
  asio::thread_pool backend;
};

struct SessionService::Session {
  Session(asio::thread_pool& pool, SessionRecord rec, TutorProfile t, StudentProfile s)
      : strand(asio::make_strand(pool)),
        record(std::move(rec)),
        tutor(std::move(t)),
        student(std::move(s)) {}

  asio::strand<asio::thread_pool::executor_type> strand;
  std::atomic<std::size_t> inbox{0};

  // Everything below is owned by the strand.
  SessionRecord record;
  TutorProfile tutor;
  StudentProfile student;
  Phase phase = Phase::open;
  std::map<ConnectionId, std::pair<std::string, Role>> members;
  std::unique_ptr<CopilotEngine> engine;

  bool copilot_enabled() const { return tutor.arm == Arm::treatment; }
};

namespace {

ServiceError translate(const std::exception& e) {
  if (auto* se = dynamic_cast<const ServiceError*>(&e)) return *se;
  if (dynamic_cast<const BusyError*>(&e)) return ServiceError("busy", e.what());
  if (dynamic_cast<const BackendError*>(&e)) return ServiceError("backend_failure", e.what());
  if (dynamic_cast<const PrivacyViolation*>(&e)) return ServiceError("privacy_violation", e.what());
  if (dynamic_cast<const InvalidArgument*>(&e)) return ServiceError("invalid_argument", e.what());
  return ServiceError("internal", e.what());
}

ordered_json suggestion_json(const Suggestion& s) {
  ordered_json j;
  j["strategy"] = to_string(s.request.strategy());
  j["text"] = s.text;
  j["nonce"] = s.request.nonce();
  return j;
}

}  // namespace

SessionService::SessionService(ServiceOptions options, Roster roster,
                               std::shared_ptr<LMBackend> backend)
    : options_(std::move(options)),
      roster_(std::move(roster)),
      backend_(std::move(backend)),
      pools_(std::make_unique<Pools>(std::max<std::size_t>(1, options_.session_threads),
                                     std::max<std::size_t>(1, options_.backend_threads))) {
  if (!backend_) throw InvalidArgument("session service needs a backend");
  if (!options_.log_dir.empty()) {
    std::filesystem::create_directories(options_.log_dir);
    log_file_ = std::make_unique<std::ofstream>(options_.log_dir / "sessions.jsonl",
                                                std::ios::app | std::ios::binary);
    if (!*log_file_) throw IoError("cannot open " + (options_.log_dir / "sessions.jsonl").string(), 0);
  }
}

SessionService::~SessionService() {
  wait_idle();
  pools_->sessions.join();
  pools_->backend.join();
}

void SessionService::add_tutor(TutorProfile tutor) {
  validate(tutor);
  std::unique_lock lock(registry_mutex_);
  tutors_[tutor.tutor_id] = std::move(tutor);
}

void SessionService::add_student(StudentProfile student) {
  validate(student);
  std::unique_lock lock(registry_mutex_);
  students_[student.student_id] = std::move(student);
}

std::string SessionService::create_session(const TutorProfile& tutor,
                                           const StudentProfile& student, std::string topic) {
  add_tutor(tutor);
  add_student(student);
  return create_session(tutor.tutor_id, student.student_id, std::move(topic));
}

std::string SessionService::create_session(std::string_view tutor_id, std::string_view student_id,
                                           std::string topic) {
  std::unique_lock lock(registry_mutex_);
  const auto t = tutors_.find(std::string(tutor_id));
  if (t == tutors_.end()) throw ServiceError("unknown_person", "unknown tutor " + std::string(tutor_id));
  const auto s = students_.find(std::string(student_id));
  if (s == students_.end()) {
    throw ServiceError("unknown_person", "unknown student " + std::string(student_id));
  }
  const auto pair = std::make_pair(std::string(tutor_id), std::string(student_id));
  if (auto it = active_pairs_.find(pair); it != active_pairs_.end()) {
    throw ServiceError("duplicate_pairing", "tutor and student already share open session " + it->second);
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "s-%06llu", static_cast<unsigned long long>(next_session_++));
  SessionRecord rec;
  rec.session_id = buf;
  rec.tutor_id = t->second.tutor_id;
  rec.student_id = s->second.student_id;
  rec.school_id = s->second.school_id;
  rec.grade = s->second.grade;
  rec.lesson_topic = std::move(topic);
  auto session = std::make_shared<Session>(pools_->sessions, rec, t->second, s->second);
  session->engine = std::make_unique<CopilotEngine>(rec.session_id, roster_, *backend_, options_.clock);
  sessions_.emplace(rec.session_id, session);
  creation_order_.push_back(rec.session_id);
  active_pairs_.emplace(pair, rec.session_id);
  return rec.session_id;
}

SessionService::SessionPtr SessionService::find(const std::string& session_id) const {
  std::shared_lock lock(registry_mutex_);
  auto it = sessions_.find(session_id);
  return it == sessions_.end() ? nullptr : it->second;
}

SessionService::SessionPtr SessionService::find_or_throw(const std::string& session_id) const {
  auto s = find(session_id);
  if (!s) throw ServiceError("unknown_session", "unknown session '" + session_id + "'");
  return s;
}

void SessionService::work_started() {
  std::lock_guard lock(idle_mutex_);
  ++outstanding_;
}

void SessionService::work_finished() {
  std::lock_guard lock(idle_mutex_);
  if (--outstanding_ == 0) idle_cv_.notify_all();
}

void SessionService::wait_idle() {
  std::unique_lock lock(idle_mutex_);
  idle_cv_.wait(lock, [&] { return outstanding_ == 0; });
}

template <typename Fn>
void SessionService::enqueue(const SessionPtr& session, Fn&& fn) {
  if (session->inbox.fetch_add(1) >= options_.inbox_capacity) {
    session->inbox.fetch_sub(1);
    throw ServiceError("inbox_full", "session " + session->record.session_id + " inbox is full");
  }
  work_started();
  asio::post(session->strand, [this, session, fn = std::forward<Fn>(fn)]() mutable {
    session->inbox.fetch_sub(1);
    fn();
    work_finished();
  });
}

template <typename Fn>
auto SessionService::run_sync(const SessionPtr& session, Fn&& fn) -> decltype(fn()) {
  using Result = decltype(fn());
  auto task = std::make_shared<std::packaged_task<Result()>>(std::forward<Fn>(fn));
  auto future = task->get_future();
  enqueue(session, [task] { (*task)(); });
  try {
    return future.get();
  } catch (const ServiceError&) {
    throw;
  } catch (const std::exception& e) {
    throw translate(e);
  }
}

void SessionService::start_generation(const SessionPtr& session, PendingGeneration pending,
                                      SuggestionCallback done) {
  work_started();
  asio::post(pools_->backend, [this, session, pending = std::move(pending), done = std::move(done)] {
    std::string text;
    std::string failure;
    try {
      text = backend_->generate(pending.request);
      if (text.empty()) failure = "backend returned empty text";
    } catch (const std::exception& e) {
      failure = e.what();
    }
    asio::post(session->strand, [this, session, pending, done, text = std::move(text), failure] {
      auto& engine = *session->engine;
      if (!failure.empty()) {
        engine.abandon(pending);
        const ServiceError err("backend_failure", failure);
        done(nullptr, &err);
      } else if (session->phase == Phase::closed) {
        engine.abandon(pending);
        const ServiceError err("invalid_state", "session closed while generating");
        done(nullptr, &err);
      } else {
        const Suggestion s = engine.complete(pending, text);
        for (const auto& [conn, member] : session->members) {
          if (member.second == Role::tutor) {
            deliver(conn, suggestion_frame(*session, s, pending.action, 0));
          }
        }
        done(&s, nullptr);
      }
      work_finished();
    });
  });
}

namespace {

void require_copilot(const SessionRecord& rec, bool enabled, Phase phase) {
  if (!enabled) {
    throw ServiceError("copilot_unavailable", "copilot unavailable for session " + rec.session_id);
  }
  if (phase == Phase::closed) throw ServiceError("invalid_state", "session is closed");
}

}  // namespace

Suggestion SessionService::await_generation(const SessionPtr& session,
                                            std::function<PendingGeneration(Session&)> begin) {
  auto promise = std::make_shared<std::promise<Suggestion>>();
  auto future = promise->get_future();
  enqueue(session, [this, session, begin = std::move(begin), promise] {
    try {
      auto pending = begin(*session);
      start_generation(session, std::move(pending),
                       [promise](const Suggestion* s, const ServiceError* err) {
                         if (s) {
                           promise->set_value(*s);
                         } else {
                           promise->set_exception(std::make_exception_ptr(*err));
                         }
                       });
    } catch (const std::exception& e) {
      promise->set_exception(std::make_exception_ptr(translate(e)));
    }
  });
  return future.get();
}

std::uint64_t SessionService::post_message(const std::string& session_id, Sender sender,
                                           std::string text) {
  auto s = find_or_throw(session_id);
  return run_sync(s, [this, s, sender, text = std::move(text)]() mutable {
    return append_chat(*s, sender, std::move(text), 0, 0);
  });
}

Suggestion SessionService::copilot_activate(const std::string& session_id,
                                            std::optional<StrategyKind> strategy,
                                            std::optional<std::string> expected_answer) {
  auto s = find_or_throw(session_id);
  return await_generation(s, [strategy, expected_answer](Session& ss) {
    require_copilot(ss.record, ss.copilot_enabled(), ss.phase);
    return ss.engine->begin_activate(ss.record.messages, ss.record.lesson_topic, strategy,
                                     expected_answer ? std::optional<std::string_view>(*expected_answer)
                                                     : std::nullopt);
  });
}

Suggestion SessionService::copilot_regenerate(const std::string& session_id) {
  auto s = find_or_throw(session_id);
  return await_generation(s, [](Session& ss) {
    require_copilot(ss.record, ss.copilot_enabled(), ss.phase);
    if (!ss.engine->latest()) throw ServiceError("invalid_state", "no suggestion to regenerate");
    return ss.engine->begin_regenerate(*ss.engine->latest());
  });
}

Suggestion SessionService::copilot_switch(const std::string& session_id, StrategyKind strategy) {
  auto s = find_or_throw(session_id);
  return await_generation(s, [strategy](Session& ss) {
    require_copilot(ss.record, ss.copilot_enabled(), ss.phase);
    if (!ss.engine->latest()) throw ServiceError("invalid_state", "no suggestion to switch");
    return ss.engine->begin_switch(*ss.engine->latest(), strategy);
  });
}

CopilotUseEvent SessionService::copilot_send(const std::string& session_id,
                                             std::optional<std::string> edited_text) {
  auto s = find_or_throw(session_id);
  return run_sync(s, [this, s, edited = std::move(edited_text)]() mutable {
    return send_suggestion(*s, std::move(edited), 0, 0);
  });
}

SessionState SessionService::start_exit_ticket(const std::string& session_id) {
  auto s = find_or_throw(session_id);
  return run_sync(s, [this, s] { return enter_exit_ticket(*s); });
}

SessionState SessionService::record_exit_ticket(const std::string& session_id, bool attempted,
                                                bool passed, double participation_points) {
  auto s = find_or_throw(session_id);
  return run_sync(s, [this, s, attempted, passed, participation_points] {
    return close_with_outcome(*s, attempted, passed, participation_points);
  });
}

SessionState SessionService::state(const std::string& session_id) {
  auto s = find_or_throw(session_id);
  return run_sync(s, [this, s] { return state_of(*s); });
}

SessionRecord SessionService::snapshot(const std::string& session_id) {
  auto s = find_or_throw(session_id);
  return run_sync(s, [s] {
    SessionRecord rec = s->record;
    rec.copilot_uses = s->engine->events();
    return rec;
  });
}

std::uint64_t SessionService::append_chat(Session& session, Sender sender, std::string text,
                                          ConnectionId origin, std::uint64_t seq) {
  if (session.phase == Phase::closed) {
    throw ServiceError("invalid_state", "session " + session.record.session_id + " is closed");
  }
  ChatMessage m;
  m.sender = sender;
  m.ordinal = session.record.messages.size() + 1;
  m.wall_ms = options_.clock();
  m.text = std::move(text);
  session.record.messages.push_back(m);
  broadcast_chat(session, session.record.messages.back(), origin, seq);
  return m.ordinal;
}

CopilotUseEvent SessionService::send_suggestion(Session& session, std::optional<std::string> edited,
                                                ConnectionId origin, std::uint64_t seq) {
  require_copilot(session.record, session.copilot_enabled(), session.phase);
  const auto& latest = session.engine->latest();
  if (!latest) throw ServiceError("invalid_state", "no suggestion to send");
  if (session.engine->busy()) throw ServiceError("busy", "a suggestion is being generated");
  auto event = session.engine->finalize(*latest, edited);
  append_chat(session, Sender::tutor, *event.final_text, origin, seq);
  return event;
}

SessionState SessionService::enter_exit_ticket(Session& session) {
  if (session.phase != Phase::open) {
    throw ServiceError("invalid_state", "exit ticket can only start from the open phase");
  }
  session.phase = Phase::exit_ticket;
  return state_of(session);
}

SessionState SessionService::close_with_outcome(Session& session, bool attempted, bool passed,
                                                double points) {
  if (session.phase != Phase::exit_ticket) {
    throw ServiceError("invalid_state", "exit ticket results need the exit_ticket phase");
  }
  if (passed && !attempted) {
    throw ServiceError("invalid_argument", "an exit ticket cannot pass without an attempt");
  }
  if (!(points >= 0.0)) throw ServiceError("invalid_argument", "participation points must be >= 0");
  session.record.exit_ticket_attempted = attempted;
  session.record.exit_ticket_passed = passed;
  session.record.participation_points = points;
  session.record.copilot_uses = session.engine->events();
  session.phase = Phase::closed;
  persist(session.record);
  {
    std::unique_lock lock(registry_mutex_);
    closed_records_.push_back(session.record);
    active_pairs_.erase({session.record.tutor_id, session.record.student_id});
  }
  const auto state = state_of(session);
  for (const auto& [conn, member] : session.members) deliver(conn, state_frame(session, 0));
  return state;
}

SessionState SessionService::state_of(const Session& session) const {
  SessionState st;
  st.session_id = session.record.session_id;
  st.phase = session.phase;
  std::set<std::string> people;
  for (const auto& [conn, member] : session.members) people.insert(member.first);
  st.participants.assign(people.begin(), people.end());
  st.latest_suggestion = session.engine->latest();
  st.copilot_enabled = session.copilot_enabled();
  return st;
}

void SessionService::persist(const SessionRecord& record) {
  if (!log_file_) return;
  std::lock_guard lock(persist_mutex_);
  write_jsonl_line(*log_file_, record);
  log_file_->flush();
  if (!*log_file_) throw IoError("failed flushing session log", 0);
}

std::vector<SessionRecord> SessionService::records(const ExportFilter& filter) {
  std::vector<SessionRecord> out;
  std::vector<SessionPtr> open;
  {
    std::shared_lock lock(registry_mutex_);
    for (const auto& rec : closed_records_) {
      if (filter.arm && tutors_.at(rec.tutor_id).arm != *filter.arm) continue;
      out.push_back(rec);
    }
    if (filter.include_open) {
      for (const auto& id : creation_order_) {
        const auto& s = sessions_.at(id);
        if (filter.arm && s->tutor.arm != *filter.arm) continue;
        open.push_back(s);
      }
    }
  }
  for (const auto& s : open) {
    auto rec = run_sync(s, [s]() -> std::optional<SessionRecord> {
      if (s->phase == Phase::closed) return std::nullopt;
      SessionRecord r = s->record;
      r.copilot_uses = s->engine->events();
      return r;
    });
    if (rec) out.push_back(std::move(*rec));
  }
  return out;
}

std::size_t SessionService::export_transcripts(std::ostream& out, const ExportFilter& filter) {
  const auto recs = records(filter);
  write_jsonl(out, recs);
  return recs.size();
}

// ---------------------------------------------------------------------------
// Connection front end

ConnectionId SessionService::connect(Sink sink) {
  const auto id = next_connection_.fetch_add(1);
  std::lock_guard lock(connections_mutex_);
  connections_.emplace(id, std::move(sink));
  return id;
}

void SessionService::disconnect(ConnectionId id) {
  {
    std::lock_guard lock(connections_mutex_);
    connections_.erase(id);
  }
  std::vector<SessionPtr> all;
  {
    std::shared_lock lock(registry_mutex_);
    for (const auto& [_, s] : sessions_) all.push_back(s);
  }
  for (const auto& s : all) {
    try {
      enqueue(s, [s, id] { s->members.erase(id); });
    } catch (const ServiceError&) {
      // A full inbox only delays cleanup; deliver() ignores dead connections.
    }
  }
}

void SessionService::deliver(ConnectionId id, const WireMessage& message) {
  Sink sink;
  {
    std::lock_guard lock(connections_mutex_);
    auto it = connections_.find(id);
    if (it == connections_.end()) return;
    sink = it->second;
  }
  sink(message);
}

void SessionService::broadcast_chat(Session& session, const ChatMessage& chat, ConnectionId origin,
                                    std::uint64_t seq) {
  WireMessage m;
  m.kind = WireKind::chat;
  m.session_id = session.record.session_id;
  m.payload["sender"] = to_string(chat.sender);
  m.payload["ordinal"] = chat.ordinal;
  m.payload["wall_ms"] = chat.wall_ms;
  m.payload["text"] = chat.text;
  for (const auto& [conn, member] : session.members) {
    m.seq = conn == origin ? seq : 0;
    deliver(conn, m);
  }
}

WireMessage SessionService::state_frame(const Session& session, std::uint64_t seq) const {
  const auto st = state_of(session);
  WireMessage m;
  m.kind = WireKind::session_state;
  m.session_id = st.session_id;
  m.seq = seq;
  m.payload["phase"] = to_string(st.phase);
  m.payload["participants"] = st.participants;
  m.payload["tutor_id"] = session.record.tutor_id;
  m.payload["student_id"] = session.record.student_id;
  m.payload["topic"] = session.record.lesson_topic;
  m.payload["copilot_enabled"] = st.copilot_enabled;
  m.payload["latest_suggestion"] =
      st.latest_suggestion ? suggestion_json(*st.latest_suggestion) : ordered_json(nullptr);
  return m;
}

WireMessage SessionService::suggestion_frame(const Session& session, const Suggestion& s,
                                             CopilotAction action, std::uint64_t seq) const {
  WireMessage m;
  m.kind = WireKind::suggestion;
  m.session_id = session.record.session_id;
  m.seq = seq;
  m.payload = suggestion_json(s);
  m.payload["action"] = to_string(action);
  return m;
}

void SessionService::submit(ConnectionId id, WireMessage message) {
  try {
    switch (message.kind) {
      case WireKind::join:
        handle_join(id, message);
        return;
      case WireKind::suggestion:
      case WireKind::session_state:
      case WireKind::error:
        throw ServiceError("bad_frame", "server-only message kind from client");
      default:
        break;
    }
    auto s = find_or_throw(message.session_id);
    enqueue(s, [this, s, id, message] { handle(s, id, message); });
  } catch (const std::exception& e) {
    const auto err = translate(e);
    deliver(id, make_error(message.session_id, message.seq, err.code(), err.what()));
  }
}

void SessionService::handle_join(ConnectionId origin, const WireMessage& message) {
  const auto& p = message.payload;
  const auto person = p.value("person_id", std::string());
  if (person.empty()) throw ServiceError("invalid_argument", "join needs person_id");
  std::string session_id = message.session_id;
  if (session_id.empty()) {
    const auto student = p.value("student_id", std::string());
    if (student.empty()) throw ServiceError("invalid_argument", "join without session needs student_id");
    session_id = create_session(person, student, p.value("topic", std::string()));
  }
  auto s = find_or_throw(session_id);
  const auto seq = message.seq;
  enqueue(s, [this, s, origin, person, seq] {
    try {
      Role role;
      if (person == s->record.tutor_id) {
        role = Role::tutor;
      } else if (person == s->record.student_id) {
        role = Role::student;
      } else {
        throw ServiceError("not_participant", person + " is not part of session " + s->record.session_id);
      }
      s->members[origin] = {person, role};
      deliver(origin, state_frame(*s, seq));
    } catch (const std::exception& e) {
      const auto err = translate(e);
      deliver(origin, make_error(s->record.session_id, seq, err.code(), err.what()));
    }
  });
}

void SessionService::handle(const SessionPtr& session, ConnectionId origin,
                            const WireMessage& message) {
  Session& s = *session;
  const auto seq = message.seq;
  try {
    const auto member = s.members.find(origin);
    if (member == s.members.end()) {
      throw ServiceError("not_participant", "connection has not joined session " + s.record.session_id);
    }
    const Role role = member->second.second;
    const bool is_tutor = role == Role::tutor;
    auto tutor_only = [&] {
      if (!is_tutor) throw ServiceError("not_participant", "only the tutor may send this message");
    };
    const auto& p = message.payload;
    auto reply_suggestion = [this, session, origin, seq](const Suggestion* sug, const ServiceError* err) {
      // The tutor connections already received the suggestion frame with seq 0;
      // the requester additionally gets the echo of its sequence number.
      if (sug) {
        deliver(origin, suggestion_frame(*session, *sug, session->engine->events().back().action, seq));
      } else {
        deliver(origin, make_error(session->record.session_id, seq, err->code(), err->what()));
      }
    };
    switch (message.kind) {
      case WireKind::chat:
        append_chat(s, is_tutor ? Sender::tutor : Sender::student, p.at("text").get<std::string>(),
                    origin, seq);
        break;
      case WireKind::copilot_activate: {
        tutor_only();
        require_copilot(s.record, s.copilot_enabled(), s.phase);
        std::optional<StrategyKind> strategy;
        if (p.contains("strategy")) strategy = parse_enum<StrategyKind>(p.at("strategy").get<std::string>());
        std::optional<std::string> expected;
        if (p.contains("expected_answer")) expected = p.at("expected_answer").get<std::string>();
        auto pending = s.engine->begin_activate(
            s.record.messages, s.record.lesson_topic, strategy,
            expected ? std::optional<std::string_view>(*expected) : std::nullopt);
        start_generation(session, std::move(pending), reply_suggestion);
        break;
      }
      case WireKind::copilot_regenerate: {
        tutor_only();
        require_copilot(s.record, s.copilot_enabled(), s.phase);
        if (!s.engine->latest()) throw ServiceError("invalid_state", "no suggestion to regenerate");
        start_generation(session, s.engine->begin_regenerate(*s.engine->latest()), reply_suggestion);
        break;
      }
      case WireKind::copilot_switch: {
        tutor_only();
        require_copilot(s.record, s.copilot_enabled(), s.phase);
        if (!s.engine->latest()) throw ServiceError("invalid_state", "no suggestion to switch");
        const auto strategy = parse_enum<StrategyKind>(p.at("strategy").get<std::string>());
        start_generation(session, s.engine->begin_switch(*s.engine->latest(), strategy),
                         reply_suggestion);
        break;
      }
      case WireKind::copilot_send: {
        tutor_only();
        std::optional<std::string> edited;
        if (p.contains("final_text") && !p.at("final_text").is_null()) {
          edited = p.at("final_text").get<std::string>();
        }
        send_suggestion(s, std::move(edited), origin, seq);
        break;
      }
      case WireKind::exit_ticket_start:
        tutor_only();
        enter_exit_ticket(s);
        deliver(origin, state_frame(s, seq));
        break;
      case WireKind::exit_ticket_result: {
        tutor_only();
        close_with_outcome(s, p.at("attempted").get<bool>(), p.at("passed").get<bool>(),
                           p.value("participation_points", 0.0));
        deliver(origin, state_frame(s, seq));
        break;
      }
      default:
        throw ServiceError("bad_frame", "unexpected message kind");
    }
  } catch (const nlohmann::json::exception& e) {
    deliver(origin, make_error(s.record.session_id, seq, "invalid_argument", e.what()));
  } catch (const std::exception& e) {
    const auto err = translate(e);
    deliver(origin, make_error(s.record.session_id, seq, err.code(), err.what()));
  }
}

}  // namespace copilot
