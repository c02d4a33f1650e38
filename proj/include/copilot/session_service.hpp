#pragma once

// Hosts concurrent tutoring sessions. Each session is owned by a serialized
// command queue (an asio strand) with a bounded inbox; copilot backend
// calls run on a separate pool and deliver their suggestion back through
// the session queue, so chat routing never waits on the backend.
//
// Two front ends share the same core:
//  * a typed, blocking API (create_session, post_message, ...) for
//    embedding and tests;
//  * submit(), which takes protocol frames from a registered connection and
//    answers through that connection's sink.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "copilot/engine.hpp"
#include "copilot/wire.hpp"

namespace copilot {

enum class Phase { open, exit_ticket, closed };

template <>
struct EnumNames<Phase> {
  static constexpr std::string_view type_name = "phase";
  static constexpr std::array<std::string_view, 3> names{"open", "exit_ticket", "closed"};
};

struct SessionState {
  std::string session_id;
  Phase phase = Phase::open;
  std::vector<std::string> participants;  // person ids currently joined
  std::optional<Suggestion> latest_suggestion;
  bool copilot_enabled = false;
};

// Error with a protocol error code (see docs/protocol.md).
class ServiceError : public Error {
 public:
  ServiceError(std::string code, const std::string& message)
      : Error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

struct ServiceOptions {
  std::filesystem::path log_dir;  // empty: no transcript persistence
  std::size_t inbox_capacity = 1024;
  std::size_t session_threads = 2;
  std::size_t backend_threads = 4;
  WallClock clock = system_wall_ms;
};

struct ExportFilter {
  std::optional<Arm> arm;
  bool include_open = false;
};

using ConnectionId = std::uint64_t;
using Sink = std::function<void(const WireMessage&)>;

class SessionService {
 public:
  SessionService(ServiceOptions options, Roster roster, std::shared_ptr<LMBackend> backend);
  ~SessionService();
  SessionService(const SessionService&) = delete;
  SessionService& operator=(const SessionService&) = delete;

  void add_tutor(TutorProfile tutor);
  void add_student(StudentProfile student);
  const Roster& roster() const { return roster_; }

  // Registers both profiles if needed. A second open session for the same
  // tutor-student pair is rejected.
  std::string create_session(const TutorProfile& tutor, const StudentProfile& student,
                             std::string topic);
  std::string create_session(std::string_view tutor_id, std::string_view student_id,
                             std::string topic);

  // Typed blocking API. Failures throw ServiceError.
  std::uint64_t post_message(const std::string& session_id, Sender sender, std::string text);
  Suggestion copilot_activate(const std::string& session_id,
                              std::optional<StrategyKind> strategy = std::nullopt,
                              std::optional<std::string> expected_answer = std::nullopt);
  Suggestion copilot_regenerate(const std::string& session_id);
  Suggestion copilot_switch(const std::string& session_id, StrategyKind strategy);
  // Sends the current suggestion (edited or not) as a tutor chat message.
  CopilotUseEvent copilot_send(const std::string& session_id,
                               std::optional<std::string> edited_text = std::nullopt);
  SessionState start_exit_ticket(const std::string& session_id);
  SessionState record_exit_ticket(const std::string& session_id, bool attempted, bool passed,
                                  double participation_points = 0.0);
  SessionState state(const std::string& session_id);
  SessionRecord snapshot(const std::string& session_id);

  // Connection front end.
  ConnectionId connect(Sink sink);
  void disconnect(ConnectionId id);
  void submit(ConnectionId id, WireMessage message);

  // Closed sessions in close order, then (when asked) open sessions in
  // creation order.
  std::vector<SessionRecord> records(const ExportFilter& filter = {});
  std::size_t export_transcripts(std::ostream& out, const ExportFilter& filter = {});

  // Blocks until every queued command and backend call has finished.
  void wait_idle();

 private:
  struct Session;
  using SessionPtr = std::shared_ptr<Session>;

  SessionPtr find(const std::string& session_id) const;
  SessionPtr find_or_throw(const std::string& session_id) const;

  template <typename Fn>
  void enqueue(const SessionPtr& session, Fn&& fn);
  template <typename Fn>
  auto run_sync(const SessionPtr& session, Fn&& fn) -> decltype(fn());

  using SuggestionCallback = std::function<void(const Suggestion*, const ServiceError*)>;
  void start_generation(const SessionPtr& session, PendingGeneration pending,
                        SuggestionCallback done);
  Suggestion await_generation(const SessionPtr& session,
                              std::function<PendingGeneration(Session&)> begin);

  std::uint64_t append_chat(Session& session, Sender sender, std::string text,
                            ConnectionId origin, std::uint64_t seq);
  CopilotUseEvent send_suggestion(Session& session, std::optional<std::string> edited,
                                  ConnectionId origin, std::uint64_t seq);
  SessionState enter_exit_ticket(Session& session);
  SessionState close_with_outcome(Session& session, bool attempted, bool passed, double points);
  SessionState state_of(const Session& session) const;
  void persist(const SessionRecord& record);

  void handle(const SessionPtr& session, ConnectionId origin, const WireMessage& message);
  void handle_join(ConnectionId origin, const WireMessage& message);
  void deliver(ConnectionId id, const WireMessage& message);
  void broadcast_chat(Session& session, const ChatMessage& chat, ConnectionId origin,
                      std::uint64_t seq);
  WireMessage state_frame(const Session& session, std::uint64_t seq) const;
  WireMessage suggestion_frame(const Session& session, const Suggestion& s,
                               CopilotAction action, std::uint64_t seq) const;

  void work_started();
  void work_finished();

  ServiceOptions options_;
  Roster roster_;
  std::shared_ptr<LMBackend> backend_;

  struct Pools;
  std::unique_ptr<Pools> pools_;

  mutable std::shared_mutex registry_mutex_;
  std::unordered_map<std::string, TutorProfile> tutors_;
  std::unordered_map<std::string, StudentProfile> students_;
  std::map<std::string, SessionPtr> sessions_;
  std::vector<std::string> creation_order_;
  std::map<std::pair<std::string, std::string>, std::string> active_pairs_;
  std::uint64_t next_session_ = 1;

  std::mutex connections_mutex_;
  std::unordered_map<ConnectionId, Sink> connections_;
  std::atomic<ConnectionId> next_connection_{1};

  std::vector<SessionRecord> closed_records_;  // guarded by registry_mutex_

  std::mutex persist_mutex_;
  std::unique_ptr<std::ofstream> log_file_;

  std::mutex idle_mutex_;
  std::condition_variable idle_cv_;
  std::size_t outstanding_ = 0;
};

}  // namespace copilot
