#pragma once

// Suggestion lifecycle for one tutoring session: activate, regenerate,
// switch strategy, edit and send. Every interaction is appended to the
// session's event log; only activations and strategy switches are counted
// uses.
//
// The engine is single-writer: callers serialize operations per session.
// Generation is split into begin/complete so a host can run the backend
// call elsewhere while the session keeps routing chat; at most one
// generation may be in flight.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "copilot/backend.hpp"

namespace copilot {

class BusyError : public Error {
 public:
  BusyError() : Error("a suggestion is already being generated for this session") {}
};

using WallClock = std::function<std::int64_t()>;
std::int64_t system_wall_ms();

// context = window(session.messages, 10), de-identified; topic and strategy
// copied verbatim.
SuggestionRequest build_request(const SessionRecord& session, const Roster& roster,
                                std::string topic, StrategyKind strategy, std::uint64_t nonce);

// affirm_correct when the last student message contains the expected answer
// as a whole token, simplify_question otherwise.
StrategyKind default_strategy(std::span<const ChatMessage> messages,
                              std::optional<std::string_view> expected_answer);

struct PendingGeneration {
  SuggestionRequest request;
  CopilotAction action;
};

class CopilotEngine {
 public:
  CopilotEngine(std::string session_id, const Roster& roster, LMBackend& backend,
                WallClock clock = system_wall_ms);

  // Synchronous operations: the backend is called inline.
  Suggestion generate(const SuggestionRequest& request);
  // Windowed, de-identified request over `history` at nonce 0; the strategy
  // falls back to default_strategy() when not given.
  Suggestion activate(std::span<const ChatMessage> history, std::string topic,
                      std::optional<StrategyKind> strategy,
                      std::optional<std::string_view> expected_answer = std::nullopt);
  Suggestion regenerate(const Suggestion& previous);
  Suggestion switch_strategy(const Suggestion& previous, StrategyKind new_strategy);
  // Logs edit (when the text changed) then send; returns the send event.
  CopilotUseEvent finalize(const Suggestion& suggestion,
                           const std::optional<std::string>& edited_text);

  // Split form of the generating operations.
  PendingGeneration begin_generate(const SuggestionRequest& request);
  PendingGeneration begin_activate(std::span<const ChatMessage> history, std::string topic,
                                   std::optional<StrategyKind> strategy,
                                   std::optional<std::string_view> expected_answer = std::nullopt);
  PendingGeneration begin_regenerate(const Suggestion& previous);
  PendingGeneration begin_switch(const Suggestion& previous, StrategyKind new_strategy);
  Suggestion complete(const PendingGeneration& pending, std::string text);
  void abandon(const PendingGeneration& pending);

  bool busy() const { return busy_; }
  const std::string& session_id() const { return session_id_; }
  const std::vector<CopilotUseEvent>& events() const { return events_; }
  const std::vector<Suggestion>& history() const { return history_; }
  const std::optional<Suggestion>& latest() const { return latest_; }
  LMBackend& backend() { return backend_; }

 private:
  PendingGeneration begin(SuggestionRequest request, CopilotAction action);
  Suggestion run(PendingGeneration pending);
  CopilotUseEvent& log(CopilotAction action, const Suggestion& s,
                       std::optional<std::string> final_text);

  std::string session_id_;
  const Roster& roster_;
  LMBackend& backend_;
  WallClock clock_;
  bool busy_ = false;
  std::uint64_t next_ordinal_ = 1;
  std::vector<CopilotUseEvent> events_;
  std::vector<Suggestion> history_;
  std::optional<Suggestion> latest_;
};

}  // namespace copilot
