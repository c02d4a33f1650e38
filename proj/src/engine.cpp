#include "copilot/engine.hpp"

#include <chrono>

namespace copilot {

std::int64_t system_wall_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

SuggestionRequest build_request(const SessionRecord& session, const Roster& roster,
                                std::string topic, StrategyKind strategy, std::uint64_t nonce) {
  return SuggestionRequest::make(session.session_id, std::move(topic), strategy,
                                 window(session.messages, roster, kContextWindow), nonce, roster);
}

namespace {

bool is_token_char(char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '.' ||
         c == '/' || c == '-';
}

std::string lowered(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

// Trailing sentence punctuation is not part of an answer token ("20." -> "20").
std::string_view strip_trailing_dots(std::string_view s) {
  while (!s.empty() && s.back() == '.') s.remove_suffix(1);
  return s;
}

}  // namespace

StrategyKind default_strategy(std::span<const ChatMessage> messages,
                              std::optional<std::string_view> expected_answer) {
  if (!expected_answer || expected_answer->empty()) return StrategyKind::simplify_question;
  const std::string want = lowered(strip_trailing_dots(*expected_answer));
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->sender != Sender::student) continue;
    const std::string text = lowered(it->text);
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && !is_token_char(text[i])) ++i;
      std::size_t j = i;
      while (j < text.size() && is_token_char(text[j])) ++j;
      if (j > i && strip_trailing_dots(std::string_view(text).substr(i, j - i)) == want) {
        return StrategyKind::affirm_correct;
      }
      i = j;
    }
    return StrategyKind::simplify_question;
  }
  return StrategyKind::simplify_question;
}

CopilotEngine::CopilotEngine(std::string session_id, const Roster& roster, LMBackend& backend,
                             WallClock clock)
    : session_id_(std::move(session_id)), roster_(roster), backend_(backend), clock_(std::move(clock)) {}

PendingGeneration CopilotEngine::begin(SuggestionRequest request, CopilotAction action) {
  if (busy_) throw BusyError();
  if (request.session_id() != session_id_) {
    throw InvalidArgument("request belongs to session " + request.session_id());
  }
  busy_ = true;
  return {std::move(request), action};
}

PendingGeneration CopilotEngine::begin_generate(const SuggestionRequest& request) {
  return begin(request, request.nonce() == 0 ? CopilotAction::activate : CopilotAction::regenerate);
}

PendingGeneration CopilotEngine::begin_activate(std::span<const ChatMessage> history,
                                                std::string topic,
                                                std::optional<StrategyKind> strategy,
                                                std::optional<std::string_view> expected_answer) {
  if (busy_) throw BusyError();
  const StrategyKind chosen = strategy.value_or(default_strategy(history, expected_answer));
  auto request = SuggestionRequest::make(session_id_, std::move(topic), chosen,
                                         window(history, roster_, kContextWindow), 0, roster_);
  return begin(std::move(request), CopilotAction::activate);
}

PendingGeneration CopilotEngine::begin_regenerate(const Suggestion& previous) {
  return begin(previous.request.with_nonce(previous.request.nonce() + 1), CopilotAction::regenerate);
}

PendingGeneration CopilotEngine::begin_switch(const Suggestion& previous, StrategyKind new_strategy) {
  if (new_strategy == previous.request.strategy()) {
    throw InvalidArgument("strategy " + std::string(to_string(new_strategy)) +
                          " is already selected");
  }
  return begin(previous.request.with_strategy(new_strategy), CopilotAction::strategy_switch);
}

Suggestion CopilotEngine::complete(const PendingGeneration& pending, std::string text) {
  if (!busy_) throw InvalidArgument("no generation in flight");
  busy_ = false;
  if (text.empty()) throw BackendError("backend returned empty text", pending.request);
  Suggestion s{pending.request, std::move(text), clock_()};
  log(pending.action, s, std::nullopt);
  history_.push_back(s);
  latest_ = s;
  return s;
}

void CopilotEngine::abandon(const PendingGeneration&) { busy_ = false; }

Suggestion CopilotEngine::run(PendingGeneration pending) {
  std::string text;
  try {
    text = backend_.generate(pending.request);
  } catch (const BackendError&) {
    abandon(pending);
    throw;
  } catch (const std::exception& e) {
    abandon(pending);
    throw BackendError(e.what(), pending.request);
  }
  return complete(pending, std::move(text));
}

Suggestion CopilotEngine::generate(const SuggestionRequest& request) {
  return run(begin_generate(request));
}

Suggestion CopilotEngine::activate(std::span<const ChatMessage> history, std::string topic,
                                   std::optional<StrategyKind> strategy,
                                   std::optional<std::string_view> expected_answer) {
  return run(begin_activate(history, std::move(topic), strategy, expected_answer));
}

Suggestion CopilotEngine::regenerate(const Suggestion& previous) {
  return run(begin_regenerate(previous));
}

Suggestion CopilotEngine::switch_strategy(const Suggestion& previous, StrategyKind new_strategy) {
  return run(begin_switch(previous, new_strategy));
}

CopilotUseEvent CopilotEngine::finalize(const Suggestion& suggestion,
                                        const std::optional<std::string>& edited_text) {
  if (!latest_ || !(latest_->request == suggestion.request) || latest_->text != suggestion.text) {
    throw InvalidArgument("suggestion is not the current suggestion of session " + session_id_);
  }
  if (edited_text && *edited_text != suggestion.text) {
    log(CopilotAction::edit, suggestion, *edited_text);
  }
  const auto send = log(CopilotAction::send, suggestion, edited_text.value_or(suggestion.text));
  latest_.reset();
  return send;
}

CopilotUseEvent& CopilotEngine::log(CopilotAction action, const Suggestion& s,
                                    std::optional<std::string> final_text) {
  CopilotUseEvent e;
  e.session_id = session_id_;
  e.ordinal = next_ordinal_++;
  e.wall_ms = clock_();
  e.action = action;
  e.strategy = s.request.strategy();
  e.context_snapshot = s.request.context();
  e.suggestion_text = s.text;
  e.final_text = std::move(final_text);
  events_.push_back(std::move(e));
  return events_.back();
}

}  // namespace copilot
