#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "copilot/deid.hpp"
#include "copilot/domain.hpp"
#include "json.hpp"

namespace copilot {

// Payload sent to a language-model backend. Construction verifies that the
// context respects the window and carries no roster name, so every request
// that exists is safe to transmit.
class SuggestionRequest {
 public:
  static SuggestionRequest make(std::string session_id, std::string lesson_topic,
                                StrategyKind strategy, std::vector<ChatMessage> context,
                                std::uint64_t nonce, const Roster& roster);

  const std::string& session_id() const { return session_id_; }
  const std::string& lesson_topic() const { return lesson_topic_; }
  StrategyKind strategy() const { return strategy_; }
  const std::vector<ChatMessage>& context() const { return context_; }
  std::uint64_t nonce() const { return nonce_; }

  SuggestionRequest with_nonce(std::uint64_t nonce) const;
  SuggestionRequest with_strategy(StrategyKind strategy) const;  // nonce reset to 0

  friend bool operator==(const SuggestionRequest&, const SuggestionRequest&) = default;

 private:
  SuggestionRequest() = default;

  std::string session_id_;
  std::string lesson_topic_;
  StrategyKind strategy_ = StrategyKind::simplify_question;
  std::vector<ChatMessage> context_;
  std::uint64_t nonce_ = 0;
};

class PrivacyViolation : public Error {
 public:
  using Error::Error;
};

struct Suggestion {
  SuggestionRequest request;
  std::string text;
  std::int64_t created_at_ms = 0;
};

// Wire body for the remote service: {lesson_topic, strategy, context, nonce}.
nlohmann::ordered_json request_payload(const SuggestionRequest& request);

class BackendError : public Error {
 public:
  BackendError(const std::string& what, SuggestionRequest request)
      : Error(what), request_(std::move(request)) {}
  const SuggestionRequest& request() const { return request_; }

 private:
  SuggestionRequest request_;
};

class LMBackend {
 public:
  virtual ~LMBackend() = default;
  // Returns non-empty suggestion text or throws BackendError.
  virtual std::string generate(const SuggestionRequest& request) = 0;
};

// Deterministic offline backend: identical requests give identical text and
// consecutive nonces always give different text.
class SeededBackend : public LMBackend {
 public:
  explicit SeededBackend(std::uint64_t seed = 0) : seed_(seed) {}
  std::string generate(const SuggestionRequest& request) override;

 private:
  std::uint64_t seed_;
};

inline constexpr std::string_view kApiKeyEnv = "COPILOT_LM_API_KEY";
inline constexpr std::chrono::seconds kRemoteTimeout{30};

// POSTs request_payload() as JSON to `url` and expects {"text": "..."}.
// The bearer token comes from the COPILOT_LM_API_KEY environment variable.
class RemoteBackend : public LMBackend {
 public:
  explicit RemoteBackend(std::string url, std::chrono::milliseconds timeout = kRemoteTimeout);
  RemoteBackend(std::string url, std::string api_key, std::chrono::milliseconds timeout);
  std::string generate(const SuggestionRequest& request) override;

 private:
  std::string scheme_host_port_;
  std::string path_;
  std::string api_key_;
  std::chrono::milliseconds timeout_;
};

// "mock" or "mock:<seed>" gives a SeededBackend; anything else is a URL.
std::shared_ptr<LMBackend> make_backend(std::string_view spec);

}  // namespace copilot
