#include <array>
#include <cstdlib>

#include "copilot/backend.hpp"
#include "copilot/hash.hpp"
#include "httplib.h"

namespace copilot {

SuggestionRequest SuggestionRequest::make(std::string session_id, std::string lesson_topic,
                                          StrategyKind strategy, std::vector<ChatMessage> context,
                                          std::uint64_t nonce, const Roster& roster) {
  if (context.size() > kContextWindow) {
    throw PrivacyViolation("suggestion context holds " + std::to_string(context.size()) +
                           " messages; the limit is " + std::to_string(kContextWindow));
  }
  for (const auto& m : context) {
    if (contains_roster_name(m.text, roster)) {
      throw PrivacyViolation("suggestion context contains a roster name");
    }
  }
  SuggestionRequest r;
  r.session_id_ = std::move(session_id);
  r.lesson_topic_ = std::move(lesson_topic);
  r.strategy_ = strategy;
  r.context_ = std::move(context);
  r.nonce_ = nonce;
  return r;
}

SuggestionRequest SuggestionRequest::with_nonce(std::uint64_t nonce) const {
  SuggestionRequest r = *this;
  r.nonce_ = nonce;
  return r;
}

SuggestionRequest SuggestionRequest::with_strategy(StrategyKind strategy) const {
  SuggestionRequest r = *this;
  r.strategy_ = strategy;
  r.nonce_ = 0;
  return r;
}

nlohmann::ordered_json request_payload(const SuggestionRequest& request) {
  nlohmann::ordered_json j;
  j["lesson_topic"] = request.lesson_topic();
  j["strategy"] = to_string(request.strategy());
  auto& ctx = j["context"] = nlohmann::ordered_json::array();
  for (const auto& m : request.context()) {
    ctx.push_back({{"sender", to_string(m.sender)}, {"text", m.text}});
  }
  j["nonce"] = request.nonce();
  return j;
}

namespace {

using Bank = std::array<std::string_view, 6>;

// "{topic}" is substituted with the lesson topic.
constexpr std::array<Bank, 7> kSuggestionBank{{
    // provide_solution
    {"Let's walk through it together: first we set up the {topic} problem, then solve it step by step.",
     "Here is one way to solve it: write what we know, apply the {topic} rule, and check the result.",
     "The full solution uses the {topic} idea: let's line up each step so you can follow along.",
     "Let me show the complete solution, and after each step tell me if it makes sense.",
     "We can solve it like this: identify the key numbers, apply {topic}, and simplify.",
     "Here's the solution path for this {topic} question. Which step would you like to revisit?"},
    // worked_example
    {"Let's look at a similar {topic} example first, then you can try yours.",
     "Here's a worked example with smaller numbers. Watch how each step uses {topic}.",
     "I'll model one {topic} problem out loud, and then it's your turn with the next one.",
     "Take a look at this example: notice what we do first and why.",
     "Let's study one finished {topic} example and name each step together.",
     "Here is an example solved step by step. What do you notice about the second step?"},
    // minor_correction
    {"You're very close! Check the last step of your {topic} work again.",
     "Almost there. Look carefully at how you lined up the numbers.",
     "Nice thinking. One small detail is off; can you find it in your last step?",
     "Your method works. Double-check the sign in your final step.",
     "So close! Re-read the question and compare it with your answer.",
     "Good work so far. Look again at the place value in your answer."},
    // similar_problem
    {"Let's try a similar {topic} problem with simpler numbers first.",
     "Before we go on, try this one: it's like the last problem but a little smaller.",
     "Here's a problem just like this one. What would you do first?",
     "Let's practice the same {topic} idea with a new problem.",
     "Try this similar question; it uses the same steps you just used.",
     "Let's test that idea on a problem that looks almost the same."},
    // simplify_question
    {"Let's break this {topic} problem into smaller steps. What do we need to find first?",
     "What is the question asking us to find?",
     "Let's start small: what do you notice about the numbers in this problem?",
     "Can you tell me one thing you already know about {topic}?",
     "Let's take it one piece at a time. What is the first number we need?",
     "What would be a good first step here?"},
    // affirm_correct
    {"Yes, that's correct! Can you explain how you got it?",
     "Exactly right! You used the {topic} idea perfectly.",
     "That's the right answer. Nice work checking each step.",
     "Correct! What made you choose that strategy?",
     "You got it! That's exactly how {topic} works.",
     "That's right. Great job explaining your thinking."},
    // encourage_student
    {"You're working hard on this, and it shows. Keep going!",
     "Mistakes help us learn. Let's keep thinking about {topic} together.",
     "I can see you're trying different ideas. That's what good mathematicians do.",
     "Don't give up: you already figured out the first part.",
     "You've got this. Take your time and think it through.",
     "It's okay to find this tricky. Let's keep working on it together."},
}};

std::string substitute_topic(std::string_view tmpl, std::string_view topic) {
  std::string out;
  const std::string_view key = "{topic}";
  std::size_t pos = 0;
  while (true) {
    const auto hit = tmpl.find(key, pos);
    if (hit == std::string_view::npos) break;
    out.append(tmpl.substr(pos, hit - pos));
    out.append(topic.empty() ? std::string_view("this") : topic);
    pos = hit + key.size();
  }
  out.append(tmpl.substr(pos));
  return out;
}

}  // namespace

std::string SeededBackend::generate(const SuggestionRequest& request) {
  std::uint64_t h = fnv1a64(request.lesson_topic(), mix64(seed_) | 1);
  h = fnv1a64(to_string(request.strategy()), h);
  for (const auto& m : request.context()) {
    h = fnv1a64(to_string(m.sender), h);
    h = fnv1a64(m.text, h);
  }
  const auto& bank = kSuggestionBank[static_cast<std::size_t>(request.strategy())];
  // Consecutive nonces step through the bank, so regenerations never repeat
  // the immediately preceding text.
  const std::size_t idx = static_cast<std::size_t>((mix64(h) + request.nonce()) % bank.size());
  return substitute_topic(bank[idx], request.lesson_topic());
}

RemoteBackend::RemoteBackend(std::string url, std::chrono::milliseconds timeout)
    : RemoteBackend(std::move(url),
                    [] {
                      const char* key = std::getenv(std::string(kApiKeyEnv).c_str());
                      return key ? std::string(key) : std::string();
                    }(),
                    timeout) {}

RemoteBackend::RemoteBackend(std::string url, std::string api_key,
                             std::chrono::milliseconds timeout)
    : api_key_(std::move(api_key)), timeout_(timeout) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw InvalidArgument("backend URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

std::string RemoteBackend::generate(const SuggestionRequest& request) {
  httplib::Client client(scheme_host_port_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  const auto res = client.Post(path_, headers, request_payload(request).dump(), "application/json");
  if (!res) {
    throw BackendError("backend request failed: " + httplib::to_string(res.error()), request);
  }
  if (res->status != 200) {
    throw BackendError("backend returned HTTP " + std::to_string(res->status), request);
  }
  try {
    const auto body = nlohmann::json::parse(res->body);
    auto text = body.at("text").get<std::string>();
    if (text.empty()) throw BackendError("backend returned empty text", request);
    return text;
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed backend response: ") + e.what(), request);
  }
}

std::shared_ptr<LMBackend> make_backend(std::string_view spec) {
  if (spec == "mock") return std::make_shared<SeededBackend>(0);
  if (spec.starts_with("mock:")) {
    return std::make_shared<SeededBackend>(std::stoull(std::string(spec.substr(5))));
  }
  return std::make_shared<RemoteBackend>(std::string(spec));
}

}  // namespace copilot
