#include <atomic>
#include <sstream>
#include <thread>

#include "copilot/engine.hpp"
#include "doctest.h"
#include "httplib.h"

using namespace copilot;

namespace {

Roster small_roster() {
  Roster r;
  r.add(Role::student, "S1", "Maria Lopez");
  r.add(Role::student, "S2", "Jo");
  r.add(Role::tutor, "T1", "Ms. Maria Chen");
  r.add(Role::tutor, "T2", "Dwayne");
  return r;
}

std::vector<ChatMessage> numbered(std::size_t n) {
  std::vector<ChatMessage> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({i % 2 ? Sender::student : Sender::tutor, i + 1, 0,
                   "message " + std::to_string(i + 1) + " for Maria"});
  }
  return out;
}

}  // namespace

TEST_SUITE("deid") {
  TEST_CASE("whole-word, case-insensitive redaction") {
    const auto r = small_roster();
    CHECK(deidentify("Hi Maria!", r) == "Hi [STUDENT]!");
    CHECK(deidentify("hi MARIA, ready?", r) == "hi [STUDENT], ready?");
    CHECK(deidentify("Maria's turn", r) == "[STUDENT]'s turn");
    CHECK(deidentify("Marianne is here", r) == "Marianne is here");
    CHECK(deidentify("Maria Lopez solved it", r) == "[STUDENT] solved it");
    CHECK(deidentify("Thanks Dwayne", r) == "Thanks [TUTOR]");
    CHECK(deidentify("Lopez", r) == "[STUDENT]");
    CHECK(deidentify("Jo and Joe", r) == "[STUDENT] and Joe");
  }

  TEST_CASE("student wins a tie; the longer tutor name still wins") {
    const auto r = small_roster();
    // "Maria" is both a student part and a tutor part.
    CHECK(deidentify("Maria", r) == "[STUDENT]");
    CHECK(deidentify("Ms. Maria Chen says hi", r) == "[TUTOR] says hi");
  }

  TEST_CASE("parts shorter than two characters are not candidates") {
    Roster r;
    r.add(Role::student, "S9", "A J Smith");
    CHECK(deidentify("a cat and Smith", r) == "a cat and [STUDENT]");
  }

  TEST_CASE("multibyte letters are word characters") {
    Roster r;
    r.add(Role::student, "S1", "Ana");
    CHECK(deidentify("Ana\xC3\xAFs", r) == "Ana\xC3\xAFs");
    CHECK(deidentify("\xC3\xA9" "Ana", r) == "\xC3\xA9" "Ana");
    CHECK(deidentify("(Ana)", r) == "([STUDENT])");
  }

  TEST_CASE("idempotent and detection agrees") {
    const auto r = small_roster();
    const std::string text = "Maria and Dwayne met Jo; maria lopez too";
    const auto once = deidentify(text, r);
    CHECK(deidentify(once, r) == once);
    CHECK(contains_roster_name(text, r));
    CHECK_FALSE(contains_roster_name(once, r));
    CHECK_FALSE(contains_roster_name("[STUDENT] and [TUTOR]", r));
  }

  TEST_CASE("window keeps the last k messages in order") {
    const auto r = small_roster();
    const auto msgs = numbered(25);
    const auto w = window(msgs, r);
    REQUIRE(w.size() == 10);
    CHECK(w.front().ordinal == 16);
    CHECK(w.back().ordinal == 25);
    for (const auto& m : w) CHECK_FALSE(contains_roster_name(m.text, r));
    CHECK(window(numbered(3), r).size() == 3);
    CHECK(window(msgs, r, 4).front().ordinal == 22);
  }

  TEST_CASE("roster CSV") {
    const auto r = small_roster();
    std::stringstream ss;
    write_roster_csv(ss, r);
    const auto back = read_roster_csv(ss);
    REQUIRE(back.entries().size() == 4);
    CHECK(back.entries()[2].display_name == "Ms. Maria Chen");
    CHECK(back.find("T2")->role == Role::tutor);
    CHECK(back.find("X") == nullptr);
    Roster bad;
    CHECK_THROWS_AS(bad.add(Role::student, "S", "   "), InvalidArgument);
  }
}

TEST_SUITE("engine") {
  TEST_CASE("requests refuse names and oversize windows") {
    const auto r = small_roster();
    std::vector<ChatMessage> ctx{{Sender::student, 1, 0, "I am Maria"}};
    CHECK_THROWS_AS(SuggestionRequest::make("s", "t", StrategyKind::worked_example, ctx, 0, r),
                    PrivacyViolation);
    CHECK_THROWS_AS(SuggestionRequest::make("s", "t", StrategyKind::worked_example,
                                            window(numbered(11), r, 11), 0, r),
                    PrivacyViolation);
    SessionRecord s;
    s.session_id = "s";
    s.messages = numbered(30);
    const auto req = build_request(s, r, "ratios", StrategyKind::minor_correction, 0);
    CHECK(req.context().size() == 10);
    const auto payload = request_payload(req);
    CHECK(payload.dump().find("Maria") == std::string::npos);
    CHECK(payload["strategy"] == "minor_correction");
    CHECK(payload["context"].size() == 10);
  }

  TEST_CASE("default strategy") {
    std::vector<ChatMessage> m{{Sender::tutor, 1, 0, "What is 6 x 7?"},
                               {Sender::student, 2, 0, "i think it's 42."}};
    CHECK(default_strategy(m, std::string_view("42")) == StrategyKind::affirm_correct);
    CHECK(default_strategy(m, std::string_view("4")) == StrategyKind::simplify_question);
    CHECK(default_strategy(m, std::nullopt) == StrategyKind::simplify_question);
    m.push_back({Sender::student, 3, 0, "wait no, 48"});
    CHECK(default_strategy(m, std::string_view("42")) == StrategyKind::simplify_question);
    std::vector<ChatMessage> frac{{Sender::student, 1, 0, "3/4"}};
    CHECK(default_strategy(frac, std::string_view("3/4")) == StrategyKind::affirm_correct);
  }

  TEST_CASE("seeded backend is deterministic and nonces differ") {
    const auto r = small_roster();
    SeededBackend a(7), b(7);
    auto req = SuggestionRequest::make("s", "ratios", StrategyKind::similar_problem, {}, 0, r);
    CHECK(a.generate(req) == b.generate(req));
    for (std::uint64_t n = 0; n < 12; ++n) {
      CHECK(a.generate(req.with_nonce(n)) != a.generate(req.with_nonce(n + 1)));
    }
    CHECK_FALSE(a.generate(req).empty());
  }

  TEST_CASE("lifecycle: activate, regenerate, switch, edit, send") {
    const auto r = small_roster();
    SeededBackend backend(3);
    std::int64_t now = 100;
    CopilotEngine e("s-1", r, backend, [&] { return now++; });
    const auto history = numbered(14);
    auto s1 = e.activate(history, "ratios", std::nullopt);
    CHECK(s1.request.strategy() == StrategyKind::simplify_question);
    CHECK(s1.request.context().size() == 10);
    auto s2 = e.regenerate(s1);
    CHECK(s2.request.nonce() == 1);
    CHECK(s2.text != s1.text);
    auto s3 = e.switch_strategy(s2, StrategyKind::worked_example);
    CHECK(s3.request.nonce() == 0);
    CHECK_THROWS_AS(e.switch_strategy(s3, StrategyKind::worked_example), InvalidArgument);
    CHECK_THROWS_AS(e.finalize(s1, std::nullopt), InvalidArgument);
    const auto sent = e.finalize(s3, std::string("my own words"));
    CHECK(sent.action == CopilotAction::send);
    CHECK(*sent.final_text == "my own words");
    CHECK_FALSE(e.latest().has_value());

    const auto& ev = e.events();
    REQUIRE(ev.size() == 5);
    CHECK(ev[0].action == CopilotAction::activate);
    CHECK(ev[1].action == CopilotAction::regenerate);
    CHECK(ev[2].action == CopilotAction::strategy_switch);
    CHECK(ev[3].action == CopilotAction::edit);
    CHECK(ev[4].action == CopilotAction::send);
    for (std::size_t i = 0; i < ev.size(); ++i) {
      CHECK(ev[i].ordinal == i + 1);
      CHECK(ev[i].context_snapshot.size() <= kContextWindow);
    }
    CHECK(count_uses(ev) == 2);

    // Sending unedited text logs no edit.
    auto s4 = e.activate(history, "ratios", StrategyKind::affirm_correct);
    e.finalize(s4, s4.text);
    CHECK(e.events().back().action == CopilotAction::send);
    CHECK(e.events()[e.events().size() - 2].action == CopilotAction::activate);
  }

  TEST_CASE("one generation in flight") {
    const auto r = small_roster();
    SeededBackend backend;
    CopilotEngine e("s-1", r, backend);
    auto pending = e.begin_activate({}, "t", StrategyKind::worked_example);
    CHECK(e.busy());
    CHECK_THROWS_AS(e.begin_activate({}, "t", StrategyKind::worked_example), BusyError);
    e.abandon(pending);
    CHECK_FALSE(e.busy());
    CHECK(e.events().empty());
    pending = e.begin_activate({}, "t", StrategyKind::worked_example);
    e.complete(pending, "text");
    CHECK(e.events().size() == 1);
  }

  TEST_CASE("backend failure leaves the engine usable") {
    struct Failing : LMBackend {
      std::string generate(const SuggestionRequest&) override { throw std::runtime_error("down"); }
    } failing;
    const auto r = small_roster();
    CopilotEngine e("s-1", r, failing);
    CHECK_THROWS_AS(e.activate({}, "t", std::nullopt), BackendError);
    CHECK_FALSE(e.busy());
    CHECK(e.events().empty());
  }
}

TEST_SUITE("remote-backend") {
  TEST_CASE("posts the request with a bearer token and reads text") {
    httplib::Server server;
    std::string seen_auth, seen_body;
    server.Post("/v1/suggest", [&](const httplib::Request& req, httplib::Response& res) {
      seen_auth = req.get_header_value("Authorization");
      seen_body = req.body;
      res.set_content(R"({"text":"Try a smaller number."})", "application/json");
    });
    server.Post("/broken", [](const httplib::Request&, httplib::Response& res) {
      res.status = 500;
    });
    server.Post("/garbage", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("not json", "text/plain");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    const auto base = "http://127.0.0.1:" + std::to_string(port);
    const auto r = small_roster();
    auto req = SuggestionRequest::make("s", "ratios", StrategyKind::similar_problem,
                                       {{Sender::student, 1, 0, "help [STUDENT]"}}, 2, r);
    RemoteBackend ok(base + "/v1/suggest", "k3y", std::chrono::seconds(5));
    CHECK(ok.generate(req) == "Try a smaller number.");
    CHECK(seen_auth == "Bearer k3y");
    const auto body = nlohmann::json::parse(seen_body);
    CHECK(body["lesson_topic"] == "ratios");
    CHECK(body["nonce"] == 2);
    CHECK(body["context"][0]["sender"] == "student");

    RemoteBackend broken(base + "/broken", "", std::chrono::seconds(5));
    CHECK_THROWS_AS(broken.generate(req), BackendError);
    RemoteBackend garbage(base + "/garbage", "", std::chrono::seconds(5));
    CHECK_THROWS_AS(garbage.generate(req), BackendError);

    server.stop();
    t.join();

    RemoteBackend gone(base + "/v1/suggest", "", std::chrono::milliseconds(500));
    CHECK_THROWS_AS(gone.generate(req), BackendError);
    CHECK_THROWS_AS(RemoteBackend("no-scheme", "", std::chrono::seconds(1)), InvalidArgument);
  }

  TEST_CASE("make_backend specs") {
    CHECK(dynamic_cast<SeededBackend*>(make_backend("mock").get()) != nullptr);
    CHECK(dynamic_cast<SeededBackend*>(make_backend("mock:42").get()) != nullptr);
    CHECK(dynamic_cast<RemoteBackend*>(make_backend("http://localhost:1/x").get()) != nullptr);
  }
}
