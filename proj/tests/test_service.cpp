#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "copilot/formats.hpp"
#include "copilot/tcp_server.hpp"
#include "doctest.h"

using namespace copilot;

namespace {

struct Fixture {
  Roster roster;
  std::unique_ptr<SessionService> service;
  TutorProfile treat{"T1", Gender::female, 10, 0.2, Arm::treatment};
  TutorProfile ctrl{"T2", Gender::male, 4, -0.1, Arm::control};
  StudentProfile s1, s2;

  explicit Fixture(ServiceOptions opt = {}, std::shared_ptr<LMBackend> backend = nullptr) {
    roster.add(Role::student, "S1", "Maria Lopez");
    roster.add(Role::student, "S2", "Kenji Tanaka");
    roster.add(Role::tutor, "T1", "Dwayne Brooks");
    roster.add(Role::tutor, "T2", "Priya Shah");
    if (!backend) backend = std::make_shared<SeededBackend>(1);
    service = std::make_unique<SessionService>(std::move(opt), roster, backend);
    s1.student_id = "S1";
    s1.school_id = "E1";
    s1.grade = 4;
    s2 = s1;
    s2.student_id = "S2";
    service->add_tutor(treat);
    service->add_tutor(ctrl);
    service->add_student(s1);
    service->add_student(s2);
  }
};

struct Inbox {
  std::mutex m;
  std::vector<WireMessage> got;
  Sink sink() {
    return [this](const WireMessage& w) {
      std::lock_guard lock(m);
      got.push_back(w);
    };
  }
  std::vector<WireMessage> take() {
    std::lock_guard lock(m);
    return std::exchange(got, {});
  }
};

WireMessage frame(WireKind kind, std::string session, std::uint64_t seq,
                  nlohmann::ordered_json payload = nlohmann::ordered_json::object()) {
  WireMessage w;
  w.kind = kind;
  w.session_id = std::move(session);
  w.seq = seq;
  w.payload = std::move(payload);
  return w;
}

std::string code_of(const ServiceError& e) { return e.code(); }

}  // namespace

TEST_SUITE("wire") {
  TEST_CASE("frame encode and decode") {
    auto w = frame(WireKind::chat, "s-1", 7, {{"text", "hola \xC3\xA9"}});
    const auto bytes = encode_frame(w);
    std::array<unsigned char, 4> header{};
    std::copy_n(bytes.begin(), 4, header.begin());
    const auto n = decode_frame_length(header);
    CHECK(n == bytes.size() - 4);
    CHECK(header[0] == 0);  // big endian
    const auto back = decode_frame_body(std::string_view(bytes).substr(4));
    CHECK(back.kind == WireKind::chat);
    CHECK(back.session_id == "s-1");
    CHECK(back.seq == 7);
    CHECK(back.payload["text"] == "hola \xC3\xA9");
  }

  TEST_CASE("oversize and malformed frames") {
    std::array<unsigned char, 4> big{0x00, 0x10, 0x00, 0x01};
    CHECK_THROWS_AS(decode_frame_length(big), ProtocolError);
    std::array<unsigned char, 4> max{0x00, 0x10, 0x00, 0x00};
    CHECK(decode_frame_length(max) == kMaxFrameBytes);
    CHECK_THROWS_AS(decode_frame_body("{oops"), ProtocolError);
    CHECK_THROWS_AS(decode_frame_body(R"({"kind":"nope","session_id":"","seq":0,"payload":{}})"),
                    ProtocolError);
    CHECK_THROWS_AS(decode_frame_body("[1,2]"), ProtocolError);
  }
}

TEST_SUITE("service") {
  TEST_CASE("typed API: chat, copilot and exit ticket") {
    Fixture f;
    auto& svc = *f.service;
    const auto id = svc.create_session("T1", "S1", "ratios");
    CHECK(svc.state(id).copilot_enabled);
    CHECK(svc.post_message(id, Sender::tutor, "Hi Maria!") == 1);
    CHECK(svc.post_message(id, Sender::student, "hi, I got 12") == 2);
    const auto s = svc.copilot_activate(id, std::nullopt, std::string("12"));
    CHECK(s.request.strategy() == StrategyKind::affirm_correct);
    for (const auto& m : s.request.context()) CHECK(m.text.find("Maria") == std::string::npos);
    svc.copilot_regenerate(id);
    svc.copilot_switch(id, StrategyKind::encourage_student);
    const auto sent = svc.copilot_send(id, std::string("Great work!"));
    CHECK(*sent.final_text == "Great work!");
    auto snap = svc.snapshot(id);
    CHECK(snap.messages.back().text == "Great work!");
    CHECK(snap.messages.back().sender == Sender::tutor);
    CHECK(count_uses(snap) == 2);

    CHECK(svc.start_exit_ticket(id).phase == Phase::exit_ticket);
    try {
      svc.record_exit_ticket(id, false, true);
      FAIL("expected ServiceError");
    } catch (const ServiceError& e) {
      CHECK(code_of(e) == "invalid_argument");
    }
    CHECK(svc.record_exit_ticket(id, true, true, 15).phase == Phase::closed);
    try {
      svc.post_message(id, Sender::tutor, "late");
      FAIL("expected ServiceError");
    } catch (const ServiceError& e) {
      CHECK(code_of(e) == "invalid_state");
    }
    const auto recs = svc.records();
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].exit_ticket_passed);
    CHECK(recs[0].participation_points == 15);
  }

  TEST_CASE("control tutors have no copilot; pairs are unique; unknown ids") {
    Fixture f;
    auto& svc = *f.service;
    const auto id = svc.create_session("T2", "S1", "ratios");
    CHECK_FALSE(svc.state(id).copilot_enabled);
    try {
      svc.copilot_activate(id);
      FAIL("expected ServiceError");
    } catch (const ServiceError& e) {
      CHECK(code_of(e) == "copilot_unavailable");
    }
    try {
      svc.create_session("T2", "S1", "again");
      FAIL("expected ServiceError");
    } catch (const ServiceError& e) {
      CHECK(code_of(e) == "duplicate_pairing");
    }
    CHECK_NOTHROW(svc.create_session("T2", "S2", "ok"));
    try {
      svc.state("s-missing");
      FAIL("expected ServiceError");
    } catch (const ServiceError& e) {
      CHECK(code_of(e) == "unknown_session");
    }
    try {
      svc.create_session("T9", "S1", "x");
      FAIL("expected ServiceError");
    } catch (const ServiceError& e) {
      CHECK(code_of(e) == "unknown_person");
    }
  }

  TEST_CASE("export filters by arm and persists closed sessions") {
    const auto dir = std::filesystem::temp_directory_path() / "copilot_service_log";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    {
      ServiceOptions opt;
      opt.log_dir = dir;
      Fixture f(opt);
      auto& svc = *f.service;
      const auto a = svc.create_session("T1", "S1", "x");
      const auto b = svc.create_session("T2", "S2", "y");
      svc.post_message(a, Sender::tutor, "hello");
      svc.start_exit_ticket(b);
      svc.record_exit_ticket(b, true, false);
      std::ostringstream out;
      CHECK(svc.export_transcripts(out) == 1);
      ExportFilter all;
      all.include_open = true;
      CHECK(svc.records(all).size() == 2);
      ExportFilter treat{Arm::treatment, true};
      const auto t = svc.records(treat);
      REQUIRE(t.size() == 1);
      CHECK(t[0].session_id == a);
    }
    std::ifstream in(dir / "sessions.jsonl");
    const auto logged = read_jsonl(in);
    REQUIRE(logged.size() == 1);
    CHECK(logged[0].tutor_id == "T2");
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("backend calls do not block chat routing") {
    struct Slow : LMBackend {
      std::mutex m;
      std::condition_variable cv;
      bool release = false;
      std::string generate(const SuggestionRequest&) override {
        std::unique_lock lock(m);
        cv.wait(lock, [&] { return release; });
        return "slow text";
      }
    };
    auto slow = std::make_shared<Slow>();
    Fixture f({}, slow);
    auto& svc = *f.service;
    const auto id = svc.create_session("T1", "S1", "x");
    Inbox inbox;
    const auto conn = svc.connect(inbox.sink());
    svc.submit(conn, frame(WireKind::join, id, 1, {{"person_id", "T1"}}));
    svc.submit(conn, frame(WireKind::copilot_activate, id, 2));
    // While the backend is stuck, chat still flows and a second activation is busy.
    CHECK(svc.post_message(id, Sender::student, "still here") >= 1);
    svc.submit(conn, frame(WireKind::copilot_activate, id, 3));
    {
      std::lock_guard lock(slow->m);
      slow->release = true;
    }
    slow->cv.notify_all();
    svc.wait_idle();
    const auto got = inbox.take();
    bool busy = false, suggestion = false;
    for (const auto& w : got) {
      if (w.kind == WireKind::error && w.seq == 3) busy = w.payload["code"] == "busy";
      if (w.kind == WireKind::suggestion && w.seq == 2) suggestion = w.payload["text"] == "slow text";
    }
    CHECK(busy);
    CHECK(suggestion);
    svc.disconnect(conn);
  }

  TEST_CASE("frame front end: join, roles and errors") {
    Fixture f;
    auto& svc = *f.service;
    Inbox tutor, student;
    const auto ct = svc.connect(tutor.sink());
    const auto cs = svc.connect(student.sink());
    svc.submit(ct, frame(WireKind::join, "", 1, {{"person_id", "T1"}, {"student_id", "S1"}, {"topic", "area"}}));
    svc.wait_idle();
    auto got = tutor.take();
    REQUIRE(got.size() == 1);
    REQUIRE(got[0].kind == WireKind::session_state);
    const auto id = got[0].session_id;
    CHECK(got[0].payload["topic"] == "area");

    svc.submit(cs, frame(WireKind::join, id, 1, {{"person_id", "S1"}}));
    svc.submit(cs, frame(WireKind::chat, id, 2, {{"text", "hi"}}));
    svc.submit(cs, frame(WireKind::copilot_activate, id, 3));
    svc.submit(cs, frame(WireKind::suggestion, id, 4));
    svc.wait_idle();
    got = student.take();
    std::map<std::uint64_t, std::string> errors;
    for (const auto& w : got) {
      if (w.kind == WireKind::error) errors[w.seq] = w.payload["code"];
    }
    CHECK(errors[3] == "not_participant");
    CHECK(errors[4] == "bad_frame");
    bool tutor_saw_chat = false;
    for (const auto& w : tutor.take()) {
      if (w.kind == WireKind::chat && w.payload["text"] == "hi") tutor_saw_chat = true;
    }
    CHECK(tutor_saw_chat);

    Inbox stranger;
    const auto cx = svc.connect(stranger.sink());
    svc.submit(cx, frame(WireKind::join, id, 9, {{"person_id", "S2"}}));
    svc.submit(cx, frame(WireKind::chat, "s-none", 10, {{"text", "x"}}));
    svc.wait_idle();
    got = stranger.take();
    REQUIRE(got.size() == 2);
    CHECK(got[0].payload["code"] == "not_participant");
    CHECK(got[1].payload["code"] == "unknown_session");
  }

  TEST_CASE("inbox overflow is rejected") {
    ServiceOptions opt;
    opt.inbox_capacity = 4;
    opt.session_threads = 1;
    Fixture f(opt);
    auto& svc = *f.service;
    const auto id = svc.create_session("T1", "S1", "x");
    Inbox inbox;
    const auto conn = svc.connect(inbox.sink());
    svc.submit(conn, frame(WireKind::join, id, 1, {{"person_id", "T1"}}));
    for (std::uint64_t i = 0; i < 200; ++i) {
      svc.submit(conn, frame(WireKind::chat, id, 100 + i, {{"text", "m" + std::to_string(i)}}));
    }
    svc.wait_idle();
    std::size_t full = 0;
    for (const auto& w : inbox.take()) {
      if (w.kind == WireKind::error && w.payload["code"] == "inbox_full") ++full;
    }
    const auto delivered = svc.snapshot(id).messages.size();
    CHECK(full + delivered == 200);
  }
}

TEST_SUITE("tcp") {
  TEST_CASE("round trip over a socket") {
    Fixture f;
    TcpServer server(*f.service, "127.0.0.1", 0);
    server.start();
    FrameClient tutor("127.0.0.1", server.port());
    tutor.send(frame(WireKind::join, "", 1, {{"person_id", "T1"}, {"student_id", "S2"}, {"topic", "ratios"}}));
    auto st = tutor.receive_kind(WireKind::session_state);
    REQUIRE(st.has_value());
    const auto id = st->session_id;

    FrameClient student("127.0.0.1", server.port());
    student.send(frame(WireKind::join, id, 1, {{"person_id", "S2"}}));
    REQUIRE(student.receive_kind(WireKind::session_state).has_value());
    student.send(frame(WireKind::chat, id, 2, {{"text", "Kenji here, is it 9?"}}));
    auto chat = tutor.receive_kind(WireKind::chat);
    REQUIRE(chat.has_value());
    CHECK(chat->payload["sender"] == "student");

    tutor.send(frame(WireKind::copilot_activate, id, 5, {{"strategy", "similar_problem"}}));
    auto sug = tutor.receive_kind(WireKind::suggestion);
    REQUIRE(sug.has_value());
    CHECK_FALSE(sug->payload["text"].get<std::string>().empty());
    tutor.send(frame(WireKind::copilot_send, id, 6));
    // The student's own chat is echoed back first.
    std::optional<WireMessage> sent;
    do {
      sent = student.receive_kind(WireKind::chat);
    } while (sent && sent->payload["sender"] != "tutor");
    REQUIRE(sent.has_value());
    CHECK(sent->payload["text"] == sug->payload["text"]);

    // A length past the limit gets an error and the connection closes.
    FrameClient bad("127.0.0.1", server.port());
    bad.send_raw(std::string("\x7f\xff\xff\xff", 4));
    auto err = bad.receive();
    REQUIRE(err.has_value());
    CHECK(err->payload["code"] == "bad_frame");
    CHECK_FALSE(bad.receive(std::chrono::milliseconds(500)).has_value());

    // A malformed body is answered and the stream continues.
    const std::string body = "{broken";
    std::string raw(4, '\0');
    raw[3] = static_cast<char>(body.size());
    tutor.send_raw(raw + body);
    auto err2 = tutor.receive_kind(WireKind::error);
    REQUIRE(err2.has_value());
    CHECK(err2->payload["code"] == "bad_frame");
    tutor.send(frame(WireKind::chat, id, 7, {{"text", "still connected"}}));
    CHECK(student.receive_kind(WireKind::chat).has_value());
    server.stop();
  }
}
