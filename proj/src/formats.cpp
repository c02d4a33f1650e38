#include "copilot/formats.hpp"

#include <charconv>
#include <istream>
#include <ostream>

namespace copilot {

namespace {

template <typename E>
E enum_field(const nlohmann::ordered_json& j, const char* key) {
  return parse_enum<E>(j.at(key).get<std::string>());
}

std::optional<double> parse_optional_double(const std::string& field) {
  if (field.empty()) return std::nullopt;
  double value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw InvalidArgument("not a number: '" + field + "'");
  }
  return value;
}

double parse_double(const std::string& field) {
  auto v = parse_optional_double(field);
  if (!v) throw InvalidArgument("missing numeric field");
  return *v;
}

int parse_int(const std::string& field) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw InvalidArgument("not an integer: '" + field + "'");
  }
  return value;
}

std::string format_optional(const std::optional<double>& v) {
  if (!v) return {};
  return nlohmann::json(*v).dump();
}

}  // namespace

ordered_json to_json(const ChatMessage& message) {
  ordered_json j;
  j["sender"] = to_string(message.sender);
  j["ordinal"] = message.ordinal;
  j["wall_ms"] = message.wall_ms;
  j["text"] = message.text;
  return j;
}

ordered_json to_json(const CopilotUseEvent& event) {
  ordered_json j;
  j["session_id"] = event.session_id;
  j["ordinal"] = event.ordinal;
  j["wall_ms"] = event.wall_ms;
  j["action"] = to_string(event.action);
  j["strategy"] = to_string(event.strategy);
  auto& ctx = j["context_snapshot"] = ordered_json::array();
  for (const auto& m : event.context_snapshot) ctx.push_back(to_json(m));
  j["suggestion_text"] = event.suggestion_text;
  j["final_text"] = event.final_text ? ordered_json(*event.final_text) : ordered_json(nullptr);
  return j;
}

ordered_json to_json(const SessionRecord& session) {
  ordered_json j;
  j["session_id"] = session.session_id;
  j["tutor_id"] = session.tutor_id;
  j["student_id"] = session.student_id;
  j["school_id"] = session.school_id;
  j["grade"] = session.grade;
  j["lesson_topic"] = session.lesson_topic;
  j["exit_ticket_attempted"] = session.exit_ticket_attempted;
  j["exit_ticket_passed"] = session.exit_ticket_passed;
  j["participation_points"] = session.participation_points;
  auto& msgs = j["messages"] = ordered_json::array();
  for (const auto& m : session.messages) msgs.push_back(to_json(m));
  auto& uses = j["copilot_uses"] = ordered_json::array();
  for (const auto& e : session.copilot_uses) uses.push_back(to_json(e));
  return j;
}

ChatMessage chat_message_from_json(const ordered_json& j) {
  ChatMessage m;
  m.sender = enum_field<Sender>(j, "sender");
  m.ordinal = j.at("ordinal").get<std::uint64_t>();
  m.wall_ms = j.at("wall_ms").get<std::int64_t>();
  m.text = j.at("text").get<std::string>();
  return m;
}

CopilotUseEvent event_from_json(const ordered_json& j) {
  CopilotUseEvent e;
  e.session_id = j.at("session_id").get<std::string>();
  e.ordinal = j.at("ordinal").get<std::uint64_t>();
  e.wall_ms = j.at("wall_ms").get<std::int64_t>();
  e.action = enum_field<CopilotAction>(j, "action");
  e.strategy = enum_field<StrategyKind>(j, "strategy");
  for (const auto& m : j.at("context_snapshot")) e.context_snapshot.push_back(chat_message_from_json(m));
  e.suggestion_text = j.at("suggestion_text").get<std::string>();
  if (const auto& f = j.at("final_text"); !f.is_null()) e.final_text = f.get<std::string>();
  return e;
}

SessionRecord session_from_json(const ordered_json& j) {
  SessionRecord s;
  s.session_id = j.at("session_id").get<std::string>();
  s.tutor_id = j.at("tutor_id").get<std::string>();
  s.student_id = j.at("student_id").get<std::string>();
  s.school_id = j.at("school_id").get<std::string>();
  s.grade = j.at("grade").get<int>();
  s.lesson_topic = j.at("lesson_topic").get<std::string>();
  s.exit_ticket_attempted = j.at("exit_ticket_attempted").get<bool>();
  s.exit_ticket_passed = j.at("exit_ticket_passed").get<bool>();
  s.participation_points = j.at("participation_points").get<double>();
  for (const auto& m : j.at("messages")) s.messages.push_back(chat_message_from_json(m));
  for (const auto& e : j.at("copilot_uses")) s.copilot_uses.push_back(event_from_json(e));
  validate(s);
  return s;
}

void write_jsonl_line(std::ostream& out, const SessionRecord& session) {
  const auto pos = out.tellp();
  const std::string line = to_json(session).dump() + '\n';
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  if (!out) {
    throw IoError("failed writing session " + session.session_id,
                  pos >= 0 ? static_cast<std::uint64_t>(pos) : 0);
  }
}

void write_jsonl(std::ostream& out, std::span<const SessionRecord> sessions) {
  std::uint64_t offset = 0;
  std::uint64_t line_no = 0;
  std::string line;
  for (const auto& s : sessions) {
    ++line_no;
    line = to_json(s).dump();
    line.push_back('\n');
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    if (!out) throw IoError("failed writing session " + s.session_id, offset, line_no);
    offset += line.size();
  }
  out.flush();
  if (!out) throw IoError("failed flushing transcript stream", offset, line_no);
}

std::size_t for_each_jsonl(std::istream& in,
                           const std::function<void(SessionRecord&&)>& on_record,
                           const std::function<void(const IoError&)>& on_error) {
  std::string line;
  std::uint64_t offset = 0;
  std::uint64_t line_no = 0;
  std::size_t delivered = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::uint64_t line_offset = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    SessionRecord record;
    try {
      record = session_from_json(ordered_json::parse(line));
    } catch (const std::exception& ex) {
      on_error(IoError(std::string("malformed transcript line: ") + ex.what(), line_offset, line_no));
      continue;
    }
    on_record(std::move(record));
    ++delivered;
  }
  if (in.bad()) on_error(IoError("stream read failure", offset, line_no));
  return delivered;
}

std::vector<SessionRecord> read_jsonl(std::istream& in) {
  std::vector<SessionRecord> out;
  for_each_jsonl(
      in, [&](SessionRecord&& r) { out.push_back(std::move(r)); },
      [](const IoError& e) { throw e; });
  return out;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  if (quoted) throw InvalidArgument("unterminated quoted CSV field");
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_field(std::string_view value) {
  if (value.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(value);
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw InvalidArgument("CSV is missing column '" + std::string(name) + "'");
}

CsvTable read_csv(std::istream& in) {
  CsvTable table;
  std::string line;
  std::uint64_t line_no = 0;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto line_offset = offset;
    offset += line.size() + 1;
    if (line.empty() || line == "\r") continue;
    try {
      auto fields = split_csv_line(line);
      if (table.header.empty()) {
        table.header = std::move(fields);
      } else {
        if (fields.size() != table.header.size()) {
          throw InvalidArgument("expected " + std::to_string(table.header.size()) + " fields, got " +
                                std::to_string(fields.size()));
        }
        table.rows.push_back(std::move(fields));
      }
    } catch (const InvalidArgument& e) {
      throw IoError(std::string("malformed CSV: ") + e.what(), line_offset, line_no);
    }
  }
  if (table.header.empty()) throw IoError("CSV has no header", 0);
  return table;
}

std::vector<TutorProfile> read_tutors_csv(std::istream& in) {
  const auto table = read_csv(in);
  const auto c_id = table.column("tutor_id"), c_gender = table.column("gender"),
             c_exp = table.column("experience_months"), c_q = table.column("quality_rating"),
             c_arm = table.column("arm");
  std::vector<TutorProfile> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    TutorProfile t;
    t.tutor_id = row[c_id];
    t.gender = parse_enum<Gender>(row[c_gender].empty() ? "missing" : row[c_gender]);
    t.experience_months = parse_int(row[c_exp]);
    t.quality_rating = parse_double(row[c_q]);
    t.arm = parse_enum<Arm>(row[c_arm]);
    validate(t);
    out.push_back(std::move(t));
  }
  return out;
}

void write_tutors_csv(std::ostream& out, std::span<const TutorProfile> tutors) {
  out << "tutor_id,gender,experience_months,quality_rating,arm\n";
  for (const auto& t : tutors) {
    out << csv_field(t.tutor_id) << ',' << to_string(t.gender) << ',' << t.experience_months << ','
        << nlohmann::json(t.quality_rating).dump() << ',' << to_string(t.arm) << '\n';
  }
  if (!out) throw IoError("failed writing tutors CSV", 0);
}

std::vector<StudentProfile> read_students_csv(std::istream& in) {
  const auto table = read_csv(in);
  const auto c_id = table.column("student_id"), c_gender = table.column("gender"),
             c_race = table.column("race"), c_frl = table.column("frl"),
             c_sped = table.column("sped"), c_lep = table.column("lep"),
             c_base = table.column("baseline_math_score"), c_end = table.column("end_math_score"),
             c_grade = table.column("grade"), c_school = table.column("school_id");
  auto level = [](const std::string& v) { return v.empty() ? std::string("missing") : v; };
  std::vector<StudentProfile> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    StudentProfile s;
    s.student_id = row[c_id];
    s.gender = parse_enum<Gender>(level(row[c_gender]));
    s.race = parse_enum<Race>(level(row[c_race]));
    s.frl = parse_enum<Flag>(level(row[c_frl]));
    s.sped = parse_enum<Flag>(level(row[c_sped]));
    s.lep = parse_enum<Flag>(level(row[c_lep]));
    s.baseline_math_score = parse_optional_double(row[c_base]);
    s.end_math_score = parse_optional_double(row[c_end]);
    s.grade = parse_int(row[c_grade]);
    s.school_id = row[c_school];
    validate(s);
    out.push_back(std::move(s));
  }
  return out;
}

void write_students_csv(std::ostream& out, std::span<const StudentProfile> students) {
  out << "student_id,gender,race,frl,sped,lep,baseline_math_score,end_math_score,grade,school_id\n";
  for (const auto& s : students) {
    out << csv_field(s.student_id) << ',' << to_string(s.gender) << ',' << to_string(s.race) << ','
        << to_string(s.frl) << ',' << to_string(s.sped) << ',' << to_string(s.lep) << ','
        << format_optional(s.baseline_math_score) << ',' << format_optional(s.end_math_score) << ','
        << s.grade << ',' << csv_field(s.school_id) << '\n';
  }
  if (!out) throw IoError("failed writing students CSV", 0);
}

}  // namespace copilot
