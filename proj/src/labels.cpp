#include <algorithm>
#include <istream>
#include <ostream>
#include <string>

#include "copilot/labels.hpp"

namespace copilot {

const std::vector<std::string>& all_label_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (auto s : EnumNames<StrategyLabel>::names) out.emplace_back(s);
    for (auto m : EnumNames<MomentLabel>::names) out.emplace_back(m);
    return out;
  }();
  return names;
}

bool is_known_label(std::string_view name) {
  const auto& names = all_label_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

void require_known_label(std::string_view name) {
  if (!is_known_label(name)) throw InvalidArgument("unknown label '" + std::string(name) + "'");
}

void validate(const LabeledUtterance& u) {
  if (u.context.size() > kContextWindow) {
    throw InvalidArgument("labeled utterance context holds " + std::to_string(u.context.size()) +
                          " messages; at most " + std::to_string(kContextWindow) + " allowed");
  }
  for (const auto& l : u.labels) require_known_label(l);
}

nlohmann::ordered_json to_json(const LabeledUtterance& u) {
  nlohmann::ordered_json j;
  j["context"] = nlohmann::ordered_json::array();
  for (const auto& m : u.context) {
    j["context"].push_back({{"sender", to_string(m.sender)}, {"text", m.text}});
  }
  j["target"] = u.target;
  j["labels"] = u.labels;
  return j;
}

LabeledUtterance labeled_from_json(const nlohmann::ordered_json& j) {
  LabeledUtterance u;
  std::uint64_t ordinal = 0;
  for (const auto& c : j.at("context")) {
    ChatMessage m;
    m.sender = parse_enum<Sender>(c.at("sender").get<std::string>());
    m.ordinal = ++ordinal;
    m.text = c.at("text").get<std::string>();
    u.context.push_back(std::move(m));
  }
  u.target = j.at("target").get<std::string>();
  for (const auto& l : j.at("labels")) u.labels.insert(l.get<std::string>());
  validate(u);
  return u;
}

std::vector<LabeledUtterance> read_labeled_jsonl(std::istream& in) {
  std::vector<LabeledUtterance> out;
  std::string line;
  std::uint64_t line_no = 0;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto here = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(labeled_from_json(nlohmann::ordered_json::parse(line)));
    } catch (const std::exception& e) {
      throw IoError(std::string("bad labeled utterance: ") + e.what(), here, line_no);
    }
  }
  return out;
}

void write_labeled_jsonl(std::ostream& out, const std::vector<LabeledUtterance>& data) {
  for (const auto& u : data) out << to_json(u).dump() << '\n';
  if (!out) throw IoError("failed writing labeled utterances", 0);
}

}  // namespace copilot
