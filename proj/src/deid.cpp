#include "copilot/deid.hpp"

#include <algorithm>
#include <istream>
#include <ostream>

#include "copilot/formats.hpp"

namespace copilot {

namespace {

bool is_letter(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

char fold(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = fold(c);
  return out;
}

std::size_t utf8_length(std::string_view s) {
  return static_cast<std::size_t>(std::count_if(
      s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

// Collapses internal whitespace runs to a single space.
std::string normalize_spaces(std::string_view s) {
  std::string out;
  bool in_space = false;
  for (char c : s) {
    if (is_space(c)) {
      in_space = true;
      continue;
    }
    if (in_space && !out.empty()) out.push_back(' ');
    in_space = false;
    out.push_back(c);
  }
  return out;
}

std::size_t letter_run(std::string_view text, std::size_t pos) {
  std::size_t end = pos;
  while (end < text.size() && is_letter(static_cast<unsigned char>(text[end]))) ++end;
  return end - pos;
}

bool equals_folded(std::string_view text, std::string_view lowered) {
  if (text.size() != lowered.size()) return false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (fold(text[i]) != lowered[i]) return false;
  }
  return true;
}

std::string_view placeholder_at(std::string_view text, std::size_t pos) {
  if (text[pos] != '[') return {};
  for (auto ph : {kStudentPlaceholder, kTutorPlaceholder}) {
    if (text.substr(pos, ph.size()) == ph) return ph;
  }
  return {};
}

struct Match {
  std::size_t length = 0;
  Role role = Role::student;
};

// Longest roster candidate starting at a word start `pos`, if any.
Match match_at(std::string_view text, std::size_t pos, std::size_t run, const Roster& roster) {
  const auto* cands = roster.candidates_for(lower(text.substr(pos, run)));
  if (!cands) return {};
  for (const auto& c : *cands) {
    const std::size_t len = c.phrase.size();
    if (pos + len > text.size()) continue;
    if (pos + len < text.size() && is_letter(static_cast<unsigned char>(text[pos + len]))) continue;
    if (equals_folded(text.substr(pos, len), c.phrase)) return {len, c.role};
  }
  return {};
}

// Walks `text`, calling on_copy(span) for retained text and on_match(role)
// for each redacted name. Stops early when on_match returns false.
template <typename OnCopy, typename OnMatch>
void scan(std::string_view text, const Roster& roster, OnCopy on_copy, OnMatch on_match) {
  std::size_t i = 0;
  while (i < text.size()) {
    if (const auto ph = placeholder_at(text, i); !ph.empty()) {
      on_copy(ph);
      i += ph.size();
      continue;
    }
    if (is_letter(static_cast<unsigned char>(text[i])) &&
        (i == 0 || !is_letter(static_cast<unsigned char>(text[i - 1])))) {
      const std::size_t run = letter_run(text, i);
      if (const auto m = match_at(text, i, run, roster); m.length > 0) {
        if (!on_match(m.role)) return;
        i += m.length;
      } else {
        on_copy(text.substr(i, run));
        i += run;
      }
      continue;
    }
    on_copy(text.substr(i, 1));
    ++i;
  }
}

}  // namespace

void Roster::add(Role role, std::string person_id, std::string display_name) {
  RosterEntry entry{role, std::move(person_id), trim(display_name)};
  if (entry.display_name.empty()) {
    throw InvalidArgument("roster entry '" + entry.person_id + "' has an empty display name");
  }
  index(entry);
  entries_.push_back(std::move(entry));
}

const RosterEntry* Roster::find(std::string_view person_id) const {
  for (const auto& e : entries_) {
    if (e.person_id == person_id) return &e;
  }
  return nullptr;
}

void Roster::index(const RosterEntry& entry) {
  const std::string full = lower(normalize_spaces(entry.display_name));
  std::vector<std::string> phrases{full};
  std::size_t start = 0;
  while (start < full.size()) {
    auto end = full.find(' ', start);
    if (end == std::string::npos) end = full.size();
    std::string part = full.substr(start, end - start);
    if (utf8_length(part) >= 2 && part != full) phrases.push_back(std::move(part));
    start = end + 1;
  }
  for (auto& phrase : phrases) {
    if (utf8_length(phrase) < 2) continue;
    const std::size_t run = letter_run(phrase, 0);
    if (run == 0) continue;  // cannot start a word
    auto& bucket = by_first_word_[phrase.substr(0, run)];
    const bool duplicate = std::any_of(bucket.begin(), bucket.end(), [&](const Candidate& c) {
      return c.phrase == phrase && c.role == entry.role;
    });
    if (!duplicate) bucket.push_back({std::move(phrase), entry.role});
    std::stable_sort(bucket.begin(), bucket.end(), [](const Candidate& a, const Candidate& b) {
      if (a.phrase.size() != b.phrase.size()) return a.phrase.size() > b.phrase.size();
      return a.role == Role::student && b.role == Role::tutor;
    });
  }
}

const std::vector<Roster::Candidate>* Roster::candidates_for(std::string_view leading_word) const {
  auto it = by_first_word_.find(std::string(leading_word));
  return it == by_first_word_.end() ? nullptr : &it->second;
}

Roster read_roster_csv(std::istream& in) {
  const auto table = read_csv(in);
  const auto c_role = table.column("role"), c_id = table.column("person_id"),
             c_name = table.column("display_name");
  Roster roster;
  for (const auto& row : table.rows) {
    roster.add(parse_enum<Role>(row[c_role]), row[c_id], row[c_name]);
  }
  return roster;
}

void write_roster_csv(std::ostream& out, const Roster& roster) {
  out << "role,person_id,display_name\n";
  for (const auto& e : roster.entries()) {
    out << to_string(e.role) << ',' << csv_field(e.person_id) << ',' << csv_field(e.display_name)
        << '\n';
  }
}

std::string deidentify(std::string_view text, const Roster& roster) {
  if (roster.empty()) return std::string(text);
  std::string out;
  out.reserve(text.size());
  scan(
      text, roster, [&](std::string_view s) { out.append(s); },
      [&](Role role) {
        out.append(role == Role::student ? kStudentPlaceholder : kTutorPlaceholder);
        return true;
      });
  return out;
}

bool contains_roster_name(std::string_view text, const Roster& roster) {
  if (roster.empty()) return false;
  bool found = false;
  scan(
      text, roster, [](std::string_view) {},
      [&](Role) {
        found = true;
        return false;
      });
  return found;
}

std::vector<ChatMessage> window(std::span<const ChatMessage> messages, const Roster& roster,
                                std::size_t k) {
  if (k == 0) throw InvalidArgument("window size must be at least 1");
  const std::size_t n = std::min(k, messages.size());
  std::vector<ChatMessage> out(messages.end() - static_cast<std::ptrdiff_t>(n), messages.end());
  for (auto& m : out) m.text = deidentify(m.text, roster);
  return out;
}

}  // namespace copilot
