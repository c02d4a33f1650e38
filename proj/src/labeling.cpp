#include "copilot/labeling.hpp"

#include <iostream>

namespace copilot {

std::size_t CorpusLabels::label_index(std::string_view label) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) return i;
  }
  throw InvalidArgument("label '" + std::string(label) + "' not in corpus counts");
}

std::size_t CorpusLabels::total(std::string_view label) const {
  const auto i = label_index(label);
  std::size_t n = 0;
  for (const auto& s : sessions) n += s.counts[i];
  return n;
}

std::size_t CorpusLabels::total_tutor_messages() const {
  std::size_t n = 0;
  for (const auto& s : sessions) n += s.tutor_messages;
  return n;
}

double CorpusLabels::frequency(std::string_view label) const {
  const auto n = total_tutor_messages();
  return n ? static_cast<double>(total(label)) / static_cast<double>(n) : 0.0;
}

namespace {

class Labeler {
 public:
  explicit Labeler(const ModelSet& models) : models_(models), seed_(models.hash_seed()) {
    for (std::size_t j = 0; j < models.models().size(); ++j) {
      if (models.models()[j].passes_gate()) {
        keep_.push_back(j);
        out_.labels.push_back(models.models()[j].label);
      }
    }
  }

  void add(const SessionRecord& s) {
    SessionLabelCounts row;
    row.session_id = s.session_id;
    row.tutor_id = s.tutor_id;
    row.counts.assign(keep_.size(), 0);

    const auto& msgs = s.messages;
    ctx_.resize(msgs.size());
    for (std::size_t i = 0; i < msgs.size(); ++i) {
      ctx_[i].clear();
      append_context_ngrams(msgs[i], seed_, ctx_[i]);
    }
    for (std::size_t t = 0; t < msgs.size(); ++t) {
      if (msgs[t].sender != Sender::tutor) continue;
      ++row.tutor_messages;
      if (keep_.empty()) continue;
      std::vector<std::uint32_t> context, target;
      for (std::size_t i = t > kContextWindow ? t - kContextWindow : 0; i < t; ++i) {
        context.insert(context.end(), ctx_[i].begin(), ctx_[i].end());
      }
      if (t > 0) append_previous_ngrams(msgs[t - 1], seed_, context);
      target.push_back(separator_feature(seed_));
      append_target_ngrams(msgs[t].text, seed_, target);
      models_.predict_into(finish_features(std::move(context), std::move(target)), fired_);
      for (std::size_t k = 0; k < keep_.size(); ++k) row.counts[k] += fired_[keep_[k]] ? 1 : 0;
    }
    out_.sessions.push_back(std::move(row));
  }

  CorpusLabels finish() { return std::move(out_); }
  CorpusLabels& result() { return out_; }

 private:
  const ModelSet& models_;
  std::uint64_t seed_;
  std::vector<std::size_t> keep_;
  std::vector<std::vector<std::uint32_t>> ctx_;
  std::vector<char> fired_;
  CorpusLabels out_;
};

}  // namespace

CorpusLabels label_sessions(const ModelSet& models, std::span<const SessionRecord> sessions) {
  Labeler l(models);
  for (const auto& s : sessions) l.add(s);
  return l.finish();
}

CorpusLabels label_corpus(const ModelSet& models, std::istream& transcripts,
                          std::function<void(const IoError&)> on_error) {
  Labeler l(models);
  std::size_t skipped = 0;
  for_each_jsonl(
      transcripts, [&](SessionRecord&& s) { l.add(s); },
      [&](const IoError& e) {
        ++skipped;
        if (on_error) {
          on_error(e);
        } else {
          std::cerr << "skipping malformed transcript line: " << e.what() << '\n';
        }
      });
  l.result().skipped_lines = skipped;
  return l.finish();
}

void write_label_counts_csv(std::ostream& out, const CorpusLabels& labels) {
  out << "session_id,tutor_id,tutor_messages";
  for (const auto& l : labels.labels) out << ',' << l;
  out << '\n';
  for (const auto& s : labels.sessions) {
    out << csv_field(s.session_id) << ',' << csv_field(s.tutor_id) << ',' << s.tutor_messages;
    for (auto c : s.counts) out << ',' << c;
    out << '\n';
  }
  if (!out) throw IoError("failed writing label counts", 0);
}

CorpusLabels read_label_counts_csv(std::istream& in) {
  const auto table = read_csv(in);
  CorpusLabels out;
  if (table.header.size() < 3 || table.header[0] != "session_id" || table.header[1] != "tutor_id" ||
      table.header[2] != "tutor_messages") {
    throw IoError("label counts CSV must start with session_id,tutor_id,tutor_messages", 0);
  }
  for (std::size_t c = 3; c < table.header.size(); ++c) {
    require_known_label(table.header[c]);
    out.labels.push_back(table.header[c]);
  }
  std::uint64_t line = 1;
  for (const auto& row : table.rows) {
    ++line;
    try {
      SessionLabelCounts s;
      s.session_id = row.at(0);
      s.tutor_id = row.at(1);
      s.tutor_messages = std::stoull(row.at(2));
      for (std::size_t c = 3; c < table.header.size(); ++c) s.counts.push_back(std::stoull(row.at(c)));
      out.sessions.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw IoError(std::string("bad label counts row: ") + e.what(), 0, line);
    }
  }
  return out;
}

}  // namespace copilot
