#pragma once

// Streaming labeler: runs a model set over every tutor message of a
// transcript corpus and tallies labels per session.

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "copilot/classifier.hpp"
#include "copilot/formats.hpp"

namespace copilot {

struct SessionLabelCounts {
  std::string session_id;
  std::string tutor_id;
  std::size_t tutor_messages = 0;
  std::vector<std::size_t> counts;  // aligned with CorpusLabels::labels
};

struct CorpusLabels {
  std::vector<std::string> labels;
  std::vector<SessionLabelCounts> sessions;  // input order
  std::size_t skipped_lines = 0;

  std::size_t label_index(std::string_view label) const;  // throws if absent
  std::size_t total(std::string_view label) const;
  std::size_t total_tutor_messages() const;
  double frequency(std::string_view label) const;  // share of tutor messages
};

// Labels with models that fail the F1 gate are left out of the counts.
// Context for each tutor message is the up to 10 messages before it.
CorpusLabels label_sessions(const ModelSet& models, std::span<const SessionRecord> sessions);

// As above over a JSONL transcript stream; malformed lines are skipped
// and reported to `on_error` (stderr when empty).
CorpusLabels label_corpus(const ModelSet& models, std::istream& transcripts,
                          std::function<void(const IoError&)> on_error = {});

// session_id,tutor_id,tutor_messages,<label>...
void write_label_counts_csv(std::ostream& out, const CorpusLabels& labels);
CorpusLabels read_label_counts_csv(std::istream& in);

}  // namespace copilot
