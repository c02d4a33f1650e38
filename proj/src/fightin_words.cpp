#include "copilot/stats/fightin_words.hpp"

#include <cmath>
#include <set>
#include <unordered_map>

#include "copilot/labeling.hpp"

namespace copilot::stats {

const LogOddsRow& LogOddsResult::at(std::string_view label) const {
  for (const auto& r : rows) {
    if (r.label == label) return r;
  }
  throw InvalidArgument("no log-odds row for '" + std::string(label) + "'");
}

LogOddsResult fightin_words(const LabelCounts& a, const LabelCounts& b, double prior_scale) {
  if (!(prior_scale >= 0.0)) throw InvalidArgument("prior scale must be non-negative");
  if (!(a.total > 0.0) || !(b.total > 0.0)) throw InvalidArgument("corpus totals must be positive");
  std::vector<std::string> labels;
  std::set<std::string> seen;
  for (const auto* c : {&a, &b}) {
    for (const auto& [label, y] : c->counts) {
      if (y < 0.0) throw InvalidArgument("negative count for '" + label + "'");
      if (seen.insert(label).second) labels.push_back(label);
    }
  }
  auto count = [](const LabelCounts& c, const std::string& l) {
    const auto it = c.counts.find(l);
    return it == c.counts.end() ? 0.0 : it->second;
  };

  LogOddsResult out;
  out.prior_scale = prior_scale;
  out.prior_total = prior_scale * (a.total + b.total);
  const double a0 = out.prior_total;
  for (const auto& l : labels) {
    LogOddsRow r;
    r.label = l;
    r.y_a = count(a, l);
    r.y_b = count(b, l);
    if (r.y_a > a.total || r.y_b > b.total) throw InvalidArgument("count for '" + l + "' exceeds its total");
    r.prior = prior_scale * (r.y_a + r.y_b);
    const double pa = r.y_a + r.prior, pb = r.y_b + r.prior;
    if (pa > 0.0 && pb > 0.0) {
      r.delta = std::log(pa / (a.total + a0 - pa)) - std::log(pb / (b.total + a0 - pb));
      r.variance = 1.0 / pa + 1.0 / pb;
      r.z = r.delta / std::sqrt(r.variance);
    } else {
      // Zero in one corpus with no prior mass: the log-odds are unbounded.
      r.variance = INFINITY;
      r.delta = pa == pb ? 0.0 : (pa > pb ? INFINITY : -INFINITY);
      r.z = 0.0;
    }
    out.rows.push_back(std::move(r));
  }
  return out;
}

LogOddsResult fightin_words_by_arm(const CorpusLabels& labels, std::span<const TutorProfile> tutors,
                                   double prior_scale) {
  std::unordered_map<std::string, Arm> arm;
  for (const auto& t : tutors) arm[t.tutor_id] = t.arm;
  LabelCounts c[2];
  for (auto& side : c) {
    for (const auto& l : labels.labels) side.counts[l] = 0.0;
  }
  for (const auto& s : labels.sessions) {
    const auto it = arm.find(s.tutor_id);
    if (it == arm.end()) throw InvalidArgument("label counts name unknown tutor " + s.tutor_id);
    auto& side = c[it->second == Arm::treatment ? 0 : 1];
    side.total += static_cast<double>(s.tutor_messages);
    for (std::size_t k = 0; k < labels.labels.size(); ++k) {
      side.counts[labels.labels[k]] += static_cast<double>(s.counts[k]);
    }
  }
  auto out = fightin_words(c[0], c[1], prior_scale);
  // Keep taxonomy order rather than map order.
  std::vector<LogOddsRow> ordered;
  for (const auto& l : labels.labels) ordered.push_back(out.at(l));
  out.rows = std::move(ordered);
  return out;
}

nlohmann::ordered_json to_json(const LogOddsResult& r) {
  nlohmann::ordered_json j;
  j["prior_scale"] = r.prior_scale;
  j["prior_total"] = r.prior_total;
  j["labels"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    j["labels"].push_back({{"label", row.label},
                           {"count_a", row.y_a},
                           {"count_b", row.y_b},
                           {"prior", row.prior},
                           {"delta", row.delta},
                           {"variance", row.variance},
                           {"z", row.z}});
  }
  return j;
}

}  // namespace copilot::stats
