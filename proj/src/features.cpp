#include "copilot/features.hpp"

#include <algorithm>
#include <cmath>

#include "copilot/hash.hpp"

namespace copilot {

namespace {

bool is_word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '\'' || c >= 0x80;
}

bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }

// Token callback form used by both tokenize() and featurize().
template <typename Fn>
void for_each_token(std::string_view text, Fn&& fn) {
  std::size_t i = 0;
  std::string word;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_word_byte(c)) {
      word.clear();
      while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) {
        char ch = text[i++];
        if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
        word.push_back(ch);
      }
      fn(std::string_view(word));
    } else if (is_digit(c)) {
      // "3.5" and "1,000" are one number
      while (i < text.size() &&
             (is_digit(static_cast<unsigned char>(text[i])) ||
              ((text[i] == '.' || text[i] == ',') && i + 1 < text.size() &&
               is_digit(static_cast<unsigned char>(text[i + 1]))))) {
        ++i;
      }
      fn(std::string_view("<num>"));
    } else {
      if (c == '?') fn(std::string_view("?"));
      if (c == '!') fn(std::string_view("!"));
      ++i;
    }
  }
}

constexpr std::uint32_t kMask = kFeatureDim - 1;

class NgramHasher {
 public:
  NgramHasher(std::uint64_t seed, std::vector<std::uint32_t>& out) : seed_(seed), out_(out) {}

  void message(std::string_view tag, std::string_view text) {
    const std::uint64_t ns = fnv1a64(tag, seed_);
    std::vector<std::uint64_t> toks;
    toks.push_back(fnv1a64("<s>", seed_));
    for_each_token(text, [&](std::string_view t) { toks.push_back(fnv1a64(t, seed_)); });
    toks.push_back(fnv1a64("</s>", seed_));
    for (std::size_t n = 2; n <= 3; ++n) {
      for (std::size_t i = 0; i + n <= toks.size(); ++i) {
        std::uint64_t h = mix64(ns ^ n);
        for (std::size_t k = 0; k < n; ++k) h = mix64(h ^ toks[i + k]);
        out_.push_back(static_cast<std::uint32_t>(h & kMask));
      }
    }
  }

 private:
  std::uint64_t seed_;
  std::vector<std::uint32_t>& out_;
};

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for_each_token(text, [&](std::string_view t) { out.emplace_back(t); });
  return out;
}

void append_context_ngrams(const ChatMessage& message, std::uint64_t seed,
                           std::vector<std::uint32_t>& out) {
  NgramHasher(seed, out).message(message.sender == Sender::tutor ? "C|tutor" : "C|student",
                                 message.text);
}

void append_previous_ngrams(const ChatMessage& message, std::uint64_t seed,
                            std::vector<std::uint32_t>& out) {
  NgramHasher(seed, out).message(message.sender == Sender::tutor ? "P|tutor" : "P|student",
                                 message.text);
}

void append_target_ngrams(std::string_view target, std::uint64_t seed,
                          std::vector<std::uint32_t>& out) {
  NgramHasher(seed, out).message("T|", target);
}

std::uint32_t separator_feature(std::uint64_t seed) {
  return static_cast<std::uint32_t>(mix64(fnv1a64("<sep>", seed)) & kMask);
}

SparseFeatures finish_features(std::vector<std::uint32_t> context, std::vector<std::uint32_t> target) {
  auto dedup = [](std::vector<std::uint32_t>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  dedup(context);
  dedup(target);
  const double share = context.empty() || target.empty() ? 1.0 : 0.5;
  const double vc = context.empty() ? 0.0 : std::sqrt(share / static_cast<double>(context.size()));
  const double vt = target.empty() ? 0.0 : std::sqrt(share / static_cast<double>(target.size()));

  SparseFeatures f;
  f.index.reserve(context.size() + target.size());
  f.value.reserve(context.size() + target.size());
  std::size_t i = 0, j = 0;
  while (i < context.size() || j < target.size()) {
    if (j == target.size() || (i < context.size() && context[i] < target[j])) {
      f.index.push_back(context[i++]);
      f.value.push_back(vc);
    } else if (i == context.size() || target[j] < context[i]) {
      f.index.push_back(target[j++]);
      f.value.push_back(vt);
    } else {
      f.index.push_back(context[i]);
      f.value.push_back(vc + vt);
      ++i;
      ++j;
    }
  }
  return f;
}

SparseFeatures featurize(std::span<const ChatMessage> context, std::string_view target,
                         std::uint64_t seed) {
  std::vector<std::uint32_t> ctx, tgt;
  for (const auto& m : context) append_context_ngrams(m, seed, ctx);
  if (!context.empty()) append_previous_ngrams(context.back(), seed, ctx);
  tgt.push_back(separator_feature(seed));
  append_target_ngrams(target, seed, tgt);
  return finish_features(std::move(ctx), std::move(tgt));
}

}  // namespace copilot
