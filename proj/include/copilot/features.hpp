#pragma once

// Hashed n-gram features for (context, target) pairs.
//
// Text is lowercased (ASCII only), split into word tokens; digit runs
// become the token <num>, and '?' and '!' are tokens of their own. Each
// message is wrapped in <s> ... </s> and contributes its bigrams and
// trigrams (no unigrams). Context n-grams (one namespace per sender) and
// target n-grams live in disjoint namespaces; the context message right
// before the target is hashed once more in a namespace of its own, and one
// fixed separator feature marks the boundary.
//
// Each token hashes with fnv1a64 seeded by the model's hash seed; an
// n-gram folds its namespace, n and token hashes through mix64, and the
// result is masked to kFeatureBits bits.
// Features are binary before scaling. The context block and the target
// block (separator included) are each scaled to norm 1/sqrt(2), so a long
// context cannot drown out the utterance; with no context the target block
// alone has unit norm.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "copilot/domain.hpp"

namespace copilot {

inline constexpr unsigned kFeatureBits = 18;
inline constexpr std::uint32_t kFeatureDim = 1u << kFeatureBits;
inline constexpr std::uint64_t kDefaultHashSeed = 0x7475746f72636f70ULL;

std::vector<std::string> tokenize(std::string_view text);

struct SparseFeatures {
  std::vector<std::uint32_t> index;  // sorted, unique
  std::vector<double> value;         // parallel to index

  std::size_t nnz() const { return index.size(); }
};

SparseFeatures featurize(std::span<const ChatMessage> context, std::string_view target,
                         std::uint64_t seed = kDefaultHashSeed);

// The pieces featurize() is made of, for callers sliding a window over a
// transcript who want to hash each message once.
void append_context_ngrams(const ChatMessage& message, std::uint64_t seed,
                           std::vector<std::uint32_t>& out);
void append_previous_ngrams(const ChatMessage& message, std::uint64_t seed,
                            std::vector<std::uint32_t>& out);
void append_target_ngrams(std::string_view target, std::uint64_t seed,
                          std::vector<std::uint32_t>& out);
std::uint32_t separator_feature(std::uint64_t seed);
// Sorts, dedups and scales both blocks; an index present in both blocks
// gets the sum of the two values.
SparseFeatures finish_features(std::vector<std::uint32_t> context, std::vector<std::uint32_t> target);

}  // namespace copilot
