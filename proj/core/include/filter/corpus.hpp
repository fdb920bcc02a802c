#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "filter/model.hpp"

namespace filter {

// Token space of the synthetic bilingual corpus. Both languages share the
// specials; each source content token has exactly one target counterpart at
// a fixed offset. Token translation flips the language and is an involution.
namespace vocab {

constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kSep = 2;
constexpr int kContentBase = 3;
constexpr int kContentCount = 64;
constexpr int kTargetOffset = kContentCount;
constexpr int kVocabSize = kContentBase + 2 * kContentCount;  // 131

// Marker types drive the classification label; the rest are fillers.
constexpr int kMarkerCount = 8;

inline bool is_source_content(int t) {
  return t >= kContentBase && t < kContentBase + kContentCount;
}
inline bool is_target_content(int t) {
  return t >= kContentBase + kContentCount && t < kVocabSize;
}
inline bool is_content(int t) {
  return is_source_content(t) || is_target_content(t);
}

// Language-independent identity of a content token.
inline int content_index(int t) { return (t - kContentBase) % kContentCount; }

inline int translate(int t) {
  if (is_source_content(t)) return t + kTargetOffset;
  if (is_target_content(t)) return t - kTargetOffset;
  return t;
}

}  // namespace vocab

struct SpanLabel {
  int start = -1;  // inclusive, full-sequence coordinates
  int end = -1;
  bool operator==(const SpanLabel&) const = default;
};

// int for classification, per-position tags for tagging, SpanLabel for span.
using Label = std::variant<int, std::vector<int>, SpanLabel>;

struct Example {
  std::int64_t id = 0;
  std::string split;  // "train" | "dev" | "test"
  std::vector<int> source_tokens;
  std::vector<int> target_tokens;
  // alignment[i] = target position of the token at source position i;
  // always a permutation (the streams have equal length by construction).
  std::vector<int> alignment;
  Label label_source;
  std::optional<Label> label_target;  // absent when not transferable
  // Which side scoring reads ("source" or "target"); assigned to every
  // record, alternating by id, though only dev/test records are scored.
  std::string eval_language;
};

struct CorpusConfig {
  Task task = Task::Classification;
  int n_examples = 3000;
  // Translator imperfection: probability that a translated content token is
  // substituted by a random one. Applied to train-split target streams only;
  // labels are derived before corruption, dev/test pairs stay exact.
  double noise_rate = 0.0;
  // classification segments
  int min_premise = 4, max_premise = 16;
  int min_hypothesis = 4, max_hypothesis = 16;
  // tagging body
  int min_body = 4, max_body = 16;
  // span context (the question quotes the answer in the other language,
  // 1..max_answer_len tokens)
  int min_context = 4, max_context = 16;
  int max_answer_len = 3;
};

void validate(const CorpusConfig& cfg);

struct SplitSizes {
  int train = 0, dev = 0, test = 0;
};

// Contiguous 80/10/10 split by id, boundaries at floor(0.8n), floor(0.9n).
SplitSizes split_sizes(int n);

struct Dataset {
  CorpusConfig config;
  std::uint64_t seed = 0;
  std::vector<Example> examples;
  int regenerated_spans = 0;  // span draws rejected for non-contiguous transfer
  int noised_tokens = 0;      // translator substitutions applied
};

Dataset generate_dataset(const CorpusConfig& cfg, std::uint64_t seed);

// train/dev/test .jsonl files plus a meta.json sidecar in dir. Byte-stable
// for a fixed dataset: objects are written with sorted keys, records in id
// order.
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);  // DataError on any violation

// The reordering every content segment undergoes in translation: adjacent
// positions swap, a trailing odd position stays. Involution.
std::vector<int> pair_swap_permutation(int n);

struct Translation {
  std::vector<int> tokens;
  std::vector<int> alignment;  // alignment[i] = target position of source i
};

// Per-token translation plus per-segment reorder, with the exact position
// map. Specials stay in place; mixed-language input is fine (each content
// token flips language). DataError on tokens outside the vocabulary.
Translation translate_sequence(const std::vector<int>& tokens);

// Inverse of translate_sequence (reorder and token map are involutions).
std::vector<int> invert_translation(const std::vector<int>& target_tokens);

// Span-answer candidate flags: the context segment, i.e. positions after
// the leading sentinel and before the first separator.
std::vector<std::uint8_t> span_candidates(const std::vector<int>& tokens);

// Gold tags recomputed directly on a token sequence (position 0 is the
// sentinel tag 0). Defined so that pushing source tags through the
// alignment gives the same answer.
std::vector<int> tag_rule(const std::vector<int>& tokens, int n_tags);

}  // namespace filter
