#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "filter/encoder.hpp"
#include "filter/tensor.hpp"

namespace filter {

enum class Task { Classification, Tagging, Span };

Task task_from_string(const std::string& name);  // ConfigError on unknown
std::string to_string(Task task);

struct FilterConfig {
  EncoderConfig encoder;
  int m_local = 1;  // layers run on each stream separately
  int k_fuse = 1;   // layers run on the joined pair
  Task task = Task::Classification;
  int n_classes = 3;
  int n_tags = 5;
  int max_answer_len = 8;

  bool operator==(const FilterConfig&) const = default;
};

// Depth budget of the three stages; n_domain is what remains after the
// local and fused stages.
struct StagePlan {
  int m_local;
  int k_fuse;
  int n_domain;
};

// Throws ConfigError when m or k is negative, m + k exceeds the layer
// count, or a task dimension is non-positive.
StagePlan plan_stages(const FilterConfig& cfg);
void validate(const FilterConfig& cfg);

// One encoded stream of a pair, ready for a task head. For the span task
// candidates flags the positions an answer may occupy; empty otherwise.
struct StreamInput {
  std::vector<int> tokens;
  std::vector<std::uint8_t> candidates;
};

// Task head logits for one stream. Only the fields of the active task are
// populated; the rest stay empty handles.
struct HeadOutput {
  Task task = Task::Classification;
  Tensor class_logits;  // 1 x n_classes
  Tensor tag_logits;    // len x n_tags
  Tensor start_logits;  // 1 x len, non-candidates pushed to -1e9
  Tensor end_logits;    // 1 x len
};

// Full forward-pass record for one pair: per-stage stream states plus the
// head outputs. With k = 0 the fused state is just the local state.
struct PairForward {
  Tensor h_s_local, h_t_local;    // after the per-stream stage
  Tensor h_s_fused, h_t_fused;    // after the joint stage, split back
  Tensor h_s_domain, h_t_domain;  // final per-stream states
  HeadOutput source;
  HeadOutput target;
};

// Plain-double view of a head's output distributions, for serialization and
// metric code that lives outside the tape.
struct TaskProbabilities {
  Task task = Task::Classification;
  std::vector<double> class_probs;             // n_classes
  std::vector<std::vector<double>> tag_probs;  // len x n_tags
  std::vector<double> start_probs;             // len
  std::vector<double> end_probs;               // len
};

struct SpanPrediction {
  int start = 0;  // inclusive token positions
  int end = 0;
};

// Joint encoder over a bilingual pair. Both streams run the first m layers
// separately with shared weights, the next k layers as one concatenated
// sequence, and the remaining layers separately again; one task head (also
// shared) scores each stream. With k = 0 the pair never interacts; with
// m = 0, k = L it is a single joint encoder throughout.
class FilterModel {
 public:
  FilterModel(FilterConfig cfg, std::uint64_t seed);

  const FilterConfig& config() const { return cfg_; }
  const Encoder& encoder() const { return encoder_; }

  PairForward forward_pair(const StreamInput& source,
                           const StreamInput& target) const;

  // Encoder parameters followed by the active task head's weights.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

 private:
  void apply_head(const Tensor& h, const StreamInput& in,
                  HeadOutput* out) const;

  FilterConfig cfg_;
  Encoder encoder_;
  Tensor w_classify_;    // d x n_classes
  Tensor w_tag_;         // d x n_tags
  Tensor w_span_start_;  // d x 1
  Tensor w_span_end_;    // d x 1
};

// Softmax of the head logits, copied out as plain doubles.
TaskProbabilities probabilities(const HeadOutput& head);

// Highest-probability class index of a 1 x C row.
int argmax_row(const std::vector<double>& probs);

// Per-token argmax of len x Y probabilities.
std::vector<int> argmax_rows(const std::vector<std::vector<double>>& probs);

// Best (start, end) with start <= end and end - start < max_answer_len,
// scored by start_probs[start] * end_probs[end]. Ties break toward the
// earliest start, then earliest end.
SpanPrediction decode_span(const std::vector<double>& start_probs,
                           const std::vector<double>& end_probs,
                           int max_answer_len);

}  // namespace filter
