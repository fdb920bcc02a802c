#include "filter/model.hpp"

#include <algorithm>
#include <cmath>

#include "filter/errors.hpp"
#include "filter/rng.hpp"

namespace filter {

Task task_from_string(const std::string& name) {
  if (name == "classification") return Task::Classification;
  if (name == "tagging") return Task::Tagging;
  if (name == "span") return Task::Span;
  throw ConfigError("unknown task '" + name +
                    "'; expected classification, tagging or span");
}

std::string to_string(Task task) {
  switch (task) {
    case Task::Classification: return "classification";
    case Task::Tagging: return "tagging";
    case Task::Span: return "span";
  }
  throw ConfigError("unknown task enum value");
}

StagePlan plan_stages(const FilterConfig& cfg) {
  validate(cfg);
  return {cfg.m_local, cfg.k_fuse,
          cfg.encoder.n_layers - cfg.m_local - cfg.k_fuse};
}

void validate(const FilterConfig& cfg) {
  validate(cfg.encoder);
  if (cfg.m_local < 0 || cfg.k_fuse < 0)
    throw ConfigError("stage depths must be non-negative, got m=" +
                      std::to_string(cfg.m_local) + " k=" +
                      std::to_string(cfg.k_fuse));
  if (cfg.m_local + cfg.k_fuse > cfg.encoder.n_layers)
    throw ConfigError("m + k = " +
                      std::to_string(cfg.m_local + cfg.k_fuse) +
                      " exceeds the " + std::to_string(cfg.encoder.n_layers) +
                      "-layer budget");
  if (cfg.n_classes < 2)
    throw ConfigError("n_classes must be at least 2");
  if (cfg.n_tags < 2) throw ConfigError("n_tags must be at least 2");
  if (cfg.max_answer_len < 1)
    throw ConfigError("max_answer_len must be at least 1");
}

FilterModel::FilterModel(FilterConfig cfg, std::uint64_t seed)
    : cfg_(cfg), encoder_(cfg.encoder, SeedSequence(seed).next_seed()) {
  validate(cfg_);
  SeedSequence seq(seed);
  (void)seq.next_seed();  // consumed by the encoder above
  const int d = cfg_.encoder.d_model;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  switch (cfg_.task) {
    case Task::Classification:
      w_classify_ = uniform_parameter(d, cfg_.n_classes, bound,
                                      seq.next_stream());
      break;
    case Task::Tagging:
      w_tag_ = uniform_parameter(d, cfg_.n_tags, bound, seq.next_stream());
      break;
    case Task::Span:
      w_span_start_ = uniform_parameter(d, 1, bound, seq.next_stream());
      w_span_end_ = uniform_parameter(d, 1, bound, seq.next_stream());
      break;
  }
}

PairForward FilterModel::forward_pair(const StreamInput& source,
                                      const StreamInput& target) const {
  PairForward out;
  Tensor hs = encoder_.embed(source.tokens);
  Tensor ht = encoder_.embed(target.tokens);
  const int total = cfg_.encoder.n_layers;
  const int m = cfg_.m_local;
  const int k = cfg_.k_fuse;
  hs = encoder_.run_stack(hs, 0, m);
  ht = encoder_.run_stack(ht, 0, m);
  out.h_s_local = hs;
  out.h_t_local = ht;
  if (k > 0) {
    Tensor joint = encoder_.run_stack(concat_rows(hs, ht), m, m + k);
    auto parts = split_rows(joint, hs.rows());
    hs = parts.first;
    ht = parts.second;
  }
  out.h_s_fused = hs;
  out.h_t_fused = ht;
  hs = encoder_.run_stack(hs, m + k, total);
  ht = encoder_.run_stack(ht, m + k, total);
  out.h_s_domain = hs;
  out.h_t_domain = ht;
  apply_head(hs, source, &out.source);
  apply_head(ht, target, &out.target);
  return out;
}

void FilterModel::apply_head(const Tensor& h, const StreamInput& in,
                             HeadOutput* out) const {
  out->task = cfg_.task;
  switch (cfg_.task) {
    case Task::Classification: {
      Tensor pooled = h.rows() == 1 ? h : split_rows(h, 1).first;
      out->class_logits = matmul(pooled, w_classify_);
      break;
    }
    case Task::Tagging: {
      out->tag_logits = matmul(h, w_tag_);
      break;
    }
    case Task::Span: {
      const int len = h.rows();
      if (static_cast<int>(in.candidates.size()) != len)
        throw DataError("span head: " + std::to_string(in.candidates.size()) +
                        " candidate flags for " + std::to_string(len) +
                        " positions");
      std::vector<double> maskv(len);
      bool any = false;
      for (int i = 0; i < len; ++i) {
        maskv[i] = in.candidates[i] ? 0.0 : -1e9;
        any = any || in.candidates[i];
      }
      if (!any) throw DataError("span head: no candidate positions");
      Tensor mask = Tensor::from_flat(1, len, std::move(maskv));
      out->start_logits = add(transpose(matmul(h, w_span_start_)), mask);
      out->end_logits = add(transpose(matmul(h, w_span_end_)), mask);
      break;
    }
  }
}

std::vector<std::pair<std::string, Tensor>> FilterModel::named_parameters()
    const {
  auto out = encoder_.named_parameters();
  switch (cfg_.task) {
    case Task::Classification:
      out.emplace_back("head.classify.w", w_classify_);
      break;
    case Task::Tagging:
      out.emplace_back("head.tag.w", w_tag_);
      break;
    case Task::Span:
      out.emplace_back("head.span.start_w", w_span_start_);
      out.emplace_back("head.span.end_w", w_span_end_);
      break;
  }
  return out;
}

namespace {

std::vector<double> softmax_row_values(const Tensor& logits) {
  Tensor p = softmax_rows(logits);
  return {p.values().begin(), p.values().end()};
}

}  // namespace

TaskProbabilities probabilities(const HeadOutput& head) {
  TaskProbabilities tp;
  tp.task = head.task;
  switch (head.task) {
    case Task::Classification:
      tp.class_probs = softmax_row_values(head.class_logits);
      break;
    case Task::Tagging: {
      Tensor p = softmax_rows(head.tag_logits);
      tp.tag_probs.resize(p.rows());
      for (int i = 0; i < p.rows(); ++i) {
        tp.tag_probs[i].resize(p.cols());
        for (int j = 0; j < p.cols(); ++j) tp.tag_probs[i][j] = p(i, j);
      }
      break;
    }
    case Task::Span:
      tp.start_probs = softmax_row_values(head.start_logits);
      tp.end_probs = softmax_row_values(head.end_logits);
      break;
  }
  return tp;
}

int argmax_row(const std::vector<double>& probs) {
  if (probs.empty()) throw ShapeError("argmax_row: empty distribution");
  int best = 0;
  for (int i = 1; i < static_cast<int>(probs.size()); ++i)
    if (probs[i] > probs[best]) best = i;
  return best;
}

std::vector<int> argmax_rows(const std::vector<std::vector<double>>& probs) {
  std::vector<int> out;
  out.reserve(probs.size());
  for (const auto& row : probs) out.push_back(argmax_row(row));
  return out;
}

SpanPrediction decode_span(const std::vector<double>& start_probs,
                           const std::vector<double>& end_probs,
                           int max_answer_len) {
  const int n = static_cast<int>(start_probs.size());
  if (n == 0 || end_probs.size() != start_probs.size())
    throw ShapeError("decode_span: bad distribution lengths");
  if (max_answer_len < 1)
    throw ShapeError("decode_span: max_answer_len must be at least 1");
  SpanPrediction best{0, 0};
  double best_score = -1.0;
  for (int i = 0; i < n; ++i) {
    const int j_end = std::min(n, i + max_answer_len);
    for (int j = i; j < j_end; ++j) {
      const double score = start_probs[i] * end_probs[j];
      if (score > best_score) {
        best_score = score;
        best = {i, j};
      }
    }
  }
  return best;
}

}  // namespace filter
