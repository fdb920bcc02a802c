#include "filter/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "filter/errors.hpp"

namespace filter {

Pairing pairing_from_string(const std::string& name) {
  if (name == "translation") return Pairing::Translation;
  if (name == "self") return Pairing::SelfPaired;
  throw ConfigError("unknown pairing '" + name +
                    "'; expected translation or self");
}

std::string to_string(Pairing pairing) {
  return pairing == Pairing::Translation ? "translation" : "self";
}

namespace {

StreamInput make_stream(const std::vector<int>& tokens, Task task) {
  StreamInput in;
  in.tokens = tokens;
  if (task == Task::Span) in.candidates = span_candidates(in.tokens);
  return in;
}

}  // namespace

Prediction infer(const FilterModel& model, const Example& ex,
                 Pairing pairing) {
  if (ex.eval_language != "source" && ex.eval_language != "target") {
    throw DataError("example " + std::to_string(ex.id) +
                    " has no eval_language to score");
  }
  const Task task = model.config().task;
  const bool eval_target = ex.eval_language == "target";
  const std::vector<int>& evaluated =
      eval_target ? ex.target_tokens : ex.source_tokens;
  const std::vector<int>& mate =
      eval_target ? ex.source_tokens : ex.target_tokens;
  const std::vector<int>& paired =
      pairing == Pairing::Translation ? mate : evaluated;

  PairForward fw = model.forward_pair(make_stream(paired, task),
                                      make_stream(evaluated, task));
  TaskProbabilities probs = probabilities(fw.target);

  Prediction pred;
  pred.task = task;
  switch (task) {
    case Task::Classification:
      pred.class_index = argmax_row(probs.class_probs);
      break;
    case Task::Tagging:
      pred.tags = argmax_rows(probs.tag_probs);
      break;
    case Task::Span:
      pred.span = decode_span(probs.start_probs, probs.end_probs,
                              model.config().max_answer_len);
      break;
  }
  return pred;
}

double accuracy(const std::vector<int>& predicted,
                const std::vector<int>& gold) {
  if (predicted.empty()) throw DataError("accuracy of an empty sequence");
  if (predicted.size() != gold.size()) {
    throw DataError("accuracy length mismatch: " +
                    std::to_string(predicted.size()) + " vs " +
                    std::to_string(gold.size()));
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == gold[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

std::vector<std::string> tags_to_bio(const std::vector<int>& tags) {
  std::vector<std::string> bio;
  bio.reserve(tags.size());
  for (int t : tags) {
    if (t < 0) throw DataError("negative tag " + std::to_string(t));
    if (t == 0) {
      bio.emplace_back("O");
      continue;
    }
    const int type = (t - 1) / 2;
    std::string name = type < 26 ? std::string(1, char('A' + type))
                                 : "T" + std::to_string(type);
    bio.push_back((t % 2 == 1 ? "B-" : "I-") + name);
  }
  return bio;
}

namespace {

using Entity = std::tuple<std::string, int, int>;  // type, start, end

std::vector<Entity> decode_entities(const std::vector<std::string>& bio) {
  std::vector<Entity> entities;
  std::string open_type;
  int open_start = -1;
  auto close = [&](int end) {
    if (!open_type.empty()) {
      entities.emplace_back(open_type, open_start, end);
      open_type.clear();
    }
  };
  for (int i = 0; i < static_cast<int>(bio.size()); ++i) {
    const std::string& tag = bio[i];
    if (tag == "O") {
      close(i - 1);
      continue;
    }
    if (tag.size() < 3 || (tag[0] != 'B' && tag[0] != 'I') || tag[1] != '-') {
      throw DataError("malformed BIO tag \"" + tag + "\"");
    }
    const std::string type = tag.substr(2);
    // An I-X that does not continue an open X entity counts as starting
    // one (conlleval-style repair).
    const bool continues = tag[0] == 'I' && type == open_type;
    if (!continues) {
      close(i - 1);
      open_type = type;
      open_start = i;
    }
  }
  close(static_cast<int>(bio.size()) - 1);
  return entities;
}

}  // namespace

EntityCounts entity_counts(const std::vector<std::string>& predicted,
                           const std::vector<std::string>& gold) {
  if (predicted.size() != gold.size()) {
    throw DataError("entity_counts length mismatch: " +
                    std::to_string(predicted.size()) + " vs " +
                    std::to_string(gold.size()));
  }
  std::vector<Entity> p = decode_entities(predicted);
  std::vector<Entity> g = decode_entities(gold);
  std::set<Entity> gold_set(g.begin(), g.end());
  EntityCounts counts;
  counts.predicted = static_cast<int>(p.size());
  counts.gold = static_cast<int>(g.size());
  for (const Entity& e : p) {
    if (gold_set.count(e)) ++counts.matched;
  }
  return counts;
}

namespace {

double f1_from_counts(const EntityCounts& c) {
  if (c.predicted == 0 && c.gold == 0) return 1.0;
  if (c.matched == 0) return 0.0;
  const double precision = static_cast<double>(c.matched) / c.predicted;
  const double recall = static_cast<double>(c.matched) / c.gold;
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

double entity_f1(const std::vector<std::string>& predicted,
                 const std::vector<std::string>& gold) {
  return f1_from_counts(entity_counts(predicted, gold));
}

EmF1 span_em_f1(const std::vector<int>& predicted_tokens,
                const std::vector<int>& gold_tokens) {
  EmF1 result;
  result.em = predicted_tokens == gold_tokens ? 1.0 : 0.0;
  if (predicted_tokens.empty() && gold_tokens.empty()) {
    result.f1 = 1.0;
    return result;
  }
  if (predicted_tokens.empty() || gold_tokens.empty()) return result;

  std::map<int, int> gold_counts;
  for (int t : gold_tokens) ++gold_counts[t];
  int common = 0;
  for (int t : predicted_tokens) {
    auto it = gold_counts.find(t);
    if (it != gold_counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return result;
  const double precision =
      static_cast<double>(common) / static_cast<double>(predicted_tokens.size());
  const double recall =
      static_cast<double>(common) / static_cast<double>(gold_tokens.size());
  result.f1 = 2.0 * precision * recall / (precision + recall);
  return result;
}

double transfer_gap(const std::map<std::string, double>& per_language,
                    const std::string& source_language) {
  auto src = per_language.find(source_language);
  if (src == per_language.end()) {
    throw DataError("transfer_gap: no score for " + source_language);
  }
  double total = 0.0;
  int n = 0;
  for (const auto& [language, score] : per_language) {
    if (language == source_language) continue;
    total += score;
    ++n;
  }
  if (n == 0) throw DataError("transfer_gap: no transfer languages");
  return src->second - total / n;
}

std::string primary_metric(Task task) {
  switch (task) {
    case Task::Classification:
      return "accuracy";
    case Task::Tagging:
      return "token_accuracy";
    case Task::Span:
      return "f1";
  }
  throw ShapeError("primary_metric: bad task");
}

namespace {

std::vector<int> slice(const std::vector<int>& tokens, const SpanLabel& span) {
  if (span.start < 0 || span.end < span.start ||
      span.end >= static_cast<int>(tokens.size())) {
    throw DataError("span outside the sequence");
  }
  return std::vector<int>(tokens.begin() + span.start,
                          tokens.begin() + span.end + 1);
}

struct Bucket {
  int n = 0;
  // classification / tagging token counts
  std::int64_t correct = 0;
  std::int64_t total = 0;
  EntityCounts entities;
  // span sums
  double em = 0.0;
  double f1 = 0.0;
};

const Label& gold_label(const Example& ex) {
  if (ex.eval_language == "source") return ex.label_source;
  if (!ex.label_target) {
    throw DataError("example " + std::to_string(ex.id) +
                    " has no target label to score");
  }
  return *ex.label_target;
}

void score_example(const Example& ex, const Prediction& pred, Bucket* bucket) {
  const Label& gold = gold_label(ex);
  switch (pred.task) {
    case Task::Classification: {
      const int* cls = std::get_if<int>(&gold);
      if (!cls) throw DataError("classification label of the wrong kind");
      bucket->correct += pred.class_index == *cls ? 1 : 0;
      bucket->total += 1;
      break;
    }
    case Task::Tagging: {
      const auto* tags = std::get_if<std::vector<int>>(&gold);
      if (!tags) throw DataError("tagging label of the wrong kind");
      if (tags->size() != pred.tags.size()) {
        throw DataError("tag label length mismatch");
      }
      for (std::size_t i = 0; i < tags->size(); ++i) {
        if (pred.tags[i] == (*tags)[i]) ++bucket->correct;
      }
      bucket->total += static_cast<std::int64_t>(tags->size());
      EntityCounts c =
          entity_counts(tags_to_bio(pred.tags), tags_to_bio(*tags));
      bucket->entities.matched += c.matched;
      bucket->entities.predicted += c.predicted;
      bucket->entities.gold += c.gold;
      break;
    }
    case Task::Span: {
      const auto* span = std::get_if<SpanLabel>(&gold);
      if (!span) throw DataError("span label of the wrong kind");
      const std::vector<int>& tokens = ex.eval_language == "target"
                                           ? ex.target_tokens
                                           : ex.source_tokens;
      SpanLabel predicted{pred.span.start, pred.span.end};
      EmF1 s = span_em_f1(slice(tokens, predicted), slice(tokens, *span));
      bucket->em += s.em;
      bucket->f1 += s.f1;
      break;
    }
  }
  ++bucket->n;
}

std::map<std::string, double> bucket_metrics(Task task, const Bucket& b) {
  std::map<std::string, double> out;
  switch (task) {
    case Task::Classification:
      out["accuracy"] = static_cast<double>(b.correct) / b.total;
      break;
    case Task::Tagging:
      out["token_accuracy"] = static_cast<double>(b.correct) / b.total;
      out["entity_f1"] = f1_from_counts(b.entities);
      break;
    case Task::Span:
      out["em"] = b.em / b.n;
      out["f1"] = b.f1 / b.n;
      break;
  }
  return out;
}

}  // namespace

MetricsReport evaluate(const FilterModel& model, const Dataset& data,
                       const std::string& split, const std::string& language,
                       Pairing pairing) {
  if (split != "train" && split != "dev" && split != "test") {
    throw ConfigError("unknown split '" + split + "'");
  }
  if (language != "source" && language != "target" && language != "all") {
    throw ConfigError("unknown language '" + language +
                      "'; expected source, target or all");
  }

  std::map<std::string, Bucket> buckets;
  for (const Example& ex : data.examples) {
    if (ex.split != split) continue;
    if (language != "all" && ex.eval_language != language) continue;
    Prediction pred = infer(model, ex, pairing);
    score_example(ex, pred, &buckets[ex.eval_language]);
  }
  if (buckets.empty()) {
    throw DataError("no examples in split '" + split + "' match language '" +
                    language + "'");
  }

  MetricsReport report;
  report.task = model.config().task;
  report.split = split;
  report.pairing = pairing;
  for (const auto& [lang, bucket] : buckets) {
    report.per_language[lang] = bucket_metrics(report.task, bucket);
    report.counts[lang] = bucket.n;
  }
  for (const auto& [lang, metrics] : report.per_language) {
    for (const auto& [name, value] : metrics) {
      report.aggregate[name] += value / static_cast<double>(buckets.size());
    }
  }
  if (report.per_language.count("source") && report.per_language.size() > 1) {
    std::map<std::string, double> primary;
    for (const auto& [lang, metrics] : report.per_language) {
      primary[lang] = metrics.at(primary_metric(report.task));
    }
    report.gap = transfer_gap(primary, "source");
  }
  return report;
}

std::string format_report(const MetricsReport& report) {
  std::vector<std::string> metric_names;
  for (const auto& [name, value] : report.aggregate) {
    metric_names.push_back(name);
  }

  std::ostringstream out;
  char cell[64];
  auto emit_row = [&](const std::string& label,
                      const std::map<std::string, double>& metrics, int n) {
    std::snprintf(cell, sizeof cell, "%-10s", label.c_str());
    out << cell;
    for (const std::string& name : metric_names) {
      std::snprintf(cell, sizeof cell, "  %*.6f",
                    static_cast<int>(std::max<std::size_t>(name.size(), 8)),
                    metrics.at(name));
      out << cell;
    }
    if (n >= 0) {
      std::snprintf(cell, sizeof cell, "  %6d", n);
      out << cell;
    }
    out << '\n';
  };

  std::snprintf(cell, sizeof cell, "%-10s", "language");
  out << cell;
  for (const std::string& name : metric_names) {
    std::snprintf(cell, sizeof cell, "  %*s",
                  static_cast<int>(std::max<std::size_t>(name.size(), 8)),
                  name.c_str());
    out << cell;
  }
  out << "       n\n";
  for (const auto& [lang, metrics] : report.per_language) {
    emit_row(lang, metrics, report.counts.at(lang));
  }
  int total = 0;
  for (const auto& [lang, n] : report.counts) total += n;
  emit_row("mean", report.aggregate, total);
  if (report.gap) {
    std::snprintf(cell, sizeof cell, "transfer gap (%s): %.6f",
                  primary_metric(report.task).c_str(), *report.gap);
    out << cell << '\n';
  }
  return out.str();
}

void write_report(const MetricsReport& report, const std::string& path) {
  nlohmann::json j;
  j["task"] = to_string(report.task);
  j["split"] = report.split;
  j["pairing"] = to_string(report.pairing);
  j["per_language"] = report.per_language;
  j["counts"] = report.counts;
  j["aggregate"] = report.aggregate;
  j["transfer_gap"] = nullptr;
  if (report.gap) j["transfer_gap"] = *report.gap;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open report for writing: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw DataError("failed writing report: " + path);
}

}  // namespace filter
