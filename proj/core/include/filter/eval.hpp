#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "filter/corpus.hpp"
#include "filter/model.hpp"

namespace filter {

// How the evaluated text is paired up for the forward pass. The text under
// evaluation always sits in the target slot and is always decoded from the
// target head; Translation puts its counterpart from the other language in
// the source slot, SelfPaired repeats the evaluated text there (for probing
// how much the pair context contributes).
enum class Pairing { Translation, SelfPaired };

Pairing pairing_from_string(const std::string& name);  // ConfigError
std::string to_string(Pairing pairing);

struct Prediction {
  Task task = Task::Classification;
  int class_index = -1;
  std::vector<int> tags;
  SpanPrediction span;
};

// Decodes one dev/test example. DataError when the example carries no
// eval_language or lacks the label its language requires.
Prediction infer(const FilterModel& model, const Example& ex,
                 Pairing pairing = Pairing::Translation);

// --- Metric primitives ----------------------------------------------------

// Fraction of positions where the sequences agree. DataError on empty or
// mismatched inputs.
double accuracy(const std::vector<int>& predicted,
                const std::vector<int>& gold);

// Numeric tags as BIO strings: 0 is O, odd tags open an entity type, the
// following even tag continues it (1 B-A, 2 I-A, 3 B-B, 4 I-B, ...).
std::vector<std::string> tags_to_bio(const std::vector<int>& tags);

struct EntityCounts {
  int matched = 0;
  int predicted = 0;
  int gold = 0;
};

// Exact-boundary entity match counts between two BIO sequences. A dangling
// I-X with no open entity of type X is repaired to B-X before decoding.
EntityCounts entity_counts(const std::vector<std::string>& predicted,
                           const std::vector<std::string>& gold);

// F1 over entity_counts; two entity-free sequences score 1.
double entity_f1(const std::vector<std::string>& predicted,
                 const std::vector<std::string>& gold);

struct EmF1 {
  double em = 0.0;
  double f1 = 0.0;
};

// Exact match and token-overlap F1 between two extracted token lists.
EmF1 span_em_f1(const std::vector<int>& predicted_tokens,
                const std::vector<int>& gold_tokens);

// Source score minus the mean of all other languages' scores. DataError
// when the source language or every other language is missing.
double transfer_gap(const std::map<std::string, double>& per_language,
                    const std::string& source_language);

// --- Dataset-level evaluation ----------------------------------------------

std::string primary_metric(Task task);

struct MetricsReport {
  Task task = Task::Classification;
  std::string split;
  Pairing pairing = Pairing::Translation;
  // language -> metric name -> value. Tagging entity F1 is corpus-level
  // (counts pooled over examples); the rest are per-example means.
  std::map<std::string, std::map<std::string, double>> per_language;
  std::map<std::string, int> counts;
  std::map<std::string, double> aggregate;  // unweighted mean over languages
  // Gap on the primary metric; present only when the source language and at
  // least one other were evaluated.
  std::optional<double> gap;
};

// language is "source", "target" or "all". ConfigError on a bad split or
// language name, DataError when nothing matches the filter.
MetricsReport evaluate(const FilterModel& model, const Dataset& data,
                       const std::string& split, const std::string& language,
                       Pairing pairing = Pairing::Translation);

std::string format_report(const MetricsReport& report);
void write_report(const MetricsReport& report, const std::string& path);

}  // namespace filter
