#include "filter/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "filter/errors.hpp"
#include "filter/rng.hpp"
#include "json.hpp"

namespace filter {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<int> pair_swap_permutation(int n) {
  if (n < 0) throw ShapeError("pair_swap_permutation: negative length");
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = ((i ^ 1) < n) ? (i ^ 1) : i;
  return perm;
}

namespace {

bool is_special(int t) {
  return t == vocab::kPad || t == vocab::kBos || t == vocab::kSep;
}

// Walks maximal content runs of tokens, invoking fn(begin, end) per run.
template <typename Pred, typename Fn>
void for_each_run(const std::vector<int>& tokens, Pred is_run_token, Fn fn) {
  const int n = static_cast<int>(tokens.size());
  int i = 0;
  while (i < n) {
    if (is_run_token(tokens[i])) {
      int j = i;
      while (j < n && is_run_token(tokens[j])) ++j;
      fn(i, j);
      i = j;
    } else {
      ++i;
    }
  }
}

}  // namespace

Translation translate_sequence(const std::vector<int>& tokens) {
  for (int t : tokens)
    if (!is_special(t) && !vocab::is_content(t))
      throw DataError("translate: token " + std::to_string(t) +
                      " is not in the vocabulary");
  const int n = static_cast<int>(tokens.size());
  Translation tr;
  tr.alignment.resize(n);
  std::iota(tr.alignment.begin(), tr.alignment.end(), 0);
  for_each_run(tokens, vocab::is_content, [&](int b, int e) {
    const auto perm = pair_swap_permutation(e - b);
    for (int r = 0; r < e - b; ++r) tr.alignment[b + r] = b + perm[r];
  });
  tr.tokens.assign(n, 0);
  for (int i = 0; i < n; ++i)
    tr.tokens[tr.alignment[i]] = vocab::translate(tokens[i]);
  return tr;
}

std::vector<int> invert_translation(const std::vector<int>& target_tokens) {
  return translate_sequence(target_tokens).tokens;
}

std::vector<std::uint8_t> span_candidates(const std::vector<int>& tokens) {
  const int n = static_cast<int>(tokens.size());
  std::vector<std::uint8_t> flags(n, 0);
  int sep = -1;
  for (int i = 0; i < n && sep < 0; ++i)
    if (tokens[i] == vocab::kSep) sep = i;
  if (sep < 0)
    throw DataError("span_candidates: sequence has no separator");
  for (int i = 1; i < sep; ++i) flags[i] = 1;
  return flags;
}

std::vector<int> tag_rule(const std::vector<int>& tokens, int n_tags) {
  if (n_tags < 2) throw ShapeError("tag_rule: need at least 2 tags");
  std::vector<int> tags(tokens.size(), 0);
  // Marker tokens open entities over their swap pair: a lone marker tags its
  // pair as entity A (marker B-A, mate I-A); a double-marker pair is entity B
  // with B/I assigned by content order, so the tag is a function of the
  // unordered pair and survives reordering.
  for_each_run(tokens, vocab::is_content, [&](int b, int e) {
    const int len = e - b;
    for (int r = 0; r < len; ++r) {
      const int partner = ((r ^ 1) < len) ? (r ^ 1) : r;
      const int self = vocab::content_index(tokens[b + r]);
      const int mate = vocab::content_index(tokens[b + partner]);
      const bool self_marked = self < vocab::kMarkerCount;
      const bool mate_marked = mate < vocab::kMarkerCount;
      int tag = 0;
      if (self_marked && mate_marked) {
        tag = (self <= mate) ? 3 : 4;
      } else if (self_marked) {
        tag = 1;
      } else if (mate_marked) {
        tag = 2;
      }
      tags[b + r] = tag % n_tags;
    }
  });
  return tags;
}

void validate(const CorpusConfig& cfg) {
  if (cfg.n_examples < 1)
    throw ConfigError("n_examples must be at least 1, got " +
                      std::to_string(cfg.n_examples));
  if (cfg.noise_rate < 0.0 || cfg.noise_rate >= 1.0)
    throw ConfigError("noise_rate must lie in [0, 1)");
  auto check_range = [](int lo, int hi, const char* name) {
    if (lo < 1 || hi < lo)
      throw ConfigError(std::string("bad ") + name + " range [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + "]");
  };
  check_range(cfg.min_premise, cfg.max_premise, "premise");
  check_range(cfg.min_hypothesis, cfg.max_hypothesis, "hypothesis");
  check_range(cfg.min_body, cfg.max_body, "body");
  check_range(cfg.min_context, cfg.max_context, "context");
  if (cfg.max_answer_len < 1 || cfg.max_answer_len > cfg.min_context)
    throw ConfigError("max_answer_len must lie in [1, min_context]");
  if (cfg.task == Task::Classification) {
    if (cfg.min_premise < 2 || cfg.min_hypothesis < 2)
      throw ConfigError("classification segments need length >= 2 for the "
                        "shared-marker rule");
    if (cfg.max_premise + cfg.max_hypothesis - 4 >
        vocab::kContentCount - vocab::kMarkerCount)
      throw ConfigError("segments too long for disjoint filler sampling");
  }
  if (cfg.max_context > vocab::kContentCount)
    throw ConfigError("context cannot exceed the distinct content supply");
}

SplitSizes split_sizes(int n) {
  if (n < 1) throw ConfigError("split_sizes: need at least one example");
  const int b1 = static_cast<int>(static_cast<std::int64_t>(n) * 8 / 10);
  const int b2 = static_cast<int>(static_cast<std::int64_t>(n) * 9 / 10);
  return {b1, b2 - b1, n - b2};
}

namespace {

std::string split_of(std::int64_t id, const SplitSizes& sz) {
  if (id < sz.train) return "train";
  if (id < sz.train + sz.dev) return "dev";
  return "test";
}

std::vector<int> shuffled_indices(int count, Xoshiro256StarStar& rng) {
  std::vector<int> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  return idx;
}

void make_classification(Example* ex, const CorpusConfig& cfg,
                         Xoshiro256StarStar& rng) {
  const int label = static_cast<int>(ex->id % 3);
  const int shared = label;  // class = number of shared marker types (2 = "2+")
  const int plen =
      static_cast<int>(rng.range(cfg.min_premise, cfg.max_premise));
  const int hlen =
      static_cast<int>(rng.range(cfg.min_hypothesis, cfg.max_hypothesis));

  const auto markers = shuffled_indices(vocab::kMarkerCount, rng);
  auto fillers = shuffled_indices(vocab::kContentCount - vocab::kMarkerCount,
                                  rng);
  for (int& f : fillers) f += vocab::kMarkerCount;

  std::vector<int> premise(markers.begin(), markers.begin() + shared);
  std::vector<int> hypothesis(premise);
  std::size_t next_filler = 0;
  while (static_cast<int>(premise.size()) < plen)
    premise.push_back(fillers[next_filler++]);
  while (static_cast<int>(hypothesis.size()) < hlen)
    hypothesis.push_back(fillers[next_filler++]);
  rng.shuffle(premise);
  rng.shuffle(hypothesis);

  auto& toks = ex->source_tokens;
  toks.push_back(vocab::kBos);
  for (int c : premise) toks.push_back(vocab::kContentBase + c);
  toks.push_back(vocab::kSep);
  for (int c : hypothesis) toks.push_back(vocab::kContentBase + c);

  ex->label_source = label;
  ex->label_target = label;  // same pair, same relationship
}

void make_tagging(Example* ex, const CorpusConfig& cfg,
                  Xoshiro256StarStar& rng, int n_tags) {
  const int blen = static_cast<int>(rng.range(cfg.min_body, cfg.max_body));
  auto& toks = ex->source_tokens;
  toks.push_back(vocab::kBos);
  for (int i = 0; i < blen; ++i)
    toks.push_back(vocab::kContentBase +
                   static_cast<int>(rng.below(vocab::kContentCount)));
  ex->label_source = tag_rule(toks, n_tags);
}

void make_span(Example* ex, const CorpusConfig& cfg, Xoshiro256StarStar& rng,
               int* regenerated) {
  int clen = 0, alen = 0, start_rel = 0;
  for (;;) {
    clen = static_cast<int>(rng.range(cfg.min_context, cfg.max_context));
    alen = static_cast<int>(rng.range(1, cfg.max_answer_len));
    start_rel = static_cast<int>(rng.below(clen - alen + 1));
    const auto perm = pair_swap_permutation(clen);
    int lo = clen, hi = -1;
    for (int r = start_rel; r < start_rel + alen; ++r) {
      lo = std::min(lo, perm[r]);
      hi = std::max(hi, perm[r]);
    }
    if (hi - lo + 1 == alen) break;  // transfer keeps the span contiguous
    ++*regenerated;
  }
  auto context = shuffled_indices(vocab::kContentCount, rng);
  context.resize(clen);

  auto& toks = ex->source_tokens;
  toks.push_back(vocab::kBos);
  for (int c : context) toks.push_back(vocab::kContentBase + c);
  toks.push_back(vocab::kSep);
  // The question quotes the answer in the other language, so each stream's
  // question is phrased in its paired stream's vocabulary.
  for (int r = start_rel; r < start_rel + alen; ++r)
    toks.push_back(vocab::translate(vocab::kContentBase + context[r]));

  ex->label_source = SpanLabel{1 + start_rel, 1 + start_rel + alen - 1};
}

void apply_translator_noise(Example* ex, double rate, Xoshiro256StarStar& rng,
                            int* noised) {
  if (rate <= 0.0) return;
  for (int& t : ex->target_tokens) {
    if (!vocab::is_target_content(t)) continue;
    if (rng.uniform() < rate) {
      // Shift by a non-zero offset so a substitution always changes the
      // token and the counter equals the number of corrupted positions.
      const int shift = 1 + static_cast<int>(rng.below(vocab::kContentCount - 1));
      t = vocab::kContentBase + vocab::kTargetOffset +
          (vocab::content_index(t) + shift) % vocab::kContentCount;
      ++*noised;
    }
  }
}

}  // namespace

Dataset generate_dataset(const CorpusConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Dataset ds;
  ds.config = cfg;
  ds.seed = seed;
  const SplitSizes sz = split_sizes(cfg.n_examples);
  SeedSequence per_example(seed);
  ds.examples.reserve(cfg.n_examples);
  for (std::int64_t id = 0; id < cfg.n_examples; ++id) {
    auto rng = per_example.next_stream();
    Example ex;
    ex.id = id;
    ex.split = split_of(id, sz);
    ex.eval_language = (id % 2 == 0) ? "source" : "target";
    switch (cfg.task) {
      case Task::Classification:
        make_classification(&ex, cfg, rng);
        break;
      case Task::Tagging:
        make_tagging(&ex, cfg, rng, 5);
        break;
      case Task::Span:
        make_span(&ex, cfg, rng, &ds.regenerated_spans);
        break;
    }
    Translation tr = translate_sequence(ex.source_tokens);
    ex.target_tokens = std::move(tr.tokens);
    ex.alignment = std::move(tr.alignment);
    if (cfg.task == Task::Span) {
      const auto& src = std::get<SpanLabel>(ex.label_source);
      int lo = static_cast<int>(ex.alignment.size()), hi = -1;
      for (int p = src.start; p <= src.end; ++p) {
        lo = std::min(lo, ex.alignment[p]);
        hi = std::max(hi, ex.alignment[p]);
      }
      ex.label_target = SpanLabel{lo, hi};
    } else if (cfg.task == Task::Tagging && ex.split != "train") {
      // Gold target tags for scoring only; training never sees them.
      ex.label_target = tag_rule(ex.target_tokens, 5);
    }
    if (ex.split == "train")
      apply_translator_noise(&ex, cfg.noise_rate, rng, &ds.noised_tokens);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

// --- Serialization ----------------------------------------------------------

namespace {

json label_to_json(const Label& label) {
  if (const int* c = std::get_if<int>(&label)) return *c;
  if (const auto* tags = std::get_if<std::vector<int>>(&label)) return *tags;
  const auto& span = std::get<SpanLabel>(label);
  return json{{"start", span.start}, {"end", span.end}};
}

Label label_from_json(const json& j, Task task) {
  switch (task) {
    case Task::Classification:
      if (!j.is_number_integer())
        throw DataError("classification label must be an integer");
      return j.get<int>();
    case Task::Tagging:
      if (!j.is_array()) throw DataError("tagging label must be an array");
      return j.get<std::vector<int>>();
    case Task::Span:
      if (!j.is_object() || !j.contains("start") || !j.contains("end"))
        throw DataError("span label must carry start and end");
      return SpanLabel{j.at("start").get<int>(), j.at("end").get<int>()};
  }
  throw DataError("unknown task for label decoding");
}

json example_to_json(const Example& ex) {
  json j;
  j["id"] = ex.id;
  j["split"] = ex.split;
  j["source_tokens"] = ex.source_tokens;
  j["target_tokens"] = ex.target_tokens;
  j["alignment"] = ex.alignment;
  j["label_source"] = label_to_json(ex.label_source);
  j["label_target"] =
      ex.label_target ? label_to_json(*ex.label_target) : json(nullptr);
  j["eval_language"] = ex.eval_language;
  return j;
}

json config_to_json(const CorpusConfig& cfg) {
  return json{{"task", to_string(cfg.task)},
              {"n_examples", cfg.n_examples},
              {"noise_rate", cfg.noise_rate},
              {"min_premise", cfg.min_premise},
              {"max_premise", cfg.max_premise},
              {"min_hypothesis", cfg.min_hypothesis},
              {"max_hypothesis", cfg.max_hypothesis},
              {"min_body", cfg.min_body},
              {"max_body", cfg.max_body},
              {"min_context", cfg.min_context},
              {"max_context", cfg.max_context},
              {"max_answer_len", cfg.max_answer_len}};
}

CorpusConfig config_from_json(const json& j) {
  CorpusConfig cfg;
  cfg.task = task_from_string(j.at("task").get<std::string>());
  cfg.n_examples = j.at("n_examples").get<int>();
  cfg.noise_rate = j.at("noise_rate").get<double>();
  cfg.min_premise = j.at("min_premise").get<int>();
  cfg.max_premise = j.at("max_premise").get<int>();
  cfg.min_hypothesis = j.at("min_hypothesis").get<int>();
  cfg.max_hypothesis = j.at("max_hypothesis").get<int>();
  cfg.min_body = j.at("min_body").get<int>();
  cfg.max_body = j.at("max_body").get<int>();
  cfg.min_context = j.at("min_context").get<int>();
  cfg.max_context = j.at("max_context").get<int>();
  cfg.max_answer_len = j.at("max_answer_len").get<int>();
  return cfg;
}

void validate_example(const Example& ex, Task task) {
  const auto fail = [&](const std::string& what) {
    throw DataError("example " + std::to_string(ex.id) + ": " + what);
  };
  const std::size_t n = ex.source_tokens.size();
  if (n == 0) fail("empty sequence");
  if (ex.target_tokens.size() != n || ex.alignment.size() != n)
    fail("stream/alignment length mismatch");
  if (task == Task::Span) {
    // Span streams mix languages by construction (the question quotes the
    // answer in the other language), so only vocabulary membership holds.
    for (int t : ex.source_tokens)
      if (!is_special(t) && !vocab::is_content(t))
        fail("source token " + std::to_string(t) + " out of vocabulary");
    for (int t : ex.target_tokens)
      if (!is_special(t) && !vocab::is_content(t))
        fail("target token " + std::to_string(t) + " out of vocabulary");
  } else {
    for (int t : ex.source_tokens)
      if (!is_special(t) && !vocab::is_source_content(t))
        fail("source token " + std::to_string(t) + " out of vocabulary");
    for (int t : ex.target_tokens)
      if (!is_special(t) && !vocab::is_target_content(t))
        fail("target token " + std::to_string(t) + " out of vocabulary");
  }
  std::vector<std::uint8_t> seen(n, 0);
  for (int a : ex.alignment) {
    if (a < 0 || a >= static_cast<int>(n) || seen[a])
      fail("alignment is not a permutation");
    seen[a] = 1;
  }
  if (ex.split != "train" && ex.split != "dev" && ex.split != "test")
    fail("unknown split '" + ex.split + "'");
  if (ex.eval_language != "source" && ex.eval_language != "target")
    fail("unknown eval_language '" + ex.eval_language + "'");
  const Translation tr = translate_sequence(ex.source_tokens);
  if (ex.alignment != tr.alignment)
    fail("alignment does not match the translation");
  for (std::size_t i = 0; i < n; ++i) {
    if (ex.target_tokens[i] == tr.tokens[i]) continue;
    // Train targets may diverge where translator noise substituted a
    // content token; everything else must be the exact translation.
    const bool noise_slot = ex.split == "train" &&
                            vocab::is_target_content(tr.tokens[i]) &&
                            vocab::is_target_content(ex.target_tokens[i]);
    if (!noise_slot) fail("target stream is not the translation of the source");
  }
  auto check_label = [&](const Label& label, const char* side) {
    if (task == Task::Classification) {
      const int* c = std::get_if<int>(&label);
      if (!c || *c < 0) fail(std::string(side) + " label out of range");
    } else if (task == Task::Tagging) {
      const auto* tags = std::get_if<std::vector<int>>(&label);
      if (!tags || tags->size() != n)
        fail(std::string(side) + " tag sequence length mismatch");
      for (int t : *tags)
        if (t < 0) fail(std::string(side) + " tag out of range");
    } else {
      const auto* span = std::get_if<SpanLabel>(&label);
      if (!span || span->start < 0 || span->end < span->start ||
          span->end >= static_cast<int>(n))
        fail(std::string(side) + " span out of range");
    }
  };
  check_label(ex.label_source, "source");
  if (ex.label_target) check_label(*ex.label_target, "target");
  if (task == Task::Tagging && ex.split == "train" && ex.label_target)
    fail("train tagging record must not carry a target label");
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  const char* names[] = {"train", "dev", "test"};
  for (const char* name : names) {
    std::ofstream out(fs::path(dir) / (std::string(name) + ".jsonl"),
                      std::ios::binary);
    if (!out) throw DataError("cannot write dataset file in " + dir);
    for (const Example& ex : ds.examples)
      if (ex.split == name) out << example_to_json(ex).dump() << '\n';
  }
  json meta;
  meta["generator"] = config_to_json(ds.config);
  meta["seed"] = ds.seed;
  const SplitSizes sz = split_sizes(ds.config.n_examples);
  meta["counts"] = json{{"train", sz.train}, {"dev", sz.dev},
                        {"test", sz.test}};
  meta["vocab_size"] = vocab::kVocabSize;
  meta["regenerated_spans"] = ds.regenerated_spans;
  meta["noised_tokens"] = ds.noised_tokens;
  std::ofstream out(fs::path(dir) / "meta.json", std::ios::binary);
  if (!out) throw DataError("cannot write meta.json in " + dir);
  out << meta.dump(2) << '\n';
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream meta_in(fs::path(dir) / "meta.json", std::ios::binary);
  if (!meta_in) throw DataError("missing meta.json in " + dir);
  json meta;
  try {
    meta = json::parse(meta_in);
  } catch (const json::exception& e) {
    throw DataError("bad meta.json in " + dir + ": " + e.what());
  }
  Dataset ds;
  try {
    ds.config = config_from_json(meta.at("generator"));
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.regenerated_spans = meta.value("regenerated_spans", 0);
    ds.noised_tokens = meta.value("noised_tokens", 0);
  } catch (const json::exception& e) {
    throw DataError("bad meta.json in " + dir + ": " + e.what());
  }
  const char* names[] = {"train", "dev", "test"};
  for (const char* name : names) {
    const fs::path path = fs::path(dir) / (std::string(name) + ".jsonl");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("missing dataset file " + path.string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw DataError("bad record in " + path.string() + ": " + e.what());
      }
      Example ex;
      try {
        ex.id = j.at("id").get<std::int64_t>();
        ex.split = j.at("split").get<std::string>();
        ex.source_tokens = j.at("source_tokens").get<std::vector<int>>();
        ex.target_tokens = j.at("target_tokens").get<std::vector<int>>();
        ex.alignment = j.at("alignment").get<std::vector<int>>();
        ex.label_source = label_from_json(j.at("label_source"), ds.config.task);
        const json& lt = j.at("label_target");
        if (!lt.is_null())
          ex.label_target = label_from_json(lt, ds.config.task);
        ex.eval_language = j.at("eval_language").get<std::string>();
      } catch (const json::exception& e) {
        throw DataError("bad record in " + path.string() + ": " + e.what());
      }
      if (ex.split != name)
        throw DataError("record " + std::to_string(ex.id) + " in " +
                        path.string() + " carries split '" + ex.split + "'");
      validate_example(ex, ds.config.task);
      ds.examples.push_back(std::move(ex));
    }
  }
  std::sort(ds.examples.begin(), ds.examples.end(),
            [](const Example& a, const Example& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < ds.examples.size(); ++i)
    if (ds.examples[i].id == ds.examples[i - 1].id)
      throw DataError("duplicate example id " +
                      std::to_string(ds.examples[i].id));
  if (ds.examples.empty()) throw DataError("dataset in " + dir + " is empty");
  return ds;
}

}  // namespace filter
