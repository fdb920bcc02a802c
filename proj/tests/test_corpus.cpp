#include <algorithm>
#include <fstream>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "doctest.h"
#include "filter/corpus.hpp"
#include "filter/errors.hpp"
#include "filter/rng.hpp"
#include "support/temp_dir.hpp"

using namespace filter;

namespace {

CorpusConfig small(Task task, int n = 200) {
  CorpusConfig cfg;
  cfg.task = task;
  cfg.n_examples = n;
  return cfg;
}

std::vector<int> random_source_sentence(Xoshiro256StarStar& rng, int len,
                                        bool with_sep) {
  std::vector<int> toks{vocab::kBos};
  for (int i = 0; i < len; ++i) {
    if (with_sep && i == len / 2) toks.push_back(vocab::kSep);
    toks.push_back(vocab::kContentBase +
                   static_cast<int>(rng.below(vocab::kContentCount)));
  }
  return toks;
}

}  // namespace

TEST_CASE("split sizes are contiguous 80/10/10") {
  auto sz = split_sizes(3000);
  CHECK(sz.train == 2400);
  CHECK(sz.dev == 300);
  CHECK(sz.test == 300);
  auto odd = split_sizes(7);
  CHECK(odd.train == 5);
  CHECK(odd.dev == 1);
  CHECK(odd.test == 1);
  CHECK(odd.train + odd.dev + odd.test == 7);
  CHECK_THROWS_AS(split_sizes(0), ConfigError);
}

TEST_CASE("pair swap permutation") {
  CHECK(pair_swap_permutation(4) == std::vector<int>{1, 0, 3, 2});
  CHECK(pair_swap_permutation(5) == std::vector<int>{1, 0, 3, 2, 4});
  CHECK(pair_swap_permutation(1) == std::vector<int>{0});
  CHECK(pair_swap_permutation(0).empty());

  SUBCASE("applying twice is the identity") {
    auto perm = pair_swap_permutation(9);
    for (int i = 0; i < 9; ++i) CHECK(perm[perm[i]] == i);
  }
}

TEST_CASE("translation is a content-run pair swap in the other vocabulary") {
  // BOS a b c SEP d e
  std::vector<int> s{vocab::kBos, 10, 11, 12, vocab::kSep, 20, 21};
  auto tr = translate_sequence(s);
  REQUIRE(tr.tokens.size() == s.size());
  // runs [1,4) and [5,7) swap independently; 12 has no pair and stays
  const int off = vocab::kTargetOffset;
  CHECK(tr.tokens == std::vector<int>{vocab::kBos, 11 + off, 10 + off,
                                      12 + off, vocab::kSep, 21 + off,
                                      20 + off});
  CHECK(tr.alignment == std::vector<int>{0, 2, 1, 3, 4, 6, 5});

  SUBCASE("alignment relates the streams token by token") {
    for (std::size_t i = 0; i < s.size(); ++i)
      CHECK(tr.tokens[tr.alignment[i]] == vocab::translate(s[i]));
  }
  SUBCASE("translating twice is the identity") {
    CHECK(translate_sequence(tr.tokens).tokens == s);
  }
  SUBCASE("out-of-vocabulary tokens are rejected") {
    CHECK_THROWS_AS(translate_sequence({vocab::kBos, vocab::kVocabSize}),
                    DataError);
    CHECK_THROWS_AS(translate_sequence({-1}), DataError);
  }
  SUBCASE("mixed-language input flips every content token") {
    std::vector<int> mixed{vocab::kBos, 10, vocab::kSep, 20 + off, 21 + off};
    auto m = translate_sequence(mixed);
    CHECK(m.tokens == std::vector<int>{vocab::kBos, 10 + off, vocab::kSep,
                                       21, 20});
    CHECK(invert_translation(m.tokens) == mixed);
  }
}

TEST_CASE("translation round-trips on random sentences") {
  Xoshiro256StarStar rng(404);
  for (int trial = 0; trial < 1000; ++trial) {
    auto s = random_source_sentence(
        rng, 1 + static_cast<int>(rng.below(14)), trial % 2 == 0);
    auto tr = translate_sequence(s);
    CHECK(invert_translation(tr.tokens) == s);

    std::vector<std::uint8_t> seen(s.size(), 0);
    for (int a : tr.alignment) {
      REQUIRE(a >= 0);
      REQUIRE(a < static_cast<int>(s.size()));
      seen[a] = 1;
    }
    CHECK(std::count(seen.begin(), seen.end(), 1) ==
          static_cast<long>(s.size()));
  }
}

TEST_CASE("tag rule pushes through the alignment") {
  Xoshiro256StarStar rng(777);
  for (int trial = 0; trial < 500; ++trial) {
    auto s = random_source_sentence(
        rng, 2 + static_cast<int>(rng.below(12)), trial % 3 == 0);
    auto tr = translate_sequence(s);
    auto src_tags = tag_rule(s, 5);
    auto tgt_tags = tag_rule(tr.tokens, 5);
    for (std::size_t i = 0; i < s.size(); ++i)
      CHECK(tgt_tags[tr.alignment[i]] == src_tags[i]);
  }
}

TEST_CASE("tag rule basics") {
  // BOS, marker, filler: the marker opens entity A over its pair
  std::vector<int> s{vocab::kBos, vocab::kContentBase + 2,
                     vocab::kContentBase + 30};
  CHECK(tag_rule(s, 5) == std::vector<int>{0, 1, 2});

  // two fillers stay O; specials stay O
  std::vector<int> o{vocab::kBos, vocab::kContentBase + 30,
                     vocab::kContentBase + 40, vocab::kSep};
  CHECK(tag_rule(o, 5) == std::vector<int>{0, 0, 0, 0});

  // double marker pair becomes entity B, ordered by content index
  std::vector<int> b{vocab::kBos, vocab::kContentBase + 3,
                     vocab::kContentBase + 1};
  CHECK(tag_rule(b, 5) == std::vector<int>{0, 4, 3});

  CHECK_THROWS_AS(tag_rule(s, 1), ShapeError);
}

TEST_CASE("all five tags occur") {
  auto ds = generate_dataset(small(Task::Tagging, 400), 9);
  std::set<int> seen;
  for (const auto& ex : ds.examples)
    for (int t : std::get<std::vector<int>>(ex.label_source)) seen.insert(t);
  CHECK(seen == std::set<int>{0, 1, 2, 3, 4});
}

TEST_CASE("span candidates cover the context only") {
  std::vector<int> s{vocab::kBos, 10, 11, 12, vocab::kSep, 11};
  auto flags = span_candidates(s);
  CHECK(flags == std::vector<std::uint8_t>{0, 1, 1, 1, 0, 0});
  CHECK_THROWS_AS(span_candidates({vocab::kBos, 10}), DataError);
}

TEST_CASE("classification labels equal the shared marker count") {
  auto ds = generate_dataset(small(Task::Classification, 300), 42);
  int counts[3] = {0, 0, 0};
  for (const auto& ex : ds.examples) {
    const int label = std::get<int>(ex.label_source);
    REQUIRE(label >= 0);
    REQUIRE(label <= 2);
    ++counts[label];
    CHECK(std::get<int>(*ex.label_target) == label);

    // recount from the tokens: marker types present on both sides of SEP
    std::set<int> premise, hypothesis;
    bool after_sep = false;
    for (int t : ex.source_tokens) {
      if (t == vocab::kSep) {
        after_sep = true;
        continue;
      }
      if (!vocab::is_source_content(t)) continue;
      const int c = vocab::content_index(t);
      if (c < vocab::kMarkerCount) (after_sep ? hypothesis : premise).insert(c);
    }
    std::vector<int> shared;
    std::set_intersection(premise.begin(), premise.end(), hypothesis.begin(),
                          hypothesis.end(), std::back_inserter(shared));
    CHECK(static_cast<int>(shared.size()) == label);
  }
  CHECK(counts[0] == 100);
  CHECK(counts[1] == 100);
  CHECK(counts[2] == 100);
}

TEST_CASE("span answers quote the context and transfer contiguously") {
  auto ds = generate_dataset(small(Task::Span, 300), 11);
  for (const auto& ex : ds.examples) {
    const auto& src = std::get<SpanLabel>(ex.label_source);
    REQUIRE(src.start >= 1);
    REQUIRE(src.end >= src.start);
    const int alen = src.end - src.start + 1;
    CHECK(alen <= ds.config.max_answer_len);

    // question segment quotes the answer tokens in the other language
    const auto sep = std::find(ex.source_tokens.begin(),
                               ex.source_tokens.end(), vocab::kSep);
    REQUIRE(sep != ex.source_tokens.end());
    const int qlen = static_cast<int>(ex.source_tokens.end() - sep) - 1;
    CHECK(qlen == alen);
    for (int i = 0; i < alen; ++i)
      CHECK(*(sep + 1 + i) ==
            vocab::translate(ex.source_tokens[src.start + i]));

    // the transferred span is the aligned image and stays contiguous
    const auto& tgt = std::get<SpanLabel>(*ex.label_target);
    std::vector<int> image;
    for (int p = src.start; p <= src.end; ++p)
      image.push_back(ex.alignment[p]);
    std::sort(image.begin(), image.end());
    CHECK(image.front() == tgt.start);
    CHECK(image.back() == tgt.end);
    CHECK(static_cast<int>(image.size()) == tgt.end - tgt.start + 1);

    // answer text matches across languages
    for (int p = src.start; p <= src.end; ++p)
      CHECK(ex.target_tokens[ex.alignment[p]] ==
            vocab::translate(ex.source_tokens[p]));
  }
}

TEST_CASE("tagging withholds target labels from train only") {
  auto ds = generate_dataset(small(Task::Tagging, 200), 5);
  for (const auto& ex : ds.examples) {
    if (ex.split == "train") {
      CHECK_FALSE(ex.label_target.has_value());
    } else {
      REQUIRE(ex.label_target.has_value());
      CHECK(std::get<std::vector<int>>(*ex.label_target) ==
            tag_rule(ex.target_tokens, 5));
    }
  }
}

TEST_CASE("noise corrupts train targets only and is counted") {
  auto cfg = small(Task::Tagging, 300);
  cfg.noise_rate = 0.3;
  auto ds = generate_dataset(cfg, 21);
  CHECK(ds.noised_tokens > 0);

  int train_mismatch = 0;
  for (const auto& ex : ds.examples) {
    int mismatch = 0;
    for (std::size_t i = 0; i < ex.source_tokens.size(); ++i)
      if (ex.target_tokens[ex.alignment[i]] !=
          vocab::translate(ex.source_tokens[i]))
        ++mismatch;
    if (ex.split == "train")
      train_mismatch += mismatch;
    else
      CHECK(mismatch == 0);
  }
  CHECK(train_mismatch == ds.noised_tokens);

  SUBCASE("clean runs report zero") {
    auto clean = generate_dataset(small(Task::Tagging, 50), 21);
    CHECK(clean.noised_tokens == 0);
  }
}

TEST_CASE("eval language alternates by id") {
  auto ds = generate_dataset(small(Task::Classification, 40), 2);
  for (const auto& ex : ds.examples)
    CHECK(ex.eval_language == (ex.id % 2 == 0 ? "source" : "target"));
}

TEST_CASE("generation is seed-deterministic") {
  auto a = generate_dataset(small(Task::Span, 60), 33);
  auto b = generate_dataset(small(Task::Span, 60), 33);
  auto c = generate_dataset(small(Task::Span, 60), 34);
  REQUIRE(a.examples.size() == b.examples.size());
  bool all_same = true, any_diff = false;
  for (std::size_t i = 0; i < a.examples.size(); ++i) {
    all_same = all_same && a.examples[i].source_tokens ==
                               b.examples[i].source_tokens;
    any_diff = any_diff || a.examples[i].source_tokens !=
                               c.examples[i].source_tokens;
  }
  CHECK(all_same);
  CHECK(any_diff);
}

TEST_CASE("write and load round-trip") {
  testutil::TempDir dir;
  auto ds = generate_dataset(small(Task::Tagging, 60), 8);
  write_dataset(ds, dir.str());
  auto back = load_dataset(dir.str());
  CHECK(back.seed == ds.seed);
  CHECK(back.config.task == ds.config.task);
  CHECK(back.config.n_examples == ds.config.n_examples);
  REQUIRE(back.examples.size() == ds.examples.size());
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    const auto& x = ds.examples[i];
    const auto& y = back.examples[i];
    CHECK(x.id == y.id);
    CHECK(x.split == y.split);
    CHECK(x.source_tokens == y.source_tokens);
    CHECK(x.target_tokens == y.target_tokens);
    CHECK(x.alignment == y.alignment);
    CHECK(x.eval_language == y.eval_language);
    CHECK(x.label_target.has_value() == y.label_target.has_value());
    CHECK(std::get<std::vector<int>>(x.label_source) ==
          std::get<std::vector<int>>(y.label_source));
  }

  SUBCASE("written bytes are stable") {
    testutil::TempDir dir2;
    write_dataset(ds, dir2.str());
    for (const char* name : {"train.jsonl", "dev.jsonl", "test.jsonl",
                             "meta.json"}) {
      std::ifstream f1(dir.str(name), std::ios::binary);
      std::ifstream f2(dir2.str(name), std::ios::binary);
      std::string s1((std::istreambuf_iterator<char>(f1)), {});
      std::string s2((std::istreambuf_iterator<char>(f2)), {});
      CHECK(s1 == s2);
      CHECK(!s1.empty());
    }
  }
}

TEST_CASE("loader rejects broken datasets") {
  testutil::TempDir dir;
  auto ds = generate_dataset(small(Task::Classification, 40), 3);
  write_dataset(ds, dir.str());

  SUBCASE("missing directory") {
    CHECK_THROWS_AS(load_dataset(dir.str("nowhere")), DataError);
  }
  SUBCASE("corrupt json line") {
    std::ofstream out(dir.str("dev.jsonl"), std::ios::app);
    out << "{not json\n";
    out.close();
    CHECK_THROWS_AS(load_dataset(dir.str()), DataError);
  }
  SUBCASE("duplicate ids") {
    std::ifstream in(dir.str("dev.jsonl"));
    std::string first;
    std::getline(in, first);
    in.close();
    std::ofstream out(dir.str("dev.jsonl"), std::ios::app);
    out << first << "\n";
    out.close();
    CHECK_THROWS_AS(load_dataset(dir.str()), DataError);
  }
  SUBCASE("tampered alignment") {
    std::ifstream in(dir.str("test.jsonl"));
    std::string all((std::istreambuf_iterator<char>(in)), {});
    in.close();
    auto pos = all.find("\"alignment\":[0");
    REQUIRE(pos != std::string::npos);
    all.replace(pos, 14, "\"alignment\":[9");
    std::ofstream out(dir.str("test.jsonl"), std::ios::trunc);
    out << all;
    out.close();
    CHECK_THROWS_AS(load_dataset(dir.str()), DataError);
  }
  SUBCASE("tampered target stream") {
    std::ifstream in(dir.str("dev.jsonl"));
    std::string all((std::istreambuf_iterator<char>(in)), {});
    in.close();
    auto pos = all.find("\"target_tokens\":[1,");
    REQUIRE(pos != std::string::npos);
    all.replace(pos, 19, "\"target_tokens\":[2,");
    std::ofstream out(dir.str("dev.jsonl"), std::ios::trunc);
    out << all;
    out.close();
    CHECK_THROWS_AS(load_dataset(dir.str()), DataError);
  }
}

TEST_CASE("config validation") {
  auto cfg = small(Task::Classification);
  cfg.noise_rate = 1.0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = small(Task::Span);
  cfg.max_answer_len = cfg.min_context + 1;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = small(Task::Tagging);
  cfg.min_body = 0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = small(Task::Classification);
  cfg.max_premise = 40;
  cfg.max_hypothesis = 40;  // 76 fillers needed, 56 available
  CHECK_THROWS_AS(validate(cfg), ConfigError);
}
