#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "filter/checkpoint.hpp"
#include "filter/errors.hpp"
#include "filter/model.hpp"
#include "support/temp_dir.hpp"

using namespace filter;

namespace {

FilterConfig tiny(Task task = Task::Classification) {
  FilterConfig cfg;
  cfg.encoder.vocab_size = 14;
  cfg.encoder.d_model = 8;
  cfg.encoder.n_heads = 2;
  cfg.encoder.d_ff = 16;
  cfg.encoder.max_positions = 12;
  cfg.encoder.n_layers = 2;
  cfg.task = task;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

}  // namespace

TEST_CASE("save and load restore every parameter bit") {
  testutil::TempDir dir;
  FilterModel model(tiny(Task::Tagging), 31);
  save_checkpoint(dir.str("m.ckpt"), model, 31, "teacher");

  auto loaded = load_checkpoint(dir.str("m.ckpt"));
  CHECK(loaded.meta.phase == "teacher");
  CHECK(loaded.meta.seed == 31);
  CHECK(loaded.meta.config == model.config());

  auto a = model.named_parameters();
  auto b = loaded.model->named_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    auto av = a[i].second.values();
    auto bv = b[i].second.values();
    REQUIRE(av.size() == bv.size());
    for (std::size_t j = 0; j < av.size(); ++j) CHECK(av[j] == bv[j]);
  }
}

TEST_CASE("writes are byte-deterministic") {
  testutil::TempDir dir;
  FilterModel model(tiny(), 77);
  save_checkpoint(dir.str("a.ckpt"), model, 77, "teacher");
  save_checkpoint(dir.str("b.ckpt"), model, 77, "teacher");
  auto a = slurp(dir.str("a.ckpt"));
  CHECK(!a.empty());
  CHECK(a == slurp(dir.str("b.ckpt")));
  CHECK(a.substr(0, 8) == "FLTCKPT1");
}

TEST_CASE("meta can be read without the payload") {
  testutil::TempDir dir;
  FilterModel model(tiny(Task::Span), 5);
  save_checkpoint(dir.str("m.ckpt"), model, 5, "student");
  auto meta = read_checkpoint_meta(dir.str("m.ckpt"));
  CHECK(meta.phase == "student");
  CHECK(meta.config.task == Task::Span);
  CHECK(meta.parameter_count == model.named_parameters().size());

  std::uint64_t values = 0;
  for (auto& [name, t] : model.named_parameters()) values += t.size();
  CHECK(meta.value_count == values);
}

TEST_CASE("corrupt files are rejected") {
  testutil::TempDir dir;
  FilterModel model(tiny(), 13);
  save_checkpoint(dir.str("m.ckpt"), model, 13, "teacher");
  auto bytes = slurp(dir.str("m.ckpt"));

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(dir.str("gone.ckpt")), DataError);
  }
  SUBCASE("bad magic") {
    auto bad = bytes;
    bad[0] = 'X';
    std::ofstream(dir.str("bad.ckpt"), std::ios::binary) << bad;
    CHECK_THROWS_AS(load_checkpoint(dir.str("bad.ckpt")), DataError);
  }
  SUBCASE("truncated payload") {
    std::ofstream(dir.str("cut.ckpt"), std::ios::binary)
        << bytes.substr(0, bytes.size() - 9);
    CHECK_THROWS_AS(load_checkpoint(dir.str("cut.ckpt")), DataError);
  }
  SUBCASE("truncated header") {
    std::ofstream(dir.str("hdr.ckpt"), std::ios::binary) << bytes.substr(0, 10);
    CHECK_THROWS_AS(load_checkpoint(dir.str("hdr.ckpt")), DataError);
    CHECK_THROWS_AS(read_checkpoint_meta(dir.str("hdr.ckpt")), DataError);
  }
}

TEST_CASE("loaded model forward matches the saved one") {
  testutil::TempDir dir;
  FilterModel model(tiny(), 91);
  save_checkpoint(dir.str("m.ckpt"), model, 91, "teacher");
  auto loaded = load_checkpoint(dir.str("m.ckpt"));

  StreamInput s, t;
  s.tokens = {1, 3, 4};
  t.tokens = {1, 5, 6};
  auto fa = model.forward_pair(s, t);
  auto fb = loaded.model->forward_pair(s, t);
  auto av = fa.source.class_logits.values();
  auto bv = fb.source.class_logits.values();
  REQUIRE(av.size() == bv.size());
  for (std::size_t i = 0; i < av.size(); ++i) CHECK(av[i] == bv[i]);
}
