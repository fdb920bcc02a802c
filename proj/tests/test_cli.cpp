#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "support/temp_dir.hpp"

#include <json.hpp>

namespace {

std::string cli_binary() {
  const char* path = std::getenv("FILTER_CLI");
  REQUIRE_MESSAGE(path != nullptr, "FILTER_CLI must point at the binary");
  return path;
}

struct RunOutput {
  int code = -1;
  std::string text;  // stdout + stderr
};

RunOutput run_cli(const std::string& args) {
  static const testutil::TempDir capture;
  static int serial = 0;
  const std::string log = capture.str("out_" + std::to_string(serial++));
  const std::string cmd = cli_binary() + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunOutput out;
  out.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  out.text.assign(std::istreambuf_iterator<char>(in), {});
  return out;
}

std::string write_json(const testutil::TempDir& dir, const std::string& name,
                       const nlohmann::json& j) {
  const std::string path = dir.str(name);
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  return path;
}

nlohmann::json tiny_config(const testutil::TempDir& dir) {
  return {
      {"task", "classification"},
      {"seed", 7},
      {"mode", "filter"},
      {"corpus", {{"n_examples", 24}, {"max_premise", 8}, {"max_hypothesis", 8}}},
      {"model",
       {{"d_model", 8},
        {"n_heads", 2},
        {"d_ff", 16},
        {"max_positions", 24},
        {"n_layers", 2},
        {"m_local", 1},
        {"k_fuse", 1}}},
      {"train", {{"epochs", 2}, {"batch_size", 8}}},
      {"paths",
       {{"data_dir", dir.str("data")},
        {"checkpoint_dir", dir.str("ckpt")},
        {"report_path", dir.str("report.json")}}},
  };
}

}  // namespace

TEST_CASE("usage errors exit with the config code") {
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("--help").text.find("generate") != std::string::npos);
  CHECK(run_cli("").code == 2);
  CHECK(run_cli("generate --bogus").code == 2);
  CHECK(run_cli("frobnicate").code == 2);
  CHECK(run_cli("inspect").code == 2);
}

TEST_CASE("config violations are rejected before any work") {
  testutil::TempDir dir;

  SUBCASE("unknown key") {
    auto cfg = tiny_config(dir);
    cfg["corpus"]["bogus"] = 1;
    auto out = run_cli("generate --config " + write_json(dir, "c.json", cfg));
    CHECK(out.code == 2);
    CHECK(out.text.find("bogus") != std::string::npos);
  }
  SUBCASE("malformed JSON") {
    const std::string path = dir.str("broken.json");
    std::ofstream(path) << "{ not json";
    CHECK(run_cli("generate --config " + path).code == 2);
  }
  SUBCASE("missing config file") {
    CHECK(run_cli("generate --config " + dir.str("absent.json")).code == 2);
  }
  SUBCASE("baseline modes pin the stage split") {
    auto cfg = tiny_config(dir);
    cfg["mode"] = "concat-baseline";
    auto out = run_cli("train --config " + write_json(dir, "c.json", cfg));
    CHECK(out.code == 2);
  }
}

TEST_CASE("missing inputs exit with the data code") {
  testutil::TempDir dir;
  auto cfg = tiny_config(dir);
  const std::string path = write_json(dir, "c.json", cfg);
  CHECK(run_cli("train --config " + path).code == 3);
  CHECK(run_cli("eval --config " + path).code == 3);
  CHECK(run_cli("inspect " + dir.str("no.ckpt")).code == 3);
}

TEST_CASE("generate, train, eval and inspect chain together") {
  testutil::TempDir dir;
  const std::string path = write_json(dir, "c.json", tiny_config(dir));

  auto gen = run_cli("generate --config " + path);
  CHECK(gen.code == 0);
  CHECK(gen.text.find("19 train, 2 dev, 3 test") != std::string::npos);
  for (const char* name : {"train.jsonl", "dev.jsonl", "test.jsonl", "meta.json"})
    CHECK(std::filesystem::exists(dir.str("data") + "/" + std::string(name)));

  auto train = run_cli("train --config " + path);
  CHECK(train.code == 0);
  CHECK(train.text.find("epoch   1") != std::string::npos);
  CHECK(std::filesystem::exists(dir.str("ckpt") + "/teacher.ckpt"));
  CHECK(std::filesystem::exists(dir.str("ckpt") + "/teacher_log.csv"));
  CHECK_FALSE(std::filesystem::exists(dir.str("ckpt") + "/student.ckpt"));

  auto eval = run_cli("eval --config " + path);
  CHECK(eval.code == 0);
  CHECK(eval.text.find("accuracy") != std::string::npos);
  {
    std::ifstream in(dir.str("report.json"));
    nlohmann::json report = nlohmann::json::parse(in);
    CHECK(report.at("split") == "dev");
    CHECK(report.at("per_language").size() == 2);
  }

  auto inspect = run_cli("inspect " + dir.str("ckpt") + "/teacher.ckpt");
  CHECK(inspect.code == 0);
  CHECK(inspect.text.find("phase: teacher") != std::string::npos);
  CHECK(inspect.text.find("task: classification") != std::string::npos);

  SUBCASE("flag overrides beat the config file") {
    auto other = run_cli("eval --config " + path +
                         " --split test --language source --out " +
                         dir.str("test_report.json"));
    CHECK(other.code == 0);
    std::ifstream in(dir.str("test_report.json"));
    nlohmann::json report = nlohmann::json::parse(in);
    CHECK(report.at("split") == "test");
    CHECK(report.at("per_language").size() == 1);
    CHECK(report.at("transfer_gap").is_null());
  }
}

TEST_CASE("grid trains feasible cells and marks the rest skipped") {
  testutil::TempDir dir;
  auto cfg = tiny_config(dir);
  cfg["model"].erase("m_local");
  cfg["model"].erase("k_fuse");
  cfg["train"]["epochs"] = 1;
  const std::string path = write_json(dir, "c.json", cfg);

  REQUIRE(run_cli("generate --config " + path).code == 0);
  auto grid = run_cli("grid --config " + path + " --out " + dir.str("g.json"));
  CHECK(grid.code == 0);
  CHECK(grid.text.find("skipped") != std::string::npos);

  std::ifstream in(dir.str("g.json"));
  nlohmann::json report = nlohmann::json::parse(in);
  CHECK(report.at("task") == "classification");
  CHECK(report.at("primary_metric") == "accuracy");
  REQUIRE(report.at("cells").size() == 16);
  int trained = 0;
  for (const auto& cell : report.at("cells")) {
    const int m = cell.at("m_local").get<int>();
    const int k = cell.at("k_fuse").get<int>();
    if (m + k > 2) {
      CHECK(cell.at("skipped") == true);
    } else {
      ++trained;
      CHECK(cell.at("dev").at("accuracy").is_number());
    }
  }
  CHECK(trained == 3);
}

TEST_CASE("self-teaching emits student artifacts and softlabels round-trips") {
  testutil::TempDir dir;
  auto cfg = tiny_config(dir);
  cfg["mode"] = "filter+self-teaching";
  cfg["train"]["epochs"] = 1;
  const std::string path = write_json(dir, "c.json", cfg);

  REQUIRE(run_cli("generate --config " + path).code == 0);
  auto train = run_cli("train --config " + path);
  REQUIRE(train.code == 0);
  for (const char* name :
       {"teacher.ckpt", "soft_labels.jsonl", "student.ckpt", "student_log.csv"})
    CHECK(std::filesystem::exists(dir.str("ckpt") + "/" + std::string(name)));

  auto regen = run_cli("softlabels --config " + path + " --out " +
                       dir.str("regen.jsonl"));
  CHECK(regen.code == 0);
  std::ifstream f1(dir.str("ckpt") + "/soft_labels.jsonl", std::ios::binary);
  std::ifstream f2(dir.str("regen.jsonl"), std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  REQUIRE_FALSE(s1.empty());
  CHECK(s1 == s2);

  SUBCASE("eval picks the student checkpoint") {
    auto eval = run_cli("eval --config " + path);
    CHECK(eval.code == 0);
    auto inspect = run_cli("inspect " + dir.str("ckpt") + "/student.ckpt");
    CHECK(inspect.text.find("phase: student") != std::string::npos);
  }
}
