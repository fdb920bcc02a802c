#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "filter/checkpoint.hpp"
#include "filter/errors.hpp"
#include "filter/harness.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::string> language;
  std::optional<std::string> pairing;
  std::optional<std::string> split;
  std::string out;
  std::string checkpoint;
  std::string inspect_path;
};

enum class OutTarget { None, DataDir, CheckpointDir, ReportPath };

// Flags override the corresponding config keys before the strict parse, so
// every validation rule sees the final values.
filter::RunConfig build_config(const CliOptions& opt, OutTarget out_target) {
  nlohmann::json top = nlohmann::json::object();
  if (!opt.config_path.empty()) {
    std::ifstream in(opt.config_path);
    if (!in) {
      throw filter::ConfigError("cannot open config: " + opt.config_path);
    }
    try {
      top = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw filter::ConfigError(opt.config_path + " is not valid JSON: " +
                                e.what());
    }
  }
  if (!top.is_object()) {
    throw filter::ConfigError("config must be a JSON object");
  }
  if (opt.seed) top["seed"] = *opt.seed;
  if (opt.mode) top["mode"] = *opt.mode;
  if (opt.language) top["language"] = *opt.language;
  if (opt.pairing) top["pairing"] = *opt.pairing;
  if (opt.split) top["eval_split"] = *opt.split;
  if (!opt.out.empty() && out_target != OutTarget::None) {
    if (top.contains("paths") && !top["paths"].is_object()) {
      throw filter::ConfigError("config.paths: expected a JSON object");
    }
    if (!top.contains("paths")) top["paths"] = nlohmann::json::object();
    switch (out_target) {
      case OutTarget::DataDir:
        top["paths"]["data_dir"] = opt.out;
        break;
      case OutTarget::CheckpointDir:
        top["paths"]["checkpoint_dir"] = opt.out;
        break;
      case OutTarget::ReportPath:
        top["paths"]["report_path"] = opt.out;
        break;
      case OutTarget::None:
        break;
    }
  }
  return filter::parse_run_config(top.dump());
}

void add_common_flags(CLI::App* cmd, CliOptions* opt, const char* out_help) {
  cmd->add_option("--config", opt->config_path,
                  "JSON run config; omitted keys take their defaults");
  cmd->add_option("--seed", opt->seed, "Override the root seed");
  if (out_help) cmd->add_option("--out", opt->out, out_help);
}

bool print_epoch(const filter::FilterModel&, const filter::EpochStats& s) {
  std::printf("epoch %3d  loss_s %.6f", s.epoch, s.loss_s);
  if (s.loss_t) std::printf("  loss_t %.6f", *s.loss_t);
  if (s.loss_kl) std::printf("  loss_kl %.6f", *s.loss_kl);
  std::printf("\n");
  return true;
}

void cmd_generate(const CliOptions& opt) {
  filter::RunConfig cfg = build_config(opt, OutTarget::DataDir);
  filter::Dataset data = filter::run_generate(cfg);
  int train = 0, dev = 0, test = 0;
  for (const auto& ex : data.examples) {
    if (ex.split == "train") ++train;
    else if (ex.split == "dev") ++dev;
    else ++test;
  }
  std::printf("wrote %s: %d train, %d dev, %d test (task %s, seed %llu)\n",
              cfg.paths.data_dir.c_str(), train, dev, test,
              filter::to_string(cfg.task).c_str(),
              static_cast<unsigned long long>(cfg.seed));
  if (data.noised_tokens > 0) {
    std::printf("translator noise touched %d tokens\n", data.noised_tokens);
  }
  if (data.regenerated_spans > 0) {
    std::printf("re-drew %d spans for contiguity\n", data.regenerated_spans);
  }
}

void cmd_train(const CliOptions& opt) {
  filter::RunConfig cfg = build_config(opt, OutTarget::CheckpointDir);
  filter::TrainArtifacts art = filter::run_train(cfg, print_epoch);
  std::printf("teacher checkpoint: %s\n", art.teacher_checkpoint.c_str());
  if (!art.student_checkpoint.empty()) {
    std::printf("soft labels: %s\n", art.soft_labels.c_str());
    std::printf("student checkpoint: %s\n", art.student_checkpoint.c_str());
  }
}

void cmd_eval(const CliOptions& opt) {
  filter::RunConfig cfg = build_config(opt, OutTarget::ReportPath);
  filter::MetricsReport report = filter::run_eval(cfg, opt.checkpoint);
  std::fputs(filter::format_report(report).c_str(), stdout);
  std::printf("report written to %s\n", cfg.paths.report_path.c_str());
}

void cmd_grid(const CliOptions& opt) {
  filter::RunConfig cfg = build_config(opt, OutTarget::ReportPath);
  filter::GridResult grid = filter::run_grid(cfg, print_epoch);
  std::fputs(filter::format_grid(grid).c_str(), stdout);
  filter::write_grid(grid, cfg.paths.report_path);
  std::printf("grid written to %s\n", cfg.paths.report_path.c_str());
}

void cmd_softlabels(const CliOptions& opt) {
  filter::RunConfig cfg = build_config(opt, OutTarget::None);
  std::string out = opt.out;
  filter::run_softlabels(cfg, opt.checkpoint, out);
  if (out.empty()) out = cfg.paths.checkpoint_dir + "/soft_labels.jsonl";
  std::printf("soft labels written to %s\n", out.c_str());
}

void cmd_inspect(const CliOptions& opt) {
  filter::CheckpointMeta meta = filter::read_checkpoint_meta(opt.inspect_path);
  const filter::FilterConfig& cfg = meta.config;
  std::printf("phase: %s\n", meta.phase.c_str());
  std::printf("seed: %llu\n", static_cast<unsigned long long>(meta.seed));
  std::printf("task: %s\n", filter::to_string(cfg.task).c_str());
  std::printf("layers: %d (m_local %d, k_fuse %d)\n", cfg.encoder.n_layers,
              cfg.m_local, cfg.k_fuse);
  std::printf("d_model: %d  n_heads: %d  d_ff: %d  max_positions: %d\n",
              cfg.encoder.d_model, cfg.encoder.n_heads, cfg.encoder.d_ff,
              cfg.encoder.max_positions);
  std::printf("vocab: %d  classes: %d  tags: %d  max_answer_len: %d\n",
              cfg.encoder.vocab_size, cfg.n_classes, cfg.n_tags,
              cfg.max_answer_len);
  std::printf("parameters: %llu tensors, %llu values\n",
              static_cast<unsigned long long>(meta.parameter_count),
              static_cast<unsigned long long>(meta.value_count));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-lingual fusion trainer on a synthetic bilingual corpus"};
  app.require_subcommand(1);

  CliOptions opt;

  CLI::App* generate =
      app.add_subcommand("generate", "Generate the bilingual dataset");
  add_common_flags(generate, &opt, "Dataset directory");

  CLI::App* train = app.add_subcommand(
      "train", "Train per the configured mode and write checkpoints");
  add_common_flags(train, &opt, "Checkpoint directory");
  train->add_option("--mode", opt.mode,
                    "translate-train-baseline | concat-baseline | filter | "
                    "filter+self-teaching");

  CLI::App* eval =
      app.add_subcommand("eval", "Evaluate a checkpoint and write a report");
  add_common_flags(eval, &opt, "Report path");
  eval->add_option("--mode", opt.mode, "Mode whose checkpoint to pick");
  eval->add_option("--checkpoint", opt.checkpoint,
                   "Checkpoint path (default: per mode)");
  eval->add_option("--language", opt.language, "source | target | all");
  eval->add_option("--pairing", opt.pairing, "translation | self");
  eval->add_option("--split", opt.split, "dev | test");

  CLI::App* grid = app.add_subcommand(
      "grid", "Train the m_local x k_fuse grid and report dev metrics");
  add_common_flags(grid, &opt, "Grid report path");

  CLI::App* softlabels = app.add_subcommand(
      "softlabels", "Write a teacher's soft labels for the train split");
  add_common_flags(softlabels, &opt, "Soft label path");
  softlabels->add_option("--checkpoint", opt.checkpoint,
                         "Teacher checkpoint (default: checkpoint_dir)");

  CLI::App* inspect =
      app.add_subcommand("inspect", "Print checkpoint metadata");
  inspect->add_option("checkpoint", opt.inspect_path, "Checkpoint path")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (generate->parsed()) cmd_generate(opt);
    if (train->parsed()) cmd_train(opt);
    if (eval->parsed()) cmd_eval(opt);
    if (grid->parsed()) cmd_grid(opt);
    if (softlabels->parsed()) cmd_softlabels(opt);
    if (inspect->parsed()) cmd_inspect(opt);
    return 0;
  } catch (const filter::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const filter::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const filter::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
