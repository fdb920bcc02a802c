#include "filter/harness.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "config_io.hpp"
#include "filter/checkpoint.hpp"
#include "filter/errors.hpp"

namespace fs = std::filesystem;

namespace filter {

const std::vector<int> kGridLocalLayers = {0, 1, 2, 4};
const std::vector<int> kGridFuseLayers = {1, 2, 4, 6};

Mode mode_from_string(const std::string& name) {
  if (name == "translate-train-baseline") return Mode::TranslateTrain;
  if (name == "concat-baseline") return Mode::ConcatBaseline;
  if (name == "filter") return Mode::Filter;
  if (name == "filter+self-teaching") return Mode::FilterSelfTeaching;
  throw ConfigError(
      "unknown mode '" + name +
      "'; expected translate-train-baseline, concat-baseline, filter or "
      "filter+self-teaching");
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::TranslateTrain:
      return "translate-train-baseline";
    case Mode::ConcatBaseline:
      return "concat-baseline";
    case Mode::Filter:
      return "filter";
    case Mode::FilterSelfTeaching:
      return "filter+self-teaching";
  }
  throw ShapeError("to_string: bad mode");
}

RunConfig default_run_config(Task task) {
  RunConfig cfg;
  cfg.task = task;
  cfg.model.task = task;
  cfg.corpus.task = task;
  cfg.train.task = task;
  cfg.train.seed = cfg.seed;
  cfg.train.lambda_weight = default_lambda(task);
  switch (task) {
    case Task::Classification:
      cfg.model.m_local = 1;
      cfg.model.k_fuse = 1;
      break;
    case Task::Tagging:
      cfg.model.m_local = 2;
      cfg.model.k_fuse = 1;
      break;
    case Task::Span:
      cfg.model.m_local = 1;
      cfg.model.k_fuse = 4;
      break;
  }
  if (task == Task::Span) {
    cfg.model.max_answer_len = cfg.corpus.max_answer_len;
  }
  return cfg;
}

void apply_mode(RunConfig* cfg) {
  const int layers = cfg->model.encoder.n_layers;
  switch (cfg->mode) {
    case Mode::TranslateTrain:
      cfg->model.m_local = layers;
      cfg->model.k_fuse = 0;
      break;
    case Mode::ConcatBaseline:
      cfg->model.m_local = 0;
      cfg->model.k_fuse = layers;
      break;
    case Mode::Filter:
    case Mode::FilterSelfTeaching:
      break;
  }
}

namespace {

using detail::json_double;
using detail::json_int;
using detail::json_string;
using detail::json_u64;
using detail::require_keys;

int geti(const nlohmann::json& obj, const char* key, int fallback,
         const std::string& where) {
  return static_cast<int>(json_int(obj, key, fallback, where));
}

void parse_corpus_section(const nlohmann::json& obj, CorpusConfig* cfg) {
  const std::string where = "config.corpus";
  require_keys(obj,
               {"n_examples", "noise_rate", "min_premise", "max_premise",
                "min_hypothesis", "max_hypothesis", "min_body", "max_body",
                "min_context", "max_context", "max_answer_len"},
               where);
  cfg->n_examples = geti(obj, "n_examples", cfg->n_examples, where);
  cfg->noise_rate = json_double(obj, "noise_rate", cfg->noise_rate, where);
  cfg->min_premise = geti(obj, "min_premise", cfg->min_premise, where);
  cfg->max_premise = geti(obj, "max_premise", cfg->max_premise, where);
  cfg->min_hypothesis = geti(obj, "min_hypothesis", cfg->min_hypothesis, where);
  cfg->max_hypothesis = geti(obj, "max_hypothesis", cfg->max_hypothesis, where);
  cfg->min_body = geti(obj, "min_body", cfg->min_body, where);
  cfg->max_body = geti(obj, "max_body", cfg->max_body, where);
  cfg->min_context = geti(obj, "min_context", cfg->min_context, where);
  cfg->max_context = geti(obj, "max_context", cfg->max_context, where);
  cfg->max_answer_len = geti(obj, "max_answer_len", cfg->max_answer_len, where);
}

void parse_model_section(const nlohmann::json& obj, FilterConfig* cfg) {
  const std::string where = "config.model";
  require_keys(obj,
               {"vocab_size", "d_model", "n_heads", "d_ff", "max_positions",
                "n_layers", "m_local", "k_fuse", "n_classes", "n_tags",
                "max_answer_len"},
               where);
  cfg->encoder.vocab_size =
      geti(obj, "vocab_size", cfg->encoder.vocab_size, where);
  cfg->encoder.d_model = geti(obj, "d_model", cfg->encoder.d_model, where);
  cfg->encoder.n_heads = geti(obj, "n_heads", cfg->encoder.n_heads, where);
  cfg->encoder.d_ff = geti(obj, "d_ff", cfg->encoder.d_ff, where);
  cfg->encoder.max_positions =
      geti(obj, "max_positions", cfg->encoder.max_positions, where);
  cfg->encoder.n_layers = geti(obj, "n_layers", cfg->encoder.n_layers, where);
  cfg->m_local = geti(obj, "m_local", cfg->m_local, where);
  cfg->k_fuse = geti(obj, "k_fuse", cfg->k_fuse, where);
  cfg->n_classes = geti(obj, "n_classes", cfg->n_classes, where);
  cfg->n_tags = geti(obj, "n_tags", cfg->n_tags, where);
  cfg->max_answer_len =
      geti(obj, "max_answer_len", cfg->max_answer_len, where);
}

void parse_train_section(const nlohmann::json& obj, TrainConfig* cfg) {
  const std::string where = "config.train";
  require_keys(obj, {"lambda_weight", "learning_rate", "batch_size", "epochs"},
               where);
  cfg->lambda_weight =
      json_double(obj, "lambda_weight", cfg->lambda_weight, where);
  cfg->learning_rate =
      json_double(obj, "learning_rate", cfg->learning_rate, where);
  cfg->batch_size = geti(obj, "batch_size", cfg->batch_size, where);
  cfg->epochs = geti(obj, "epochs", cfg->epochs, where);
}

void parse_paths_section(const nlohmann::json& obj, Paths* paths) {
  const std::string where = "config.paths";
  require_keys(obj, {"data_dir", "checkpoint_dir", "report_path"}, where);
  paths->data_dir = json_string(obj, "data_dir", paths->data_dir, where);
  paths->checkpoint_dir =
      json_string(obj, "checkpoint_dir", paths->checkpoint_dir, where);
  paths->report_path =
      json_string(obj, "report_path", paths->report_path, where);
}

std::string join(const std::string& dir, const char* name) {
  return (fs::path(dir) / name).string();
}

void require_matching_model(const FilterConfig& stored,
                            const FilterConfig& wanted,
                            const std::string& path) {
  if (stored == wanted) return;
  std::ostringstream msg;
  msg << "checkpoint " << path << " was trained with a different model"
      << " configuration (stored m_local=" << stored.m_local
      << " k_fuse=" << stored.k_fuse << " task=" << to_string(stored.task)
      << ", requested m_local=" << wanted.m_local
      << " k_fuse=" << wanted.k_fuse << " task=" << to_string(wanted.task)
      << ")";
  throw ConfigError(msg.str());
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  nlohmann::json top;
  try {
    top = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  require_keys(top,
               {"task", "seed", "mode", "language", "eval_split", "pairing",
                "model", "train", "corpus", "paths"},
               "config");

  const Task task =
      task_from_string(json_string(top, "task", "classification", "config"));
  RunConfig cfg = default_run_config(task);
  cfg.seed = json_u64(top, "seed", cfg.seed, "config");
  cfg.train.seed = cfg.seed;
  cfg.mode =
      mode_from_string(json_string(top, "mode", to_string(cfg.mode), "config"));
  cfg.language = json_string(top, "language", cfg.language, "config");
  cfg.eval_split = json_string(top, "eval_split", cfg.eval_split, "config");
  cfg.pairing = pairing_from_string(
      json_string(top, "pairing", to_string(cfg.pairing), "config"));

  if (top.contains("corpus")) parse_corpus_section(top["corpus"], &cfg.corpus);
  // The decode window tracks the corpus answer bound unless the model
  // section pins it explicitly.
  if (task == Task::Span) cfg.model.max_answer_len = cfg.corpus.max_answer_len;
  if (top.contains("model")) parse_model_section(top["model"], &cfg.model);
  if (top.contains("train")) parse_train_section(top["train"], &cfg.train);
  if (top.contains("paths")) parse_paths_section(top["paths"], &cfg.paths);

  if (cfg.mode == Mode::TranslateTrain || cfg.mode == Mode::ConcatBaseline) {
    const bool pinned = top.contains("model") &&
                        (top["model"].contains("m_local") ||
                         top["model"].contains("k_fuse"));
    RunConfig forced = cfg;
    apply_mode(&forced);
    if (pinned && (forced.model.m_local != cfg.model.m_local ||
                   forced.model.k_fuse != cfg.model.k_fuse)) {
      throw ConfigError("mode " + to_string(cfg.mode) +
                        " fixes m_local/k_fuse; drop them from config.model");
    }
  }
  apply_mode(&cfg);

  if (cfg.language != "source" && cfg.language != "target" &&
      cfg.language != "all") {
    throw ConfigError("language must be source, target or all");
  }
  if (cfg.eval_split != "dev" && cfg.eval_split != "test") {
    throw ConfigError("eval_split must be dev or test");
  }
  validate(cfg.model);
  validate(cfg.train);
  validate(cfg.corpus);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str());
}

Dataset run_generate(const RunConfig& cfg) {
  Dataset data = generate_dataset(cfg.corpus, cfg.seed);
  fs::create_directories(cfg.paths.data_dir);
  write_dataset(data, cfg.paths.data_dir);
  return data;
}

TrainArtifacts run_train(const RunConfig& cfg, const EpochCallback& on_epoch) {
  Dataset data = load_dataset(cfg.paths.data_dir);
  if (data.config.task != cfg.task) {
    throw ConfigError("dataset at " + cfg.paths.data_dir + " holds task " +
                      to_string(data.config.task) + ", config wants " +
                      to_string(cfg.task));
  }
  fs::create_directories(cfg.paths.checkpoint_dir);

  TrainArtifacts art;
  art.teacher_checkpoint = join(cfg.paths.checkpoint_dir, "teacher.ckpt");
  art.teacher_log = join(cfg.paths.checkpoint_dir, "teacher_log.csv");

  TrainResult teacher = train_teacher(data, cfg.model, cfg.train, on_epoch);
  save_checkpoint(art.teacher_checkpoint, *teacher.model, cfg.seed, "teacher");
  write_loss_log(teacher.log, art.teacher_log);
  art.final_checkpoint = art.teacher_checkpoint;

  if (cfg.mode == Mode::FilterSelfTeaching) {
    art.soft_labels = join(cfg.paths.checkpoint_dir, "soft_labels.jsonl");
    art.student_checkpoint = join(cfg.paths.checkpoint_dir, "student.ckpt");
    art.student_log = join(cfg.paths.checkpoint_dir, "student_log.csv");

    SoftLabelSet soft = generate_soft_labels(*teacher.model, data);
    write_soft_labels(soft, art.soft_labels);
    TrainResult student =
        train_student(data, soft, cfg.model, cfg.train, on_epoch);
    save_checkpoint(art.student_checkpoint, *student.model, cfg.seed,
                    "student");
    write_loss_log(student.log, art.student_log);
    art.final_checkpoint = art.student_checkpoint;
  }
  return art;
}

MetricsReport run_eval(const RunConfig& cfg,
                       const std::string& checkpoint_path) {
  std::string path = checkpoint_path;
  if (path.empty()) {
    path = join(cfg.paths.checkpoint_dir,
                cfg.mode == Mode::FilterSelfTeaching ? "student.ckpt"
                                                     : "teacher.ckpt");
  }
  LoadedCheckpoint ckpt = load_checkpoint(path);
  require_matching_model(ckpt.meta.config, cfg.model, path);

  Dataset data = load_dataset(cfg.paths.data_dir);
  if (data.config.task != cfg.task) {
    throw ConfigError("dataset at " + cfg.paths.data_dir + " holds task " +
                      to_string(data.config.task) + ", config wants " +
                      to_string(cfg.task));
  }
  MetricsReport report =
      evaluate(*ckpt.model, data, cfg.eval_split, cfg.language, cfg.pairing);
  write_report(report, cfg.paths.report_path);
  return report;
}

void run_softlabels(const RunConfig& cfg, const std::string& checkpoint_path,
                    const std::string& out_path) {
  std::string path = checkpoint_path;
  if (path.empty()) path = join(cfg.paths.checkpoint_dir, "teacher.ckpt");
  std::string out = out_path;
  if (out.empty()) out = join(cfg.paths.checkpoint_dir, "soft_labels.jsonl");

  LoadedCheckpoint ckpt = load_checkpoint(path);
  require_matching_model(ckpt.meta.config, cfg.model, path);
  Dataset data = load_dataset(cfg.paths.data_dir);
  if (data.config.task != cfg.task) {
    throw ConfigError("dataset at " + cfg.paths.data_dir + " holds task " +
                      to_string(data.config.task) + ", config wants " +
                      to_string(cfg.task));
  }
  write_soft_labels(generate_soft_labels(*ckpt.model, data), out);
}

GridResult run_grid(const RunConfig& cfg, const EpochCallback& on_epoch) {
  if (cfg.mode != Mode::Filter) {
    throw ConfigError("the grid varies m_local/k_fuse; mode must be filter");
  }
  Dataset data = load_dataset(cfg.paths.data_dir);
  if (data.config.task != cfg.task) {
    throw ConfigError("dataset at " + cfg.paths.data_dir + " holds task " +
                      to_string(data.config.task) + ", config wants " +
                      to_string(cfg.task));
  }

  GridResult grid;
  grid.task = cfg.task;
  grid.seed = cfg.seed;
  for (int m : kGridLocalLayers) {
    for (int k : kGridFuseLayers) {
      GridCell cell;
      cell.m_local = m;
      cell.k_fuse = k;
      if (m + k > cfg.model.encoder.n_layers) {
        cell.skipped = true;
        grid.cells.push_back(cell);
        continue;
      }
      FilterConfig model_cfg = cfg.model;
      model_cfg.m_local = m;
      model_cfg.k_fuse = k;
      TrainResult teacher =
          train_teacher(data, model_cfg, cfg.train, on_epoch);
      MetricsReport report =
          evaluate(*teacher.model, data, "dev", "all", cfg.pairing);
      cell.dev = report.aggregate;
      cell.gap = report.gap;
      grid.cells.push_back(cell);
    }
  }
  return grid;
}

std::string format_grid(const GridResult& grid) {
  const std::string metric = primary_metric(grid.task);
  std::ostringstream out;
  out << "dev " << metric << " by stage split (rows m_local, cols k_fuse)\n";
  char cell[64];
  std::snprintf(cell, sizeof cell, "%6s", "m\\k");
  out << cell;
  for (int k : kGridFuseLayers) {
    std::snprintf(cell, sizeof cell, "  %8d", k);
    out << cell;
  }
  out << '\n';
  std::size_t idx = 0;
  for (int m : kGridLocalLayers) {
    std::snprintf(cell, sizeof cell, "%6d", m);
    out << cell;
    for (std::size_t j = 0; j < kGridFuseLayers.size(); ++j, ++idx) {
      const GridCell& c = grid.cells[idx];
      if (c.skipped) {
        std::snprintf(cell, sizeof cell, "  %8s", "skipped");
      } else {
        std::snprintf(cell, sizeof cell, "  %8.4f", c.dev.at(metric));
      }
      out << cell;
    }
    out << '\n';
  }
  return out.str();
}

void write_grid(const GridResult& grid, const std::string& path) {
  nlohmann::json cells = nlohmann::json::array();
  for (const GridCell& c : grid.cells) {
    nlohmann::json j;
    j["m_local"] = c.m_local;
    j["k_fuse"] = c.k_fuse;
    j["skipped"] = c.skipped;
    j["dev"] = nullptr;
    j["transfer_gap"] = nullptr;
    if (!c.skipped) j["dev"] = c.dev;
    if (c.gap) j["transfer_gap"] = *c.gap;
    cells.push_back(j);
  }
  nlohmann::json j;
  j["task"] = to_string(grid.task);
  j["seed"] = grid.seed;
  j["primary_metric"] = primary_metric(grid.task);
  j["cells"] = cells;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open grid report for writing: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw DataError("failed writing grid report: " + path);
}

}  // namespace filter
