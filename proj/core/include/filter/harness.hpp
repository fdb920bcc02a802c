#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "filter/corpus.hpp"
#include "filter/eval.hpp"
#include "filter/model.hpp"
#include "filter/train.hpp"

namespace filter {

// Structural presets over the same architecture: translate-train keeps the
// streams separate for the whole stack (m = L, k = 0), the concat baseline
// joins them everywhere (m = 0, k = L), filter uses the configured split,
// and self-teaching adds the distillation phase on top of filter.
enum class Mode { TranslateTrain, ConcatBaseline, Filter, FilterSelfTeaching };

Mode mode_from_string(const std::string& name);  // ConfigError
std::string to_string(Mode mode);

struct Paths {
  std::string data_dir = "data";
  std::string checkpoint_dir = "checkpoints";
  std::string report_path = "report.json";
};

// One run, fully described. Everything an artifact depends on lives here;
// a (config, seed, dataset) triple reproduces every byte.
struct RunConfig {
  Task task = Task::Classification;
  std::uint64_t seed = 42;
  Mode mode = Mode::Filter;
  std::string language = "all";  // eval filter: source | target | all
  std::string eval_split = "dev";
  Pairing pairing = Pairing::Translation;
  FilterConfig model;
  TrainConfig train;
  CorpusConfig corpus;
  Paths paths;
};

// Task-dependent defaults: stage split (1,1) for classification, (2,1) for
// tagging, (1,4) for span; lambda via default_lambda; the span decode
// window follows the corpus answer bound.
RunConfig default_run_config(Task task);

// Strict parse over default_run_config: nested sections model / train /
// corpus / paths plus scalar keys. Unknown keys anywhere are a hard
// ConfigError, as is an explicit m_local/k_fuse that contradicts a
// baseline mode.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Overrides m_local/k_fuse for the baseline modes; no-op for the rest.
void apply_mode(RunConfig* cfg);

// --- Pipeline steps ---------------------------------------------------------

// Generates and writes the dataset to paths.data_dir.
Dataset run_generate(const RunConfig& cfg);

struct TrainArtifacts {
  std::string teacher_checkpoint;
  std::string teacher_log;
  std::string soft_labels;  // self-teaching only, else empty
  std::string student_checkpoint;
  std::string student_log;
  std::string final_checkpoint;  // the phase eval should load
};

TrainArtifacts run_train(const RunConfig& cfg,
                         const EpochCallback& on_epoch = {});

// Loads the checkpoint (default: the final phase of cfg.mode under
// paths.checkpoint_dir), rejects one whose stored model configuration
// differs from cfg.model, evaluates and writes paths.report_path.
MetricsReport run_eval(const RunConfig& cfg,
                       const std::string& checkpoint_path = "");

// Regenerates soft labels from a teacher checkpoint.
void run_softlabels(const RunConfig& cfg, const std::string& checkpoint_path,
                    const std::string& out_path);

// --- Stage-split grid -------------------------------------------------------

struct GridCell {
  int m_local = 0;
  int k_fuse = 0;
  bool skipped = false;  // m + k exceeds the layer count
  std::map<std::string, double> dev;  // aggregate dev metrics
  std::optional<double> gap;
};

struct GridResult {
  Task task = Task::Classification;
  std::uint64_t seed = 0;
  std::vector<GridCell> cells;  // m-major over m x k = {0,1,2,4} x {1,2,4,6}
};

extern const std::vector<int> kGridLocalLayers;
extern const std::vector<int> kGridFuseLayers;

// Trains one teacher per feasible cell on the dataset under paths.data_dir
// and records aggregate dev metrics. cfg.mode must be Filter.
GridResult run_grid(const RunConfig& cfg, const EpochCallback& on_epoch = {});

std::string format_grid(const GridResult& grid);
void write_grid(const GridResult& grid, const std::string& path);

}  // namespace filter
