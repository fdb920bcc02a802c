#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "filter/corpus.hpp"
#include "filter/model.hpp"
#include "filter/tensor.hpp"

namespace filter {

// Two-phase training. The teacher fits the gold labels of both streams
// (source only for tagging, whose target labels do not transfer); the
// student re-fits from scratch against gold labels plus the teacher's
// frozen target-stream distributions:
//
//   loss = loss_s + lambda * loss_t + (1 - lambda) * loss_kl
//
// lambda is a task property: it is zero exactly for tagging, where no
// target gold labels exist and the distillation term does all the work.

double default_lambda(Task task);  // 0.5 / 0.0 / 0.9

struct TrainConfig {
  Task task = Task::Classification;
  double lambda_weight = 0.5;
  double learning_rate = 1e-3;
  int batch_size = 16;
  int epochs = 10;
  std::uint64_t seed = 0;
};

// ConfigError on out-of-range fields or a lambda/task mismatch.
void validate(const TrainConfig& cfg);

// Gold-label loss of one stream's head output: cross entropy for
// classification, mean per-token cross entropy for tagging, the mean of
// start and end cross entropies for span. DataError when the label variant
// does not match the head's task.
Tensor task_loss(const HeadOutput& head, const Label& label);

// loss_s + lambda * loss_t + (1 - lambda) * loss_kl. Absent terms drop out;
// a term with coefficient zero is not recorded at all. ConfigError unless
// lambda is in [0, 1].
Tensor combined_loss(const Tensor& loss_s, const std::optional<Tensor>& loss_t,
                     const std::optional<Tensor>& loss_kl, double lambda);

// KL(teacher distribution || head softmax), composed like task_loss: one
// divergence for classification, a per-token mean for tagging, the mean of
// start and end divergences for span. The stored distribution is a plain
// constant; gradient reaches only the head logits.
Tensor distill_loss(const HeadOutput& head, const TaskProbabilities& soft);

// Adam with bias correction. step() applies whatever gradients the owned
// parameters currently carry (absent means zero), then clears them, so a
// batch is "accumulate backward passes, then step".
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<Tensor> params, double learning_rate,
                         double beta1 = 0.9, double beta2 = 0.999,
                         double epsilon = 1e-8);

  void step();
  int steps() const { return t_; }

  const std::vector<double>& first_moment(int slot) const;
  const std::vector<double>& second_moment(int slot) const;

 private:
  struct Slot {
    Tensor param;
    std::vector<double> m;
    std::vector<double> v;
  };

  std::vector<Slot> slots_;
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double loss_s = 0.0;
  std::optional<double> loss_t;
  std::optional<double> loss_kl;
};

// Invoked after each epoch; return false to stop early.
using EpochCallback = std::function<bool(const FilterModel&, const EpochStats&)>;

// Teacher target-stream distributions for the train split, keyed by
// example id.
struct SoftLabelSet {
  Task task = Task::Classification;
  std::map<std::int64_t, TaskProbabilities> by_id;
};

// Runs the teacher over every train example (no tape, parameters frozen)
// and collects the target-stream probabilities. DataError on duplicate ids.
SoftLabelSet generate_soft_labels(const FilterModel& teacher,
                                  const Dataset& data);

// One JSON object per line, {"example_id": ..., "probabilities": ...}, in
// id order; byte-stable for a fixed set. The reader re-checks that every
// distribution sums to 1 within 1e-9.
void write_soft_labels(const SoftLabelSet& soft, const std::string& path);
SoftLabelSet read_soft_labels(const std::string& path, Task task);

struct TrainResult {
  std::unique_ptr<FilterModel> model;
  std::vector<EpochStats> log;
};

// Both entry points derive the model init and the batch order from
// cfg.seed; the student uses different streams so it never shares the
// teacher's initialization.
TrainResult train_teacher(const Dataset& data, const FilterConfig& model_cfg,
                          const TrainConfig& cfg,
                          const EpochCallback& on_epoch = {});

// DataError when a train example has no soft label. Teacher parameters are
// not involved; the stored distributions enter the tape as constants.
TrainResult train_student(const Dataset& data, const SoftLabelSet& soft,
                          const FilterConfig& model_cfg,
                          const TrainConfig& cfg,
                          const EpochCallback& on_epoch = {});

// CSV with header epoch,loss_s,loss_t,loss_kl; absent components leave
// their cell empty.
void write_loss_log(const std::vector<EpochStats>& log,
                    const std::string& path);

}  // namespace filter
